//! Forward sampler of the generative process from explicit ground-truth
//! parameters, plus component matching between a ground truth and a trained
//! model. Used as the oracle for recovery and prediction checks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, GeoImage, Location, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{topic_word_prob, ModelState};
use crate::rng::{stream_rng, Stream};
use crate::statdist::Cov2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRegion {
    pub weight: f64,
    pub mu_l: [f64; 2],
    pub sigma_l: Cov2,
    /// Topic mixture.
    pub xi: Vec<f64>,
    /// `[P(x = 0), P(x = 1)]`
    pub tau: [f64; 2],
    /// Region-specific word distribution.
    pub psi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTopic {
    pub beta: Vec<f64>,
    pub mu_f: Vec<f64>,
    pub var_f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub regions: Vec<GtRegion>,
    pub topics: Vec<GtTopic>,
    pub vocab_size: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthConfig {
    pub regions: usize,
    pub topics: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub seed: u64,
    /// Spacing of the region grid in degrees and the scale of topic
    /// feature means.
    pub separation: f64,
    /// Dirichlet concentration of the topic mixtures.
    pub xi_concentration: f64,
    /// Dirichlet concentration of the topic and region word distributions.
    pub word_concentration: f64,
    /// Dirichlet concentration of the region weights.
    pub weight_concentration: f64,
}

impl GroundTruthConfig {
    pub fn new(regions: usize, topics: usize, vocab_size: usize, feature_dim: usize, seed: u64, separation: f64) -> Self {
        GroundTruthConfig {
            regions,
            topics,
            vocab_size,
            feature_dim,
            seed,
            separation,
            xi_concentration: 0.1,
            word_concentration: 0.1,
            weight_concentration: 5.0,
        }
    }
}

const SIMPLEX_TOL: f64 = 1e-9;

fn dirichlet<R: Rng>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let mut v: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[rng.random_range(0..n)] = 1.0;
    }
    v
}

/// Builds a random ground truth: region location means on a jittered grid
/// with spacing `separation`, sparse Dirichlet draws for every simplex, and
/// topic feature means drawn at scale `separation`.
pub fn make_ground_truth(cfg: &GroundTruthConfig) -> Result<GroundTruthModel> {
    let (r_n, k_n, w_n, d) = (cfg.regions, cfg.topics, cfg.vocab_size, cfg.feature_dim);
    if r_n == 0 || k_n == 0 || w_n == 0 || d == 0 {
        return Err(Error::InvalidArgument("R, K, W and d must be positive".into()));
    }
    for (name, v) in [
        ("xi_concentration", cfg.xi_concentration),
        ("word_concentration", cfg.word_concentration),
        ("weight_concentration", cfg.weight_concentration),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
    }
    if !(cfg.separation >= 0.0 && cfg.separation.is_finite()) {
        return Err(Error::InvalidArgument("separation must be >= 0".into()));
    }
    let sep = cfg.separation;
    let cols = (r_n as f64).sqrt().ceil() as usize;
    let rows = r_n.div_ceil(cols);
    if (rows as f64 * 0.5 + 0.2) * sep > 80.0 || (cols as f64 * 0.5 + 0.2) * sep > 170.0 {
        return Err(Error::InvalidArgument(format!(
            "a {rows}x{cols} grid with separation {sep} does not fit on the globe"
        )));
    }

    let mut rng = stream_rng(cfg.seed, Stream::GroundTruth);
    let weights = dirichlet(cfg.weight_concentration, r_n, &mut rng);
    let spread = (sep / 10.0).max(0.05);
    let regions = (0..r_n)
        .map(|r| {
            let (row, col) = ((r / cols) as f64, (r % cols) as f64);
            let lat = (row - (rows as f64 - 1.0) / 2.0) * sep + rng.random_range(-0.2..=0.2) * sep;
            let lon = (col - (cols as f64 - 1.0) / 2.0) * sep + rng.random_range(-0.2..=0.2) * sep;
            let s1 = spread * rng.random_range(0.5..=1.0);
            let s2 = spread * rng.random_range(0.5..=1.0);
            let rho: f64 = rng.random_range(-0.5..=0.5);
            let p0: f64 = rng.random_range(0.2..=0.5);
            GtRegion {
                weight: weights[r],
                mu_l: [lat, lon],
                sigma_l: [[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]],
                xi: dirichlet(cfg.xi_concentration, k_n, &mut rng),
                tau: [p0, 1.0 - p0],
                psi: dirichlet(cfg.word_concentration, w_n, &mut rng),
            }
        })
        .collect();
    let topics = (0..k_n)
        .map(|_| GtTopic {
            beta: dirichlet(cfg.word_concentration, w_n, &mut rng),
            mu_f: (0..d)
                .map(|_| sep * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            var_f: (0..d).map(|_| rng.random_range(0.5..=1.5)).collect(),
        })
        .collect();
    let gt = GroundTruthModel {
        regions,
        topics,
        vocab_size: w_n,
        feature_dim: d,
    };
    gt.validate()?;
    Ok(gt)
}

fn is_simplex(v: &[f64], n: usize) -> bool {
    v.len() == n && v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

impl GroundTruthModel {
    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn num_topics(&self) -> usize {
        self.topics.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (k_n, w_n) = (self.topics.len(), self.vocab_size);
        let weights: Vec<f64> = self.regions.iter().map(|r| r.weight).collect();
        if !is_simplex(&weights, self.regions.len()) {
            return bad("region weights do not sum to 1".into());
        }
        for (i, r) in self.regions.iter().enumerate() {
            if !is_simplex(&r.xi, k_n) || !is_simplex(&r.psi, w_n) || !is_simplex(&r.tau, 2) {
                return bad(format!("region {i} has an invalid simplex"));
            }
            let s = r.sigma_l;
            if !(s[0][0] > 0.0 && s[1][1] > 0.0 && s[0][0] * s[1][1] - s[0][1] * s[1][0] > 0.0) {
                return bad(format!("region {i} has a degenerate covariance"));
            }
        }
        for (k, t) in self.topics.iter().enumerate() {
            if !is_simplex(&t.beta, w_n) {
                return bad(format!("topic {k} has an invalid word distribution"));
            }
            if t.mu_f.len() != self.feature_dim || t.var_f.len() != self.feature_dim || t.var_f.iter().any(|&v| !(v > 0.0)) {
                return bad(format!("topic {k} has invalid visual parameters"));
            }
        }
        Ok(())
    }

    /// Minimum pairwise distance between region location means, in degrees.
    pub fn min_region_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.regions.iter().enumerate() {
            for b in &self.regions[i + 1..] {
                best = best.min(dist2(&a.mu_l, &b.mu_l));
            }
        }
        best
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let gt: GroundTruthModel = serde_json::from_str(&text)?;
        gt.validate()?;
        Ok(gt)
    }
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub num_images: usize,
    /// Inclusive range.
    pub words_per_image: (usize, usize),
    /// Inclusive range.
    pub patches_per_image: (usize, usize),
    pub seed: u64,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
}

fn default_prefix() -> String {
    "img".to_owned()
}

impl GenSpec {
    pub fn new(num_images: usize, seed: u64) -> Self {
        GenSpec {
            num_images,
            words_per_image: (4, 12),
            patches_per_image: (4, 12),
            seed,
            id_prefix: default_prefix(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w0, w1) = self.words_per_image;
        let (p0, p1) = self.patches_per_image;
        if self.num_images == 0 {
            return Err(Error::InvalidArgument("num_images must be positive".into()));
        }
        if w0 > w1 || p0 > p1 || w1 == 0 || p1 == 0 {
            return Err(Error::InvalidArgument("per-image ranges must be nonempty and positive".into()));
        }
        Ok(())
    }
}

/// Every latent draw behind one generated image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub id: String,
    pub region: u32,
    pub patch_topics: Vec<u32>,
    /// `None` for region-specific words.
    pub word_topics: Vec<Option<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TruthLabels {
    pub images: Vec<ImageTruth>,
}

impl TruthLabels {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for t in &self.images {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut images = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            images.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(TruthLabels { images })
    }

    pub fn region_of(&self, id: &str) -> Option<u32> {
        self.images.iter().find(|t| t.id == id).map(|t| t.region)
    }
}

/// Vocabulary `w0 .. w{W-1}` shared by all generated corpora.
pub fn synthetic_vocabulary(vocab_size: usize) -> Result<Vocabulary> {
    Vocabulary::from_tokens((0..vocab_size).map(|i| format!("w{i}")).collect())
}

/// Draws a corpus by running the generative process forward.
pub fn generate_corpus(gt: &GroundTruthModel, spec: &GenSpec) -> Result<(Corpus, TruthLabels)> {
    gt.validate()?;
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Generate);
    let weighted = |p: &[f64]| WeightedIndex::new(p).map_err(|e| Error::InvalidArgument(e.to_string()));
    let region_pick = weighted(&gt.regions.iter().map(|r| r.weight).collect::<Vec<_>>())?;
    let xi_pick = gt.regions.iter().map(|r| weighted(&r.xi)).collect::<Result<Vec<_>>>()?;
    let psi_pick = gt.regions.iter().map(|r| weighted(&r.psi)).collect::<Result<Vec<_>>>()?;
    let beta_pick = gt.topics.iter().map(|t| weighted(&t.beta)).collect::<Result<Vec<_>>>()?;
    let chol: Vec<[f64; 3]> = gt
        .regions
        .iter()
        .map(|r| {
            let l00 = r.sigma_l[0][0].sqrt();
            let l10 = r.sigma_l[1][0] / l00;
            let l11 = (r.sigma_l[1][1] - l10 * l10).max(0.0).sqrt();
            [l00, l10, l11]
        })
        .collect();

    let mut images = Vec::with_capacity(spec.num_images);
    let mut truth = Vec::with_capacity(spec.num_images);
    for i in 0..spec.num_images {
        let r = region_pick.sample(&mut rng);
        let reg = &gt.regions[r];
        let (z0, z1): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let [l00, l10, l11] = chol[r];
        let lat = (reg.mu_l[0] + l00 * z0).clamp(-90.0, 90.0);
        let lon = (reg.mu_l[1] + l10 * z0 + l11 * z1).clamp(-180.0, 180.0);

        let n_patches = rng.random_range(spec.patches_per_image.0..=spec.patches_per_image.1);
        let mut patch_topics = Vec::with_capacity(n_patches);
        let mut patches = Vec::with_capacity(n_patches);
        for _ in 0..n_patches {
            let k = xi_pick[r].sample(&mut rng);
            let t = &gt.topics[k];
            patch_topics.push(k as u32);
            patches.push(
                t.mu_f
                    .iter()
                    .zip(&t.var_f)
                    .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
        }

        let n_words = rng.random_range(spec.words_per_image.0..=spec.words_per_image.1);
        let mut words = Vec::with_capacity(n_words);
        let mut word_topics = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            if rng.random_bool(reg.tau[1].clamp(0.0, 1.0)) {
                let k = xi_pick[r].sample(&mut rng);
                words.push(beta_pick[k].sample(&mut rng) as u32);
                word_topics.push(Some(k as u32));
            } else {
                words.push(psi_pick[r].sample(&mut rng) as u32);
                word_topics.push(None);
            }
        }

        let id = format!("{}{:06}", spec.id_prefix, i);
        truth.push(ImageTruth {
            id: id.clone(),
            region: r as u32,
            patch_topics,
            word_topics,
        });
        images.push(GeoImage {
            id,
            words,
            patches,
            location: Some(Location::new(lat, lon)),
        });
    }
    let corpus = Corpus {
        images,
        vocab: synthetic_vocabulary(gt.vocab_size)?,
        feature_dim: gt.feature_dim,
    };
    Ok((corpus, TruthLabels { images: truth }))
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials). Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials; column 0 is a virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Alignment of ground-truth components to learned ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMatch {
    /// `region_perm[gt region] = learned region`
    pub region_perm: Vec<usize>,
    /// `topic_perm[gt topic] = learned topic`
    pub topic_perm: Vec<usize>,
    /// Location-mean distance (degrees) of each matched region pair.
    pub region_scores: Vec<f64>,
    /// Total-variation distance of each matched topic pair's word
    /// distributions.
    pub topic_scores: Vec<f64>,
}

impl ComponentMatch {
    /// Inverse of `region_perm`: learned region → ground-truth region.
    pub fn learned_to_gt_region(&self) -> Vec<usize> {
        let mut inv = vec![0; self.region_perm.len()];
        for (g, &l) in self.region_perm.iter().enumerate() {
            inv[l] = g;
        }
        inv
    }
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Matches components given raw location means and word distributions.
pub fn match_component_params(
    gt_means: &[[f64; 2]],
    gt_betas: &[Vec<f64>],
    learned_means: &[[f64; 2]],
    learned_betas: &[Vec<f64>],
) -> Result<ComponentMatch> {
    if gt_means.len() != learned_means.len() {
        return Err(Error::SizeMismatch(format!(
            "{} ground-truth regions vs {} learned",
            gt_means.len(),
            learned_means.len()
        )));
    }
    if gt_betas.len() != learned_betas.len() {
        return Err(Error::SizeMismatch(format!(
            "{} ground-truth topics vs {} learned",
            gt_betas.len(),
            learned_betas.len()
        )));
    }
    if gt_betas.iter().chain(learned_betas).any(|b| b.len() != gt_betas[0].len()) {
        return Err(Error::SizeMismatch("word distributions differ in length".into()));
    }
    let region_cost: Vec<Vec<f64>> = gt_means
        .iter()
        .map(|g| learned_means.iter().map(|l| dist2(g, l)).collect())
        .collect();
    let topic_cost: Vec<Vec<f64>> = gt_betas
        .iter()
        .map(|g| learned_betas.iter().map(|l| total_variation(g, l)).collect())
        .collect();
    let region_perm = min_cost_assignment(&region_cost);
    let topic_perm = min_cost_assignment(&topic_cost);
    Ok(ComponentMatch {
        region_scores: region_perm.iter().enumerate().map(|(g, &l)| region_cost[g][l]).collect(),
        topic_scores: topic_perm.iter().enumerate().map(|(g, &l)| topic_cost[g][l]).collect(),
        region_perm,
        topic_perm,
    })
}

/// Aligns a trained model's regions (by location mean) and topics (by word
/// distribution) with the ground truth.
pub fn match_components(gt: &GroundTruthModel, learned: &ModelState) -> Result<ComponentMatch> {
    if gt.vocab_size != learned.vocab_size() {
        return Err(Error::SizeMismatch(format!(
            "vocabulary {} vs {}",
            gt.vocab_size,
            learned.vocab_size()
        )));
    }
    let gt_means: Vec<[f64; 2]> = gt.regions.iter().map(|r| r.mu_l).collect();
    let gt_betas: Vec<Vec<f64>> = gt.topics.iter().map(|t| t.beta.clone()).collect();
    let learned_means: Vec<[f64; 2]> = (0..learned.regions()).map(|r| learned.geo.estimate(r).mean).collect();
    let learned_betas: Vec<Vec<f64>> = (0..learned.topics())
        .map(|k| {
            (0..learned.vocab_size())
                .map(|w| topic_word_prob(&learned.counts, &learned.hyper, w, k))
                .collect()
        })
        .collect();
    match_component_params(&gt_means, &gt_betas, &learned_means, &learned_betas)
}
