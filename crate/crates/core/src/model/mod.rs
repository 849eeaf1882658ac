//! Collapsed model state: hyperparameters, count matrices, sufficient
//! statistics and the closed-form probability estimates computed from them.
//!
//! Region-topic, region-word, topic-word and switch distributions are never
//! stored; each is recomputed on demand from counts plus smoothing.

mod snapshot;

pub use snapshot::{load_model, read_header, save_model, SnapshotHeader, SNAPSHOT_VERSION};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Location, Vocabulary};
use crate::error::{Error, Result};
use crate::statdist::{log_sum_exp, Cov2, StudentT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// Number of latent regions (R).
    pub regions: usize,
    /// Number of latent topics (K).
    pub topics: usize,
    /// Region-topic smoothing.
    pub a: f64,
    /// Switch prior for region-specific words (x = 0).
    pub b: f64,
    /// Switch prior for latent-topic words (x = 1).
    pub c: f64,
    /// Region-word smoothing.
    pub alpha1: f64,
    /// Topic-word smoothing.
    pub alpha2: f64,
    /// Region-importance smoothing.
    pub epsilon: f64,
    pub feature_dim: usize,
    pub var_floor: f64,
    pub dof_floor: f64,
    /// Ridge added to every region location covariance, in squared degrees.
    pub geo_reg: f64,
    pub word_rule: WordRule,
    pub mixture_counts: MixtureCounts,
}

/// How the latent-topic outcomes of a word draw are weighed against the
/// region-specific outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WordRule {
    /// The K topic weights `(C_rk + a) · coupling_k` are normalized into a
    /// topic prior before being compared with the region-specific branch.
    #[default]
    Normalized,
    /// The raw product `(C_rk + a) · coupling_k · P(w|k)` is used unchanged.
    Literal,
}

/// Which draws from a region's topic mixture are tallied when estimating it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureCounts {
    /// Latent-topic word tokens only.
    Words,
    /// Latent-topic word tokens and patch topic assignments.
    #[default]
    WordsAndPatches,
}

impl Hyperparams {
    /// Desk-scale defaults.
    pub fn new(regions: usize, topics: usize, feature_dim: usize) -> Self {
        Hyperparams {
            regions,
            topics,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            alpha1: 0.01,
            alpha2: 0.01,
            epsilon: 1.0,
            feature_dim,
            var_floor: 1e-6,
            dof_floor: 1.0,
            geo_reg: 1e-4,
            word_rule: WordRule::default(),
            mixture_counts: MixtureCounts::default(),
        }
    }

    /// Large-scale preset: 1500 regions, 100 topics.
    pub fn large_scale(feature_dim: usize) -> Self {
        Self::new(1500, 100, feature_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidHyperparams(m.to_owned()));
        if self.regions < 1 {
            return bad("regions must be >= 1");
        }
        if self.topics < 1 {
            return bad("topics must be >= 1");
        }
        if self.feature_dim < 1 {
            return bad("feature_dim must be >= 1");
        }
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("epsilon", self.epsilon),
            ("var_floor", self.var_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.dof_floor >= 1.0 && self.dof_floor.is_finite()) {
            return bad("dof_floor must be >= 1");
        }
        if !(self.geo_reg >= 0.0 && self.geo_reg.is_finite()) {
            return bad("geo_reg must be >= 0");
        }
        Ok(())
    }
}

/// Sufficient counts of the collapsed sampler. Matrices are dense and
/// row-major: `word_topic[w * K + k]`, `word_region[w * R + r]`,
/// `region_topic[r * K + k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrices {
    pub vocab_size: usize,
    pub regions: usize,
    pub topics: usize,
    pub word_topic: Vec<u32>,
    pub word_region: Vec<u32>,
    pub region_topic: Vec<u32>,
    /// Patch topic assignments per region, `region_patch_topic[r * K + k]`.
    pub region_patch_topic: Vec<u32>,
    /// `[x = 0, x = 1]` word counts per region.
    pub region_switch: Vec<[u32; 2]>,
    pub patch_topic: Vec<u32>,
    pub region_images: Vec<u32>,
    /// Column sums of `word_topic`.
    pub topic_words: Vec<u32>,
    /// Column sums of `word_region`.
    pub region_words: Vec<u32>,
}

impl CountMatrices {
    pub fn zeros(vocab_size: usize, regions: usize, topics: usize) -> Self {
        CountMatrices {
            vocab_size,
            regions,
            topics,
            word_topic: vec![0; vocab_size * topics],
            word_region: vec![0; vocab_size * regions],
            region_topic: vec![0; regions * topics],
            region_patch_topic: vec![0; regions * topics],
            region_switch: vec![[0; 2]; regions],
            patch_topic: vec![0; topics],
            region_images: vec![0; regions],
            topic_words: vec![0; topics],
            region_words: vec![0; regions],
        }
    }

    /// Tallies counts from scratch.
    pub fn recount(corpus: &Corpus, assign: &Assignments, regions: usize, topics: usize) -> Self {
        let mut c = Self::zeros(corpus.vocab.len(), regions, topics);
        for (im, a) in corpus.images.iter().zip(&assign.images) {
            let r = a.region as usize;
            c.region_images[r] += 1;
            for &k in &a.patch_topics {
                c.add_patch(r, k as usize);
            }
            for (&w, z) in im.words.iter().zip(&a.word_topics) {
                c.add_word(w as usize, r, *z);
            }
        }
        c
    }

    pub fn wz(&self, w: usize, k: usize) -> u32 {
        self.word_topic[w * self.topics + k]
    }

    pub fn wr(&self, w: usize, r: usize) -> u32 {
        self.word_region[w * self.regions + r]
    }

    pub fn rz(&self, r: usize, k: usize) -> u32 {
        self.region_topic[r * self.topics + k]
    }

    pub fn region_topic_row(&self, r: usize) -> &[u32] {
        &self.region_topic[r * self.topics..(r + 1) * self.topics]
    }

    /// Topic counts of region `r` that estimate its topic mixture.
    pub fn mixture_row_into(&self, r: usize, mode: MixtureCounts, out: &mut Vec<u32>) {
        out.clear();
        out.extend_from_slice(self.region_topic_row(r));
        if mode == MixtureCounts::WordsAndPatches {
            let row = &self.region_patch_topic[r * self.topics..(r + 1) * self.topics];
            out.iter_mut().zip(row).for_each(|(o, n)| *o += n);
        }
    }

    pub fn mixture_row(&self, r: usize, mode: MixtureCounts) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.topics);
        self.mixture_row_into(r, mode, &mut out);
        out
    }

    pub fn add_patch(&mut self, r: usize, k: usize) {
        self.patch_topic[k] += 1;
        self.region_patch_topic[r * self.topics + k] += 1;
    }

    pub fn remove_patch(&mut self, r: usize, k: usize) {
        self.patch_topic[k] -= 1;
        self.region_patch_topic[r * self.topics + k] -= 1;
    }

    pub fn num_images(&self) -> u32 {
        self.region_images.iter().sum()
    }

    /// Adds one word token in region `r`; `topic == None` means x = 0.
    pub fn add_word(&mut self, w: usize, r: usize, topic: Option<u32>) {
        match topic {
            None => {
                self.word_region[w * self.regions + r] += 1;
                self.region_words[r] += 1;
                self.region_switch[r][0] += 1;
            }
            Some(k) => {
                let k = k as usize;
                self.word_topic[w * self.topics + k] += 1;
                self.topic_words[k] += 1;
                self.region_topic[r * self.topics + k] += 1;
                self.region_switch[r][1] += 1;
            }
        }
    }

    pub fn remove_word(&mut self, w: usize, r: usize, topic: Option<u32>) {
        match topic {
            None => {
                self.word_region[w * self.regions + r] -= 1;
                self.region_words[r] -= 1;
                self.region_switch[r][0] -= 1;
            }
            Some(k) => {
                let k = k as usize;
                self.word_topic[w * self.topics + k] -= 1;
                self.topic_words[k] -= 1;
                self.region_topic[r * self.topics + k] -= 1;
                self.region_switch[r][1] -= 1;
            }
        }
    }

    /// Moves the region-indexed counts of one image's words between regions.
    pub(crate) fn shift_words(&mut self, words: &[u32], topics: &[Option<u32>], from: Option<usize>, to: Option<usize>) {
        for (&w, &z) in words.iter().zip(topics) {
            let w = w as usize;
            if let Some(r) = from {
                match z {
                    None => {
                        self.word_region[w * self.regions + r] -= 1;
                        self.region_words[r] -= 1;
                        self.region_switch[r][0] -= 1;
                    }
                    Some(k) => {
                        self.region_topic[r * self.topics + k as usize] -= 1;
                        self.region_switch[r][1] -= 1;
                    }
                }
            }
            if let Some(r) = to {
                match z {
                    None => {
                        self.word_region[w * self.regions + r] += 1;
                        self.region_words[r] += 1;
                        self.region_switch[r][0] += 1;
                    }
                    Some(k) => {
                        self.region_topic[r * self.topics + k as usize] += 1;
                        self.region_switch[r][1] += 1;
                    }
                }
            }
        }
    }
}

/// Running location sums of one region.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoSums {
    pub n: u32,
    pub sum: [f64; 2],
    /// `[Σ lat², Σ lat·lon, Σ lon²]`
    pub sum_sq: [f64; 3],
}

impl GeoSums {
    pub fn add(&mut self, l: &Location) {
        self.n += 1;
        self.sum[0] += l.lat;
        self.sum[1] += l.lon;
        self.sum_sq[0] += l.lat * l.lat;
        self.sum_sq[1] += l.lat * l.lon;
        self.sum_sq[2] += l.lon * l.lon;
    }

    pub fn remove(&mut self, l: &Location) {
        self.n -= 1;
        if self.n == 0 {
            *self = GeoSums::default();
            return;
        }
        self.sum[0] -= l.lat;
        self.sum[1] -= l.lon;
        self.sum_sq[0] -= l.lat * l.lat;
        self.sum_sq[1] -= l.lat * l.lon;
        self.sum_sq[2] -= l.lon * l.lon;
    }
}

/// Location mean and covariance of one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoEstimate {
    pub mean: [f64; 2],
    pub cov: Cov2,
    /// Number of images behind the estimate; 0 for the global fallback.
    pub n: u32,
}

impl GeoEstimate {
    /// Student-t degrees of freedom: `n - 1`, floored.
    pub fn dof(&self, dof_floor: f64) -> f64 {
        (f64::from(self.n) - 1.0).max(dof_floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGeo {
    pub sums: Vec<GeoSums>,
    pub global_mean: [f64; 2],
    pub global_cov: Cov2,
    pub geo_reg: f64,
}

impl RegionGeo {
    pub fn build(corpus: &Corpus, assign: &Assignments, regions: usize, geo_reg: f64) -> Self {
        let mut sums = vec![GeoSums::default(); regions];
        let mut all = GeoSums::default();
        for (im, a) in corpus.images.iter().zip(&assign.images) {
            if let Some(l) = &im.location {
                sums[a.region as usize].add(l);
                all.add(l);
            }
        }
        let global = estimate_from_sums(&all, geo_reg).unwrap_or(GeoEstimate {
            mean: [0.0, 0.0],
            cov: [[1.0, 0.0], [0.0, 1.0]],
            n: 0,
        });
        // A global fallback must have positive spread even for a 1-point corpus.
        let mut cov = global.cov;
        cov[0][0] = cov[0][0].max(1.0);
        cov[1][1] = cov[1][1].max(1.0);
        RegionGeo {
            sums,
            global_mean: global.mean,
            global_cov: cov,
            geo_reg,
        }
    }

    pub fn rebuild_sums(&mut self, corpus: &Corpus, assign: &Assignments) {
        self.sums.iter_mut().for_each(|s| *s = GeoSums::default());
        for (im, a) in corpus.images.iter().zip(&assign.images) {
            if let Some(l) = &im.location {
                self.sums[a.region as usize].add(l);
            }
        }
    }

    /// Current estimate for region `r`, falling back to the global corpus
    /// mean and covariance when the region is empty.
    pub fn estimate(&self, r: usize) -> GeoEstimate {
        estimate_from_sums(&self.sums[r], self.geo_reg).unwrap_or(GeoEstimate {
            mean: self.global_mean,
            cov: self.global_cov,
            n: 0,
        })
    }
}

fn estimate_from_sums(s: &GeoSums, geo_reg: f64) -> Option<GeoEstimate> {
    if s.n == 0 {
        return None;
    }
    let n = f64::from(s.n);
    let mean = [s.sum[0] / n, s.sum[1] / n];
    let mut cov = [[geo_reg, 0.0], [0.0, geo_reg]];
    if s.n > 1 {
        let d = n - 1.0;
        let xx = ((s.sum_sq[0] - n * mean[0] * mean[0]) / d).max(0.0);
        let yy = ((s.sum_sq[2] - n * mean[1] * mean[1]) / d).max(0.0);
        let xy = (s.sum_sq[1] - n * mean[0] * mean[1]) / d;
        cov = [[xx + geo_reg, xy], [xy, yy + geo_reg]];
    }
    Some(GeoEstimate { mean, cov, n: s.n })
}

/// Two-pass location mean and covariance of the images assigned to `r`,
/// with an `(n - 1)` denominator and a `geo_reg` ridge. `None` for an
/// empty region.
pub fn estimate_region_geo(
    assign: &Assignments,
    corpus: &Corpus,
    r: usize,
    geo_reg: f64,
) -> Option<GeoEstimate> {
    let locs: Vec<[f64; 2]> = corpus
        .images
        .iter()
        .zip(&assign.images)
        .filter(|(_, a)| a.region as usize == r)
        .filter_map(|(im, _)| im.location.map(|l| l.as_array()))
        .collect();
    if locs.is_empty() {
        return None;
    }
    let n = locs.len() as f64;
    let mean = [
        locs.iter().map(|l| l[0]).sum::<f64>() / n,
        locs.iter().map(|l| l[1]).sum::<f64>() / n,
    ];
    let mut cov = [[0.0; 2]; 2];
    if locs.len() > 1 {
        for l in &locs {
            let d = [l[0] - mean[0], l[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += d[i] * d[j] / (n - 1.0);
                }
            }
        }
    }
    cov[0][0] += geo_reg;
    cov[1][1] += geo_reg;
    Some(GeoEstimate {
        mean,
        cov,
        n: locs.len() as u32,
    })
}

/// Per-topic visual sufficient statistics with a diagonal covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicVisual {
    pub dim: usize,
    /// `sum[k * dim + j]`
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub global_mean: Vec<f64>,
    pub global_var: Vec<f64>,
    pub var_floor: f64,
    pub dof_floor: f64,
    #[serde(skip)]
    predictive: Vec<StudentT>,
}

impl PartialEq for TopicVisual {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.sum == other.sum
            && self.sum_sq == other.sum_sq
            && self.global_mean == other.global_mean
            && self.global_var == other.global_var
            && self.var_floor == other.var_floor
            && self.dof_floor == other.dof_floor
    }
}

impl TopicVisual {
    pub fn build(corpus: &Corpus, assign: &Assignments, hyper: &Hyperparams, patch_topic: &[u32]) -> Self {
        let d = corpus.feature_dim;
        let mut global_mean = vec![0.0; d];
        let mut global_sq = vec![0.0; d];
        let mut n = 0usize;
        for im in &corpus.images {
            for f in &im.patches {
                n += 1;
                for j in 0..d {
                    global_mean[j] += f[j];
                    global_sq[j] += f[j] * f[j];
                }
            }
        }
        let nf = n.max(1) as f64;
        let global_var = (0..d)
            .map(|j| {
                global_mean[j] /= nf;
                let v = if n > 1 {
                    (global_sq[j] - nf * global_mean[j] * global_mean[j]) / (nf - 1.0)
                } else {
                    1.0
                };
                v.max(hyper.var_floor)
            })
            .collect();
        let mut tv = TopicVisual {
            dim: d,
            sum: vec![0.0; hyper.topics * d],
            sum_sq: vec![0.0; hyper.topics * d],
            global_mean,
            global_var,
            var_floor: hyper.var_floor,
            dof_floor: hyper.dof_floor,
            predictive: Vec::new(),
        };
        tv.rebuild_sums(corpus, assign, patch_topic);
        tv
    }

    pub fn topics(&self) -> usize {
        self.sum.len() / self.dim.max(1)
    }

    pub fn rebuild_sums(&mut self, corpus: &Corpus, assign: &Assignments, patch_topic: &[u32]) {
        self.sum.iter_mut().for_each(|v| *v = 0.0);
        self.sum_sq.iter_mut().for_each(|v| *v = 0.0);
        for (im, a) in corpus.images.iter().zip(&assign.images) {
            for (f, &k) in im.patches.iter().zip(&a.patch_topics) {
                self.add(k as usize, f);
            }
        }
        self.refresh_all(patch_topic);
    }

    pub(crate) fn add(&mut self, k: usize, f: &[f64]) {
        let base = k * self.dim;
        for (j, &v) in f.iter().enumerate() {
            self.sum[base + j] += v;
            self.sum_sq[base + j] += v * v;
        }
    }

    pub(crate) fn remove(&mut self, k: usize, f: &[f64]) {
        let base = k * self.dim;
        for (j, &v) in f.iter().enumerate() {
            self.sum[base + j] -= v;
            self.sum_sq[base + j] -= v * v;
        }
    }

    /// Sample mean and floored sample variance of topic `k`, or `None`
    /// when fewer than two patches back it.
    pub fn moments(&self, k: usize, count: u32) -> Option<(Vec<f64>, Vec<f64>)> {
        if count < 2 {
            return None;
        }
        let n = f64::from(count);
        let base = k * self.dim;
        let mean: Vec<f64> = (0..self.dim).map(|j| self.sum[base + j] / n).collect();
        let var = (0..self.dim)
            .map(|j| ((self.sum_sq[base + j] - n * mean[j] * mean[j]) / (n - 1.0)).max(self.var_floor))
            .collect();
        Some((mean, var))
    }

    fn make_predictive(&self, k: usize, count: u32) -> StudentT {
        match self.moments(k, count) {
            Some((mean, var)) => StudentT::new(mean, &var, (f64::from(count) - 1.0).max(self.dof_floor)),
            None => StudentT::new(self.global_mean.clone(), &self.global_var, self.dof_floor),
        }
    }

    pub(crate) fn refresh(&mut self, k: usize, count: u32) {
        self.predictive[k] = self.make_predictive(k, count);
    }

    pub fn refresh_all(&mut self, patch_topic: &[u32]) {
        self.predictive = (0..patch_topic.len())
            .map(|k| self.make_predictive(k, patch_topic[k]))
            .collect();
    }

    /// Predictive Student-t density of topic `k`.
    pub fn predictive(&self, k: usize) -> &StudentT {
        &self.predictive[k]
    }
}

/// Latent assignments of one training image. `word_topics[i] == None`
/// marks a region-specific word (x = 0).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAssign {
    pub region: u32,
    pub patch_topics: Vec<u32>,
    pub word_topics: Vec<Option<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignments {
    pub images: Vec<ImageAssign>,
}

impl ImageAssign {
    /// Topic counts over patches and latent-topic words.
    pub fn topic_counts(&self, topics: usize) -> Vec<u32> {
        let mut n = vec![0; topics];
        for &k in &self.patch_topics {
            n[k as usize] += 1;
        }
        for k in self.word_topics.iter().flatten() {
            n[*k as usize] += 1;
        }
        n
    }
}

/// What a frozen model remembers about each training image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedImage {
    pub id: String,
    pub location: Location,
    pub region: u32,
    /// Topic counts over patches and latent-topic words, averaged over the
    /// post-burn-in sweeps.
    pub topic_counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub hyper: Hyperparams,
    pub vocab: Vocabulary,
    pub counts: CountMatrices,
    pub geo: RegionGeo,
    pub visual: TopicVisual,
    pub images: Vec<TrainedImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assign: Option<Assignments>,
}

impl ModelState {
    /// Builds a consistent state by tallying `assign` over `corpus`.
    pub fn from_assignments(corpus: &Corpus, hyper: Hyperparams, assign: Assignments) -> Result<Self> {
        hyper.validate()?;
        if hyper.feature_dim != corpus.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: hyper.feature_dim,
                got: corpus.feature_dim,
            });
        }
        if assign.images.len() != corpus.len() {
            return Err(Error::SizeMismatch(format!(
                "{} assignments for {} images",
                assign.images.len(),
                corpus.len()
            )));
        }
        for (im, a) in corpus.images.iter().zip(&assign.images) {
            let ok = (a.region as usize) < hyper.regions
                && a.patch_topics.len() == im.patches.len()
                && a.word_topics.len() == im.words.len()
                && a.patch_topics.iter().all(|&k| (k as usize) < hyper.topics)
                && a.word_topics.iter().flatten().all(|&k| (k as usize) < hyper.topics);
            if !ok {
                return Err(Error::SizeMismatch(format!("assignment of image {:?} is inconsistent", im.id)));
            }
        }
        let counts = CountMatrices::recount(corpus, &assign, hyper.regions, hyper.topics);
        let geo = RegionGeo::build(corpus, &assign, hyper.regions, hyper.geo_reg);
        let visual = TopicVisual::build(corpus, &assign, &hyper, &counts.patch_topic);
        let images = corpus
            .images
            .iter()
            .zip(&assign.images)
            .map(|(im, a)| TrainedImage {
                id: im.id.clone(),
                location: im.location.unwrap_or(Location::new(0.0, 0.0)),
                region: a.region,
                topic_counts: a.topic_counts(hyper.topics).into_iter().map(f64::from).collect(),
            })
            .collect();
        Ok(ModelState {
            hyper,
            vocab: corpus.vocab.clone(),
            counts,
            geo,
            visual,
            images,
            assign: Some(assign),
        })
    }

    pub fn regions(&self) -> usize {
        self.hyper.regions
    }

    pub fn topics(&self) -> usize {
        self.hyper.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Drops the latent assignments.
    pub fn frozen(mut self) -> Self {
        self.assign = None;
        self
    }

    pub(crate) fn rebuild_caches(&mut self) {
        self.visual.refresh_all(&self.counts.patch_topic);
    }

    /// `ln P(z = k | r)` for every topic.
    pub fn ln_region_topic(&self, r: usize) -> Vec<f64> {
        region_topic_dist(&self.counts, &self.hyper, r)
            .into_iter()
            .map(f64::ln)
            .collect()
    }

    /// `ln P(r | ε) + ln P(f | r) [+ ln P(w | r)]` for every region.
    pub fn region_content_scores(&self, words: &[u32], patches: &[Vec<f64>]) -> Vec<f64> {
        (0..self.regions())
            .map(|r| {
                region_prior(&self.counts, &self.hyper, r).ln()
                    + visual_likelihood_region(self, patches, r)
                    + word_likelihood_region(self, words, r)
            })
            .collect()
    }
}

/// Smoothed share of images in region `r`.
pub fn region_prior(counts: &CountMatrices, hyper: &Hyperparams, r: usize) -> f64 {
    let total = f64::from(counts.num_images());
    (f64::from(counts.region_images[r]) + hyper.epsilon) / (total + hyper.epsilon * hyper.regions as f64)
}

/// `P(x = s | r)` with `λ_0 = b`, `λ_1 = c`.
pub fn switch_prob(counts: &CountMatrices, hyper: &Hyperparams, r: usize, s: usize) -> f64 {
    let [c0, c1] = counts.region_switch[r];
    let lambda = if s == 0 { hyper.b } else { hyper.c };
    (f64::from(counts.region_switch[r][s]) + lambda) / (f64::from(c0 + c1) + hyper.b + hyper.c)
}

pub fn region_word_prob(counts: &CountMatrices, hyper: &Hyperparams, w: usize, r: usize) -> f64 {
    let vocab = counts.vocab_size as f64;
    (f64::from(counts.wr(w, r)) + hyper.alpha1) / (f64::from(counts.region_words[r]) + vocab * hyper.alpha1)
}

pub fn topic_word_prob(counts: &CountMatrices, hyper: &Hyperparams, w: usize, k: usize) -> f64 {
    let vocab = counts.vocab_size as f64;
    (f64::from(counts.wz(w, k)) + hyper.alpha2) / (f64::from(counts.topic_words[k]) + vocab * hyper.alpha2)
}

pub fn region_topic_prob(counts: &CountMatrices, hyper: &Hyperparams, r: usize, k: usize) -> f64 {
    let row = counts.mixture_row(r, hyper.mixture_counts);
    let row_total: u32 = row.iter().sum();
    (f64::from(row[k]) + hyper.a) / (f64::from(row_total) + hyper.topics as f64 * hyper.a)
}

/// `P(z | r)` for every topic.
pub fn region_topic_dist(counts: &CountMatrices, hyper: &Hyperparams, r: usize) -> Vec<f64> {
    let row = counts.mixture_row(r, hyper.mixture_counts);
    let denom = f64::from(row.iter().sum::<u32>()) + hyper.topics as f64 * hyper.a;
    row.iter().map(|&n| (f64::from(n) + hyper.a) / denom).collect()
}

/// `ln P(w | r)`: each token mixes the region-specific word distribution
/// and the region's topic mixture through the switch.
pub fn word_likelihood_region(state: &ModelState, words: &[u32], r: usize) -> f64 {
    if words.is_empty() {
        return 0.0;
    }
    let (counts, hyper) = (&state.counts, &state.hyper);
    let p0 = switch_prob(counts, hyper, r, 0);
    let p1 = switch_prob(counts, hyper, r, 1);
    let xi = region_topic_dist(counts, hyper, r);
    words
        .iter()
        .map(|&w| {
            let w = w as usize;
            let topical: f64 = xi
                .iter()
                .enumerate()
                .map(|(k, x)| topic_word_prob(counts, hyper, w, k) * x)
                .sum();
            (p0 * region_word_prob(counts, hyper, w, r) + p1 * topical).ln()
        })
        .sum()
}

/// `ln P(f | r)`: each patch is a mixture over topics of the topic
/// predictive Student-t densities, weighted by `P(z | r)`.
pub fn visual_likelihood_region(state: &ModelState, patches: &[Vec<f64>], r: usize) -> f64 {
    if patches.is_empty() {
        return 0.0;
    }
    let ln_xi = state.ln_region_topic(r);
    let mut buf = vec![0.0; ln_xi.len()];
    patches
        .iter()
        .map(|f| {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = state.visual.predictive(k).ln_pdf(f) + ln_xi[k];
            }
            log_sum_exp(&buf).expect("finite mixture weights")
        })
        .sum()
}
