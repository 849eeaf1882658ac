//! Two-stage location prediction: pick the region with the highest joint
//! content probability, then propagate the locations of the most similar
//! training images of that region, weighted by how coherent each one is
//! with the rest.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{GeoImage, Location};
use crate::error::{Error, Result};
use crate::model::{
    region_prior, visual_likelihood_region, word_likelihood_region, MixtureCounts, ModelState, WordRule,
};
use crate::rng::{stream_rng, Stream};
use crate::sampler::ln_word_patch_coupling;
use crate::statdist::{categorical_sample, jsd, log_sum_exp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Visual content only.
    Visual,
    /// Text and visual content.
    TextVisual,
}

impl Mode {
    /// Default neighbor count for the mode.
    pub fn default_neighbors(self) -> usize {
        match self {
            Mode::Visual => 8,
            Mode::TextVisual => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictOptions {
    pub mode: Mode,
    pub neighbors: usize,
    pub fold_in_sweeps: usize,
    pub seed: u64,
    /// Return the selected region's location mean instead of propagating.
    #[serde(default)]
    pub mean_location: bool,
}

impl PredictOptions {
    pub fn new(mode: Mode, seed: u64) -> Self {
        PredictOptions {
            mode,
            neighbors: mode.default_neighbors(),
            fold_in_sweeps: 50,
            seed,
            mean_location: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbors < 1 {
            return Err(Error::InvalidArgument("neighbors must be >= 1".into()));
        }
        if self.fold_in_sweeps < 1 {
            return Err(Error::InvalidArgument("fold-in sweeps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Query {
    pub words: Vec<u32>,
    pub patches: Vec<Vec<f64>>,
}

impl Query {
    pub fn is_empty(&self) -> bool {
        self.words.is_empty() && self.patches.is_empty()
    }

    /// Drops the words when predicting from visual content only.
    pub fn for_mode(&self, mode: Mode) -> Query {
        match mode {
            Mode::Visual => Query {
                words: Vec::new(),
                patches: self.patches.clone(),
            },
            Mode::TextVisual => self.clone(),
        }
    }
}

impl From<&GeoImage> for Query {
    fn from(im: &GeoImage) -> Self {
        Query {
            words: im.words.clone(),
            patches: im.patches.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    #[serde(rename = "sim")]
    pub similarity: f64,
    pub weight: f64,
    #[serde(skip)]
    pub location: Option<Location>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub location: Location,
    pub region: usize,
    pub neighbors: Vec<Neighbor>,
    pub topic_dist: Vec<f64>,
    /// The region had fewer than the requested number of images.
    pub truncated: bool,
    /// Text+visual was requested without words; visual-only was used.
    pub fell_back_to_visual: bool,
}

/// Smoothed, normalized topic counts `(n_k + a) / Σ (n_k + a)`.
pub fn topic_dist_from_counts(counts: &[f64], a: f64) -> Vec<f64> {
    let total: f64 = counts.iter().map(|n| n + a).sum();
    counts.iter().map(|n| (n + a) / total).collect()
}

pub fn image_topic_dist(model: &ModelState, image_id: &str) -> Result<Vec<f64>> {
    let img = model
        .images
        .iter()
        .find(|im| im.id == image_id)
        .ok_or_else(|| Error::UnknownImage(image_id.to_owned()))?;
    Ok(topic_dist_from_counts(&img.topic_counts, model.hyper.a))
}

/// Chooses the populated region maximizing the joint content score; ties
/// go to the lowest index. The flag is set when text+visual was requested
/// without words.
pub fn select_region(model: &ModelState, query: &Query, mode: Mode) -> Result<(usize, bool)> {
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let fell_back = mode == Mode::TextVisual && query.words.is_empty();
    if fell_back {
        log::warn!("text+visual prediction without words; using visual content only");
    }
    let use_words = mode == Mode::TextVisual && !query.words.is_empty();
    let mut populated = vec![false; model.regions()];
    for im in &model.images {
        populated[im.region as usize] = true;
    }
    let mut best: Option<(usize, f64)> = None;
    for r in (0..model.regions()).filter(|&r| populated[r]) {
        let mut score = region_prior(&model.counts, &model.hyper, r).ln()
            + visual_likelihood_region(model, &query.patches, r);
        if use_words {
            score += word_likelihood_region(model, &query.words, r);
        }
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((r, score));
        }
    }
    best.map(|(r, _)| (r, fell_back))
        .ok_or_else(|| Error::InvalidArgument("model has no training images".into()))
}

/// Local counts of a query being folded in on top of frozen model counts.
struct FoldInCounts {
    region: usize,
    count_patches: bool,
    rz: Vec<u32>,
    rx: [u32; 2],
    wr: HashMap<u32, u32>,
    region_words: u32,
    wz: HashMap<(u32, u32), u32>,
    topic_words: Vec<u32>,
}

impl FoldInCounts {
    fn new(model: &ModelState, region: usize) -> Self {
        let k = model.topics();
        FoldInCounts {
            region,
            count_patches: model.hyper.mixture_counts == MixtureCounts::WordsAndPatches,
            rz: model.counts.mixture_row(region, model.hyper.mixture_counts),
            rx: model.counts.region_switch[region],
            wr: HashMap::new(),
            region_words: 0,
            wz: HashMap::new(),
            topic_words: vec![0; k],
        }
    }

    fn apply(&mut self, w: u32, z: Option<u32>, add: bool) {
        let step = |v: &mut u32| if add { *v += 1 } else { *v -= 1 };
        match z {
            None => {
                step(self.wr.entry(w).or_default());
                step(&mut self.region_words);
                step(&mut self.rx[0]);
            }
            Some(k) => {
                step(self.wz.entry((w, k)).or_default());
                step(&mut self.topic_words[k as usize]);
                step(&mut self.rz[k as usize]);
                step(&mut self.rx[1]);
            }
        }
    }

    fn apply_patch(&mut self, k: u32, add: bool) {
        if self.count_patches {
            if add {
                self.rz[k as usize] += 1;
            } else {
                self.rz[k as usize] -= 1;
            }
        }
    }

    fn word_weights(&self, model: &ModelState, w: u32, patch_topics: &[u32], out: &mut Vec<f64>) {
        let (c, h) = (&model.counts, &model.hyper);
        let r = self.region;
        let vocab = c.vocab_size as f64;
        let tot = f64::from(self.rx[0] + self.rx[1]) + h.b + h.c;
        out.clear();
        let psi = (f64::from(c.wr(w as usize, r) + self.wr.get(&w).copied().unwrap_or(0)) + h.alpha1)
            / (f64::from(c.region_words[r] + self.region_words) + vocab * h.alpha1);
        out.push(((f64::from(self.rx[0]) + h.b) / tot).ln() + psi.ln());
        for k in 0..h.topics {
            out.push((f64::from(self.rz[k]) + h.a).ln() + ln_word_patch_coupling(&self.rz, h.a, patch_topics, k));
        }
        let norm = match h.word_rule {
            WordRule::Normalized => log_sum_exp(&out[1..]).expect("finite topic weights"),
            WordRule::Literal => 0.0,
        };
        let ln_switch1 = ((f64::from(self.rx[1]) + h.c) / tot).ln();
        for k in 0..h.topics {
            let local = self.wz.get(&(w, k as u32)).copied().unwrap_or(0);
            let beta = (f64::from(c.wz(w as usize, k) + local) + h.alpha2)
                / (f64::from(c.topic_words[k] + self.topic_words[k]) + vocab * h.alpha2);
            out[1 + k] += ln_switch1 - norm + beta.ln();
        }
    }

    fn patch_weights(&self, model: &ModelState, f: &[f64], out: &mut Vec<f64>) {
        let a = model.hyper.a;
        let denom: f64 = self.rz.iter().map(|&n| f64::from(n) + a).sum();
        out.clear();
        for k in 0..model.topics() {
            out.push(((f64::from(self.rz[k]) + a) / denom).ln() + model.visual.predictive(k).ln_pdf(f));
        }
    }
}

/// Infers `P(z | q)` for an unseen query by Gibbs sampling its patch and
/// word assignments against frozen model counts in `region`. Topic counts
/// are averaged over the last half of the sweeps.
pub fn fold_in<R: Rng + ?Sized>(
    model: &ModelState,
    query: &Query,
    region: usize,
    sweeps: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if sweeps < 1 {
        return Err(Error::InvalidArgument("fold-in sweeps must be >= 1".into()));
    }
    let k_n = model.topics();
    let mut local = FoldInCounts::new(model, region);
    let mut buf = Vec::with_capacity(k_n + 1);

    let mut patch_topics = Vec::with_capacity(query.patches.len());
    for f in &query.patches {
        local.patch_weights(model, f, &mut buf);
        let k = categorical_sample(&buf, rng)? as u32;
        local.apply_patch(k, true);
        patch_topics.push(k);
    }
    let mut word_topics: Vec<Option<u32>> = Vec::with_capacity(query.words.len());
    for &w in &query.words {
        local.word_weights(model, w, &patch_topics, &mut buf);
        let o = categorical_sample(&buf, rng)?;
        let z = (o > 0).then(|| (o - 1) as u32);
        local.apply(w, z, true);
        word_topics.push(z);
    }

    let mut acc = vec![0.0; k_n];
    let keep_from = sweeps / 2;
    for s in 0..sweeps {
        for (i, f) in query.patches.iter().enumerate() {
            local.apply_patch(patch_topics[i], false);
            local.patch_weights(model, f, &mut buf);
            patch_topics[i] = categorical_sample(&buf, rng)? as u32;
            local.apply_patch(patch_topics[i], true);
        }
        for (i, &w) in query.words.iter().enumerate() {
            local.apply(w, word_topics[i], false);
            local.word_weights(model, w, &patch_topics, &mut buf);
            let o = categorical_sample(&buf, rng)?;
            let z = (o > 0).then(|| (o - 1) as u32);
            local.apply(w, z, true);
            word_topics[i] = z;
        }
        if s >= keep_from {
            for &k in &patch_topics {
                acc[k as usize] += 1.0;
            }
            for k in word_topics.iter().flatten() {
                acc[*k as usize] += 1.0;
            }
        }
    }
    let kept = (sweeps - keep_from) as f64;
    acc.iter_mut().for_each(|x| *x /= kept);
    Ok(topic_dist_from_counts(&acc, model.hyper.a))
}

/// `exp(-JSD(p, q))`, in `[1/2, 1]`.
pub fn similarity(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok((-jsd(p, q)?).exp())
}

/// Ranked training images of `region` by similarity to `query_dist`, as
/// indices into `model.images`. The flag is set when the region holds fewer
/// than `n` images.
pub fn similar_images(
    model: &ModelState,
    query_dist: &[f64],
    region: usize,
    n: usize,
) -> Result<(Vec<(usize, f64)>, bool)> {
    if n < 1 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let a = model.hyper.a;
    let mut ranked = Vec::new();
    for (i, im) in model.images.iter().enumerate() {
        if im.region as usize == region {
            let dist = topic_dist_from_counts(&im.topic_counts, a);
            ranked.push((i, similarity(query_dist, &dist)?));
        }
    }
    if ranked.is_empty() {
        return Err(Error::InvalidArgument(format!("region {region} has no images")));
    }
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1));
    let truncated = ranked.len() < n;
    ranked.truncate(n);
    Ok((ranked, truncated))
}

/// Coherence weight of each neighbor: its mean similarity to the other
/// neighbors. A lone neighbor gets weight 1.
pub fn coherence_weights(topic_dists: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = topic_dists.len();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut sims = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = similarity(&topic_dists[i], &topic_dists[j])?;
            sims[i][j] = s;
            sims[j][i] = s;
        }
    }
    Ok((0..n)
        .map(|i| sims[i].iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| s).sum::<f64>() / (n - 1) as f64)
        .collect())
}

/// Weighted mean of locations; weights must be positive.
pub fn weighted_location(locations: &[Location], weights: &[f64]) -> Location {
    let total: f64 = weights.iter().sum();
    let (lat, lon) = locations
        .iter()
        .zip(weights)
        .fold((0.0, 0.0), |(a, b), (l, w)| (a + w * l.lat, b + w * l.lon));
    Location::new(lat / total, lon / total)
}

/// Propagates neighbor locations with coherence weights; returns the
/// location and the weights.
pub fn propagate_location(neighbors: &[(Location, Vec<f64>)]) -> Result<(Location, Vec<f64>)> {
    if neighbors.is_empty() {
        return Err(Error::InvalidArgument("no neighbors to propagate from".into()));
    }
    let dists: Vec<Vec<f64>> = neighbors.iter().map(|(_, d)| d.clone()).collect();
    let weights = coherence_weights(&dists)?;
    let locs: Vec<Location> = neighbors.iter().map(|(l, _)| *l).collect();
    Ok((weighted_location(&locs, &weights), weights))
}

/// Full prediction for one query; `stream` selects the fold-in random
/// stream so batch results do not depend on evaluation order.
pub fn predict(model: &ModelState, query: &Query, opts: &PredictOptions, stream: u32) -> Result<Prediction> {
    opts.validate()?;
    let query = query.for_mode(opts.mode);
    let (region, fell_back_to_visual) = select_region(model, &query, opts.mode)?;
    let mut rng = stream_rng(opts.seed, Stream::FoldIn(stream));
    let topic_dist = fold_in(model, &query, region, opts.fold_in_sweeps, &mut rng)?;
    let (ranked, truncated) = similar_images(model, &topic_dist, region, opts.neighbors)?;
    let a = model.hyper.a;
    let inputs: Vec<(Location, Vec<f64>)> = ranked
        .iter()
        .map(|&(i, _)| {
            let im = &model.images[i];
            (im.location, topic_dist_from_counts(&im.topic_counts, a))
        })
        .collect();
    let (propagated, weights) = propagate_location(&inputs)?;
    let location = if opts.mean_location {
        let m = model.geo.estimate(region).mean;
        Location::new(m[0], m[1])
    } else {
        propagated
    };
    let neighbors = ranked
        .iter()
        .zip(&weights)
        .map(|(&(i, sim), &w)| Neighbor {
            id: model.images[i].id.clone(),
            similarity: sim,
            weight: w,
            location: Some(model.images[i].location),
        })
        .collect();
    Ok(Prediction {
        location,
        region,
        neighbors,
        topic_dist,
        truncated,
        fell_back_to_visual,
    })
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub region: usize,
    pub neighbors: Vec<Neighbor>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, p: &Prediction) -> Self {
        PredictionRecord {
            id: id.into(),
            lat: p.location.lat,
            lon: p.location.lon,
            region: p.region,
            neighbors: p.neighbors.clone(),
        }
    }

    pub fn location(&self) -> Location {
        Location::new(self.lat, self.lon)
    }
}

pub fn save_predictions(path: impl AsRef<std::path::Path>, records: &[PredictionRecord]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: impl AsRef<std::path::Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
