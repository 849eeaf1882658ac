//! Collapsed Gibbs training.
//!
//! One sweep visits every image in corpus order and resamples, in turn, its
//! region, the topic of each patch, and the (switch, topic) pair of each
//! word. Every step removes the item's own contribution from the counts
//! before scoring and adds it back for the drawn outcome.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Location};
use crate::error::{Error, Result};
use crate::model::{
    region_prior, region_topic_dist, region_word_prob, switch_prob, topic_word_prob,
    visual_likelihood_region, word_likelihood_region, Assignments, CountMatrices, GeoEstimate,
    Hyperparams, ImageAssign, ModelState, WordRule,
};
use crate::rng::{stream_rng, Stream};
use crate::statdist::{categorical_sample, log_sum_exp, mvn2_logpdf, mvt2_logpdf};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub sweeps: usize,
    /// Sweeps discarded before per-image topic counts are averaged.
    pub burn_in: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Visit images in a fresh random order every sweep.
    #[serde(default)]
    pub shuffle: bool,
    /// Keep latent assignments in the returned state.
    #[serde(default)]
    pub keep_assignments: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            sweeps: 500,
            burn_in: 250,
            seed: 0,
            log_every: 10,
            shuffle: false,
            keep_assignments: false,
        }
    }
}

impl TrainSchedule {
    pub fn new(sweeps: usize, burn_in: usize, seed: u64) -> Self {
        TrainSchedule {
            sweeps,
            burn_in,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps < 1 {
            return Err(Error::InvalidSchedule("sweeps must be >= 1".into()));
        }
        if self.burn_in >= self.sweeps {
            return Err(Error::InvalidSchedule(format!(
                "burn_in ({}) must be smaller than sweeps ({})",
                self.burn_in, self.sweeps
            )));
        }
        if self.log_every < 1 {
            return Err(Error::InvalidSchedule("log_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Joint data log-likelihood after a given number of sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepLog {
    pub sweep: usize,
    pub joint_ll: f64,
}

impl std::fmt::Display for SweepLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sweep={} joint_ll={}", self.sweep, self.joint_ll)
    }
}

/// Product over the image's patches of
/// `(C_rk + a + g_j) / (Σ_k' C_rk' + K·a + g_j)` with `g_j = [z_j == k]`,
/// returned in log space. `region_topic_row` must already exclude the word
/// being resampled.
pub fn ln_word_patch_coupling(region_topic_row: &[u32], a: f64, patch_topics: &[u32], k: usize) -> f64 {
    let total: u32 = region_topic_row.iter().sum();
    let denom = f64::from(total) + region_topic_row.len() as f64 * a;
    let num = f64::from(region_topic_row[k]) + a;
    let matching = patch_topics.iter().filter(|&&z| z as usize == k).count() as f64;
    let others = patch_topics.len() as f64 - matching;
    matching * ((num + 1.0) / (denom + 1.0)).ln() + others * (num / denom).ln()
}

pub fn word_patch_coupling(region_topic_row: &[u32], a: f64, patch_topics: &[u32], k: usize) -> f64 {
    ln_word_patch_coupling(region_topic_row, a, patch_topics, k).exp()
}

/// Log-density of `loc` under a region's Student-t location predictive.
pub(crate) fn ln_geo_density(est: &GeoEstimate, loc: &Location, dof_floor: f64) -> f64 {
    mvt2_logpdf(loc.as_array(), est.mean, &est.cov, est.dof(dof_floor)).unwrap_or(f64::NEG_INFINITY)
}

/// Log-weights of the 1 + K word outcomes: index 0 is x = 0, index 1 + k is
/// (x = 1, z = k). Counts must already exclude the word itself.
pub(crate) fn word_outcome_weights(
    counts: &CountMatrices,
    hyper: &Hyperparams,
    rz_row: &[u32],
    r: usize,
    w: usize,
    patch_topics: &[u32],
    out: &mut Vec<f64>,
) {
    let topics = hyper.topics;
    out.clear();
    out.push(switch_prob(counts, hyper, r, 0).ln() + region_word_prob(counts, hyper, w, r).ln());
    let ln_switch1 = switch_prob(counts, hyper, r, 1).ln();
    for k in 0..topics {
        let prior = (f64::from(rz_row[k]) + hyper.a).ln()
            + ln_word_patch_coupling(rz_row, hyper.a, patch_topics, k);
        out.push(prior);
    }
    let norm = match hyper.word_rule {
        WordRule::Normalized => log_sum_exp(&out[1..]).expect("finite topic weights"),
        WordRule::Literal => 0.0,
    };
    for k in 0..topics {
        out[1 + k] += ln_switch1 - norm + topic_word_prob(counts, hyper, w, k).ln();
    }
}

/// A single Gibbs chain over a borrowed corpus.
pub struct Chain<'a> {
    corpus: &'a Corpus,
    state: ModelState,
    topic_acc: Vec<Vec<f64>>,
    acc_sweeps: u32,
    sweeps_done: usize,
    buf: Vec<f64>,
}

/// Builds the initial chain state: regions from a k-means++ style seeding
/// over training locations followed by one nearest-centroid pass, topics
/// uniform at random, switches from a fair coin.
pub fn init_state(corpus: &Corpus, hyper: Hyperparams, seed: u64) -> Result<Chain<'_>> {
    corpus.validate()?;
    corpus.require_locations()?;
    hyper.validate()?;
    if hyper.geo_reg <= 0.0 {
        return Err(Error::InvalidHyperparams("geo_reg must be positive for training".into()));
    }
    if hyper.regions > corpus.len() {
        return Err(Error::TooManyRegions {
            regions: hyper.regions,
            images: corpus.len(),
        });
    }
    let mut rng = stream_rng(seed, Stream::Init);
    let locs: Vec<[f64; 2]> = corpus
        .images
        .iter()
        .map(|im| im.location.expect("checked").as_array())
        .collect();
    let centroids = seed_centroids(&locs, hyper.regions, &mut rng);
    let topics = hyper.topics as u32;
    let images = corpus
        .images
        .iter()
        .zip(&locs)
        .map(|(im, l)| ImageAssign {
            region: nearest(&centroids, l) as u32,
            patch_topics: im.patches.iter().map(|_| rng.random_range(0..topics)).collect(),
            word_topics: im
                .words
                .iter()
                .map(|_| rng.random_bool(0.5).then(|| rng.random_range(0..topics)))
                .collect(),
        })
        .collect();
    Chain::from_assignments(corpus, hyper, Assignments { images })
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(centroids: &[[f64; 2]], l: &[f64; 2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, l);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Greedy k-means++ seeding: each new centroid is the best of a few
/// D²-weighted candidates.
fn seed_centroids<R: Rng>(locs: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![locs[rng.random_range(0..locs.len())]];
    let mut d2: Vec<f64> = locs.iter().map(|l| sq_dist(l, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut pick = locs.len() - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if u < d {
                        pick = i;
                        break;
                    }
                    u -= d;
                }
                pick
            } else {
                rng.random_range(0..locs.len())
            };
            let next: Vec<f64> = locs
                .iter()
                .zip(&d2)
                .map(|(l, &d)| d.min(sq_dist(l, &locs[cand])))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                best = Some((potential, cand, next));
            }
        }
        let (_, cand, next) = best.expect("at least one trial");
        centroids.push(locs[cand]);
        d2 = next;
    }
    centroids
}

impl<'a> Chain<'a> {
    /// Starts a chain from explicit assignments.
    pub fn from_assignments(corpus: &'a Corpus, hyper: Hyperparams, assign: Assignments) -> Result<Self> {
        corpus.require_locations()?;
        if hyper.geo_reg <= 0.0 {
            return Err(Error::InvalidHyperparams("geo_reg must be positive for training".into()));
        }
        let state = ModelState::from_assignments(corpus, hyper, assign)?;
        Ok(Chain {
            corpus,
            topic_acc: vec![vec![0.0; state.topics()]; corpus.len()],
            acc_sweeps: 0,
            sweeps_done: 0,
            buf: Vec::new(),
            state,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    pub fn assignments(&self) -> &Assignments {
        self.state.assign.as_ref().expect("chain state carries assignments")
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweeps_done
    }

    /// True when a full recount of the assignments reproduces the counts.
    pub fn counts_consistent(&self) -> bool {
        CountMatrices::recount(self.corpus, self.assignments(), self.state.regions(), self.state.topics())
            == self.state.counts
    }

    fn location(&self, p: usize) -> Location {
        self.corpus.images[p].location.expect("training images carry locations")
    }

    fn detach_image(&mut self, p: usize) -> usize {
        let loc = self.location(p);
        let im = &self.corpus.images[p];
        let ModelState { counts, geo, assign, .. } = &mut self.state;
        let a = &assign.as_ref().expect("assignments").images[p];
        let r = a.region as usize;
        counts.region_images[r] -= 1;
        geo.sums[r].remove(&loc);
        counts.shift_words(&im.words, &a.word_topics, Some(r), None);
        for &k in &a.patch_topics {
            counts.region_patch_topic[r * counts.topics + k as usize] -= 1;
        }
        r
    }

    fn attach_image(&mut self, p: usize, r: usize) {
        let loc = self.location(p);
        let im = &self.corpus.images[p];
        let ModelState { counts, geo, assign, .. } = &mut self.state;
        let a = &mut assign.as_mut().expect("assignments").images[p];
        a.region = r as u32;
        counts.region_images[r] += 1;
        geo.sums[r].add(&loc);
        counts.shift_words(&im.words, &a.word_topics, None, Some(r));
        for &k in &a.patch_topics {
            counts.region_patch_topic[r * counts.topics + k as usize] += 1;
        }
    }

    /// Log-weights of every region for image `p`, whose region-indexed
    /// contributions must already be removed.
    fn region_log_weights(&self, p: usize, out: &mut Vec<f64>) {
        let st = &self.state;
        let (counts, hyper) = (&st.counts, &st.hyper);
        let im = &self.corpus.images[p];
        let loc = self.location(p);
        let topics = hyper.topics;

        let mut patch_ln = Vec::with_capacity(im.patches.len() * topics);
        for f in &im.patches {
            for k in 0..topics {
                patch_ln.push(st.visual.predictive(k).ln_pdf(f));
            }
        }
        let mut beta = Vec::with_capacity(im.words.len() * topics);
        for &w in &im.words {
            for k in 0..topics {
                beta.push(topic_word_prob(counts, hyper, w as usize, k));
            }
        }

        let mut xi;
        let mut ln_xi = vec![0.0; topics];
        let mut mix = vec![0.0; topics];
        out.clear();
        for r in 0..hyper.regions {
            xi = region_topic_dist(counts, hyper, r);
            for k in 0..topics {
                ln_xi[k] = xi[k].ln();
            }
            let mut score = region_prior(counts, hyper, r).ln()
                + ln_geo_density(&st.geo.estimate(r), &loc, hyper.dof_floor);
            if !im.words.is_empty() {
                let p0 = switch_prob(counts, hyper, r, 0);
                let p1 = switch_prob(counts, hyper, r, 1);
                for (i, &w) in im.words.iter().enumerate() {
                    let topical: f64 = beta[i * topics..(i + 1) * topics]
                        .iter()
                        .zip(&xi)
                        .map(|(b, x)| b * x)
                        .sum();
                    score += (p0 * region_word_prob(counts, hyper, w as usize, r) + p1 * topical).ln();
                }
            }
            for i in 0..im.patches.len() {
                for k in 0..topics {
                    mix[k] = patch_ln[i * topics + k] + ln_xi[k];
                }
                score += log_sum_exp(&mix).expect("finite patch weights");
            }
            out.push(score);
        }
    }

    /// Normalized conditional over regions for image `p` given all other
    /// images.
    pub fn region_conditional(&mut self, p: usize) -> Vec<f64> {
        let r = self.detach_image(p);
        let mut lw = Vec::new();
        self.region_log_weights(p, &mut lw);
        self.attach_image(p, r);
        normalize_log(&lw)
    }

    pub fn sample_region<R: Rng + ?Sized>(&mut self, p: usize, rng: &mut R) -> u32 {
        self.detach_image(p);
        let mut lw = std::mem::take(&mut self.buf);
        self.region_log_weights(p, &mut lw);
        let r = categorical_sample(&lw, rng).expect("finite region weights");
        self.buf = lw;
        self.attach_image(p, r);
        r as u32
    }

    fn patch_log_weights(&self, r: usize, f: &[f64], out: &mut Vec<f64>) {
        let st = &self.state;
        out.clear();
        for (k, x) in region_topic_dist(&st.counts, &st.hyper, r).into_iter().enumerate() {
            out.push(x.ln() + st.visual.predictive(k).ln_pdf(f));
        }
    }

    fn detach_patch(&mut self, p: usize, i: usize) -> usize {
        let f = &self.corpus.images[p].patches[i];
        let ModelState { counts, visual, assign, .. } = &mut self.state;
        let a = &assign.as_ref().expect("assignments").images[p];
        let k = a.patch_topics[i] as usize;
        counts.remove_patch(a.region as usize, k);
        visual.remove(k, f);
        visual.refresh(k, counts.patch_topic[k]);
        k
    }

    fn attach_patch(&mut self, p: usize, i: usize, k: usize) {
        let f = &self.corpus.images[p].patches[i];
        let ModelState { counts, visual, assign, .. } = &mut self.state;
        let a = &mut assign.as_mut().expect("assignments").images[p];
        a.patch_topics[i] = k as u32;
        counts.add_patch(a.region as usize, k);
        visual.add(k, f);
        visual.refresh(k, counts.patch_topic[k]);
    }

    pub fn patch_conditional(&mut self, p: usize, i: usize) -> Vec<f64> {
        let k = self.detach_patch(p, i);
        let r = self.assignments().images[p].region as usize;
        let mut lw = Vec::new();
        self.patch_log_weights(r, &self.corpus.images[p].patches[i], &mut lw);
        self.attach_patch(p, i, k);
        normalize_log(&lw)
    }

    pub fn sample_patch_topic<R: Rng + ?Sized>(&mut self, p: usize, i: usize, rng: &mut R) -> u32 {
        self.detach_patch(p, i);
        let r = self.assignments().images[p].region as usize;
        let mut lw = std::mem::take(&mut self.buf);
        self.patch_log_weights(r, &self.corpus.images[p].patches[i], &mut lw);
        let k = categorical_sample(&lw, rng).expect("finite patch weights");
        self.buf = lw;
        self.attach_patch(p, i, k);
        k as u32
    }

    /// Coupling weight between a latent topic for one of image `p`'s words
    /// and the image's current patch topics, with region counts taken as
    /// they stand.
    pub fn word_patch_coupling(&self, p: usize, k: usize) -> f64 {
        let a = &self.assignments().images[p];
        let row = self.state.counts.mixture_row(a.region as usize, self.state.hyper.mixture_counts);
        word_patch_coupling(&row, self.state.hyper.a, &a.patch_topics, k)
    }

    fn word_weights(&mut self, p: usize, i: usize, out: &mut Vec<f64>) {
        let w = self.corpus.images[p].words[i] as usize;
        let a = &self.state.assign.as_ref().expect("assignments").images[p];
        let r = a.region as usize;
        let counts = &self.state.counts;
        let row = counts.mixture_row(r, self.state.hyper.mixture_counts);
        word_outcome_weights(
            counts,
            &self.state.hyper,
            &row,
            r,
            w,
            &a.patch_topics,
            out,
        );
    }

    fn set_word(&mut self, p: usize, i: usize, z: Option<u32>, add: bool) {
        let w = self.corpus.images[p].words[i] as usize;
        let ModelState { counts, assign, .. } = &mut self.state;
        let a = &mut assign.as_mut().expect("assignments").images[p];
        let r = a.region as usize;
        if add {
            a.word_topics[i] = z;
            counts.add_word(w, r, z);
        } else {
            counts.remove_word(w, r, a.word_topics[i]);
        }
    }

    /// Normalized conditional over the 1 + K word outcomes.
    pub fn word_conditional(&mut self, p: usize, i: usize) -> Vec<f64> {
        let z = self.assignments().images[p].word_topics[i];
        self.set_word(p, i, None, false);
        let mut lw = Vec::new();
        self.word_weights(p, i, &mut lw);
        self.set_word(p, i, z, true);
        normalize_log(&lw)
    }

    /// Resamples the switch and topic of word `i` of image `p`; `None` is a
    /// region-specific word.
    pub fn sample_word<R: Rng + ?Sized>(&mut self, p: usize, i: usize, rng: &mut R) -> Option<u32> {
        self.set_word(p, i, None, false);
        let mut lw = std::mem::take(&mut self.buf);
        self.word_weights(p, i, &mut lw);
        let o = categorical_sample(&lw, rng).expect("finite word weights");
        self.buf = lw;
        let z = (o > 0).then(|| (o - 1) as u32);
        self.set_word(p, i, z, true);
        z
    }

    fn visit(&mut self, p: usize, rng: &mut impl Rng) {
        self.sample_region(p, rng);
        for i in 0..self.corpus.images[p].patches.len() {
            self.sample_patch_topic(p, i, rng);
        }
        for i in 0..self.corpus.images[p].words.len() {
            self.sample_word(p, i, rng);
        }
    }

    /// One pass over all images, then a full re-estimation of location and
    /// visual statistics.
    pub fn sweep<R: Rng>(&mut self, rng: &mut R) {
        self.sweep_ordered(rng, false)
    }

    pub fn sweep_ordered<R: Rng>(&mut self, rng: &mut R, shuffle: bool) {
        let mut order: Vec<usize> = (0..self.corpus.len()).collect();
        if shuffle {
            order.shuffle(rng);
        }
        for p in order {
            self.visit(p, rng);
        }
        let ModelState { counts, geo, visual, assign, .. } = &mut self.state;
        let assign = assign.as_ref().expect("assignments");
        geo.rebuild_sums(self.corpus, assign);
        visual.rebuild_sums(self.corpus, assign, &counts.patch_topic);
        self.sweeps_done += 1;
    }

    /// Adds the current per-image topic counts to the running average.
    pub fn accumulate(&mut self) {
        let topics = self.state.topics();
        let assign = self.state.assign.as_ref().expect("assignments");
        for (acc, a) in self.topic_acc.iter_mut().zip(&assign.images) {
            for (x, n) in acc.iter_mut().zip(a.topic_counts(topics)) {
                *x += f64::from(n);
            }
        }
        self.acc_sweeps += 1;
    }

    /// Sum over images of location, word and visual log-likelihoods under
    /// the current assignments.
    pub fn joint_log_likelihood(&self) -> f64 {
        let st = &self.state;
        let assign = self.assignments();
        let estimates: Vec<GeoEstimate> = (0..st.regions()).map(|r| st.geo.estimate(r)).collect();
        self.corpus
            .images
            .iter()
            .zip(&assign.images)
            .map(|(im, a)| {
                let r = a.region as usize;
                let e = &estimates[r];
                let loc = im.location.expect("training images carry locations");
                mvn2_logpdf(loc.as_array(), e.mean, &e.cov).unwrap_or(f64::NEG_INFINITY)
                    + word_likelihood_region(st, &im.words, r)
                    + visual_likelihood_region(st, &im.patches, r)
            })
            .sum()
    }

    /// Finishes the chain. Per-image topic counts are the post-burn-in
    /// average, or the current assignment when nothing was accumulated.
    pub fn freeze(self, keep_assignments: bool) -> ModelState {
        let mut state = self.state;
        let assign = state.assign.as_ref().expect("assignments");
        let topics = state.hyper.topics;
        for ((img, a), acc) in state.images.iter_mut().zip(&assign.images).zip(&self.topic_acc) {
            img.region = a.region;
            img.topic_counts = if self.acc_sweeps > 0 {
                acc.iter().map(|x| x / f64::from(self.acc_sweeps)).collect()
            } else {
                a.topic_counts(topics).into_iter().map(f64::from).collect()
            };
        }
        if !keep_assignments {
            state.assign = None;
        }
        state
    }
}

fn normalize_log(lw: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(lw).expect("finite weights");
    lw.iter().map(|w| (w - z).exp()).collect()
}

pub fn train(corpus: &Corpus, hyper: Hyperparams, schedule: &TrainSchedule) -> Result<ModelState> {
    train_with_log(corpus, hyper, schedule, |_| {})
}

/// Trains a model, reporting the joint log-likelihood after initialization
/// and every `log_every` sweeps (and after the last sweep).
pub fn train_with_log(
    corpus: &Corpus,
    hyper: Hyperparams,
    schedule: &TrainSchedule,
    mut on_log: impl FnMut(SweepLog),
) -> Result<ModelState> {
    schedule.validate()?;
    let mut chain = init_state(corpus, hyper, schedule.seed)?;
    let mut rng = stream_rng(schedule.seed, Stream::Sweeps);
    on_log(SweepLog {
        sweep: 0,
        joint_ll: chain.joint_log_likelihood(),
    });
    for s in 1..=schedule.sweeps {
        chain.sweep_ordered(&mut rng, schedule.shuffle);
        if s > schedule.burn_in {
            chain.accumulate();
        }
        if s % schedule.log_every == 0 || s == schedule.sweeps {
            let log = SweepLog {
                sweep: s,
                joint_ll: chain.joint_log_likelihood(),
            };
            log::debug!("{log}");
            on_log(log);
        }
    }
    Ok(chain.freeze(schedule.keep_assignments))
}

#[cfg(test)]
mod tests;
