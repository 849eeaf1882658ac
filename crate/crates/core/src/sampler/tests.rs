use super::*;
use crate::corpus::{GeoImage, Vocabulary};
use crate::generator::{generate_corpus, make_ground_truth, GenSpec, GroundTruthConfig};
use crate::model::{region_topic_prob, MixtureCounts, RegionGeo};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn img(id: &str, words: Vec<u32>, patches: Vec<Vec<f64>>, lat: f64, lon: f64) -> GeoImage {
    GeoImage {
        id: id.into(),
        words,
        patches,
        location: Some(Location::new(lat, lon)),
    }
}

fn vocab(w: usize) -> Vocabulary {
    Vocabulary::from_tokens((0..w).map(|i| format!("t{i}")).collect()).unwrap()
}

fn synthetic(n: usize, seed: u64) -> Corpus {
    let gt = make_ground_truth(&GroundTruthConfig::new(3, 4, 30, 2, seed, 4.0)).unwrap();
    generate_corpus(&gt, &GenSpec::new(n, seed)).unwrap().0
}

/// Two location clusters whose images use disjoint words and features.
fn two_cluster_corpus() -> Corpus {
    let mut images = Vec::new();
    for i in 0..12 {
        let side = if i % 2 == 0 { -1.0 } else { 1.0 };
        let w = if side < 0.0 { vec![0, 1, 0] } else { vec![2, 3] };
        let jitter = 0.05 * (i as f64);
        images.push(img(
            &format!("c{i}"),
            w,
            vec![vec![side * 5.0 + jitter], vec![side * 5.0 - jitter]],
            10.0 + side * 3.0 + jitter,
            20.0 - side * 2.0,
        ));
    }
    Corpus {
        images,
        vocab: vocab(4),
        feature_dim: 1,
    }
}

fn assignment_of(chain: &Chain) -> Assignments {
    chain.assignments().clone()
}

fn without_image(corpus: &Corpus, assign: &Assignments, p: usize) -> (Corpus, Assignments) {
    let mut c = corpus.clone();
    let mut a = assign.clone();
    c.images.remove(p);
    a.images.remove(p);
    (c, a)
}

fn normalize(lw: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(lw).unwrap();
    lw.iter().map(|w| (w - z).exp()).collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
    }
}

/// Region conditional recomputed from a state built without image `p`.
fn region_oracle(corpus: &Corpus, hyper: &Hyperparams, assign: &Assignments, p: usize) -> Vec<f64> {
    let (c, a) = without_image(corpus, assign, p);
    let st = ModelState::from_assignments(&c, hyper.clone(), a).unwrap();
    let im = &corpus.images[p];
    let loc = im.location.unwrap().as_array();
    let lw: Vec<f64> = (0..hyper.regions)
        .map(|r| {
            let e = st.geo.estimate(r);
            region_prior(&st.counts, hyper, r).ln()
                + mvt2_logpdf(loc, e.mean, &e.cov, e.dof(hyper.dof_floor)).unwrap()
                + word_likelihood_region(&st, &im.words, r)
                + visual_likelihood_region(&st, &im.patches, r)
        })
        .collect();
    normalize(&lw)
}

#[test]
fn region_conditional_matches_oracle() {
    let corpus = two_cluster_corpus();
    for mode in [MixtureCounts::Words, MixtureCounts::WordsAndPatches] {
        let hyper = Hyperparams {
            mixture_counts: mode,
            ..Hyperparams::new(2, 2, 1)
        };
        let mut chain = init_state(&corpus, hyper.clone(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        chain.sweep(&mut rng);
        let assign = assignment_of(&chain);
        for p in [0, 3, 7] {
            let got = chain.region_conditional(p);
            assert_close(&got, &region_oracle(&corpus, &hyper, &assign, p), 1e-9);
        }
    }
}

#[test]
fn region_draw_frequencies() {
    // Make image 0 ambiguous by placing it between the clusters.
    let mut corpus = two_cluster_corpus();
    corpus.images[0].location = Some(Location::new(10.0, 20.0));
    corpus.images[0].words = vec![];
    corpus.images[0].patches = vec![];
    let hyper = Hyperparams::new(2, 2, 1);
    let mut chain = init_state(&corpus, hyper, 5).unwrap();
    let expected = chain.region_conditional(0);
    assert!(expected[0] > 0.005 && expected[0] < 0.995, "{expected:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 20_000;
    let hits = (0..n).filter(|_| chain.sample_region(0, &mut rng) == 0).count();
    let p = expected[0];
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((hits as f64 / n as f64 - p).abs() < 4.0 * sd);
    assert!(chain.counts_consistent());
}

#[test]
fn patch_conditional_matches_oracle() {
    let corpus = synthetic(40, 3);
    for mode in [MixtureCounts::Words, MixtureCounts::WordsAndPatches] {
        let hyper = Hyperparams {
            mixture_counts: mode,
            ..Hyperparams::new(3, 4, 2)
        };
        let mut chain = init_state(&corpus, hyper.clone(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        chain.sweep(&mut rng);
        let assign = assignment_of(&chain);
        let (p, i) = (5, 1);
        let mut c = corpus.clone();
        let mut a = assign.clone();
        let f = c.images[p].patches.remove(i);
        a.images[p].patch_topics.remove(i);
        let st = ModelState::from_assignments(&c, hyper.clone(), a).unwrap();
        let r = assign.images[p].region as usize;
        let lw: Vec<f64> = (0..4)
            .map(|k| region_topic_prob(&st.counts, &hyper, r, k).ln() + st.visual.predictive(k).ln_pdf(&f))
            .collect();
        assert_close(&chain.patch_conditional(p, i), &normalize(&lw), 1e-9);
    }
}

#[test]
fn patch_topic_single_topic_and_fallback() {
    let corpus = synthetic(20, 4);
    let mut chain = init_state(&corpus, Hyperparams::new(2, 1, 2), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        assert_eq!(chain.sample_patch_topic(3, 0, &mut rng), 0);
    }

    // One patch in total: after leave-one-out every topic is empty and the
    // prior predictive is used.
    let corpus = Corpus {
        images: vec![img("a", vec![], vec![vec![1.0]], 0.0, 0.0)],
        vocab: vocab(1),
        feature_dim: 1,
    };
    let mut chain = init_state(&corpus, Hyperparams::new(1, 3, 1), 1).unwrap();
    let probs = chain.patch_conditional(0, 0);
    assert!(probs.iter().all(|p| p.is_finite()));
    assert_close(&probs, &[1.0 / 3.0; 3], 1e-12);
    chain.sample_patch_topic(0, 0, &mut rng);
    assert!(chain.counts_consistent());
}

#[test]
fn coupling_hand_values() {
    let row = [2u32, 2];
    let all_k = word_patch_coupling(&row, 1.0, &[0, 0, 0], 0);
    let none_k = word_patch_coupling(&row, 1.0, &[1, 1, 1], 0);
    assert!((all_k - (4.0f64 / 7.0).powi(3)).abs() < 1e-12);
    assert!((none_k - 0.125).abs() < 1e-12);
    assert!((all_k / none_k - (8.0f64 / 7.0).powi(3)).abs() < 1e-12);
    assert_eq!(word_patch_coupling(&row, 1.0, &[], 1), 1.0);
    assert!(word_patch_coupling(&[0, 0, 0], 0.01, &[2, 2, 2, 2, 2], 0) > 0.0);
}

/// Word outcome probabilities recomputed from a state built without the
/// word, following the stated formulas term by term.
fn word_oracle(corpus: &Corpus, hyper: &Hyperparams, assign: &Assignments, p: usize, i: usize) -> Vec<f64> {
    let mut c = corpus.clone();
    let mut a = assign.clone();
    let w = c.images[p].words.remove(i) as usize;
    a.images[p].word_topics.remove(i);
    let st = ModelState::from_assignments(&c, hyper.clone(), a.clone()).unwrap();
    let r = a.images[p].region as usize;
    let row = st.counts.mixture_row(r, hyper.mixture_counts);
    let k_n = hyper.topics;
    let ka = k_n as f64 * hyper.a;
    let total: f64 = row.iter().map(|&n| f64::from(n)).sum();
    let coupling = |k: usize| -> f64 {
        a.images[p]
            .patch_topics
            .iter()
            .map(|&z| {
                let g = if z as usize == k { 1.0 } else { 0.0 };
                (f64::from(row[k]) + hyper.a + g) / (total + ka + g)
            })
            .product()
    };
    let prior: Vec<f64> = (0..k_n).map(|k| (f64::from(row[k]) + hyper.a) * coupling(k)).collect();
    let z: f64 = match hyper.word_rule {
        WordRule::Normalized => prior.iter().sum(),
        WordRule::Literal => 1.0,
    };
    let mut weights = vec![switch_prob(&st.counts, hyper, r, 0) * region_word_prob(&st.counts, hyper, w, r)];
    for k in 0..k_n {
        weights.push(switch_prob(&st.counts, hyper, r, 1) * prior[k] / z * topic_word_prob(&st.counts, hyper, w, k));
    }
    let s: f64 = weights.iter().sum();
    weights.iter().map(|x| x / s).collect()
}

#[test]
fn word_conditional_matches_oracle() {
    let corpus = synthetic(40, 6);
    for rule in [WordRule::Normalized, WordRule::Literal] {
        for mode in [MixtureCounts::Words, MixtureCounts::WordsAndPatches] {
            let hyper = Hyperparams {
                word_rule: rule,
                mixture_counts: mode,
                ..Hyperparams::new(3, 4, 2)
            };
            let mut chain = init_state(&corpus, hyper.clone(), 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            chain.sweep(&mut rng);
            let assign = assignment_of(&chain);
            for (p, i) in [(0, 0), (7, 2), (13, 1)] {
                let got = chain.word_conditional(p, i);
                assert_close(&got, &word_oracle(&corpus, &hyper, &assign, p, i), 1e-9);
            }
        }
    }
}

#[test]
fn word_switch_symmetric_case() {
    let corpus = Corpus {
        images: vec![img("a", vec![0], vec![], 0.0, 0.0)],
        vocab: vocab(3),
        feature_dim: 1,
    };
    for rule in [WordRule::Normalized, WordRule::Literal] {
        let hyper = Hyperparams {
            word_rule: rule,
            ..Hyperparams::new(1, 1, 1)
        };
        let mut chain = init_state(&corpus, hyper, 0).unwrap();
        // Zero counts after leave-one-out: x=0 weight ½·⅓, x=1 weight ½·(0+a)·⅓ (literal)
        // or ½·1·⅓ (normalized); with a = 1 both give ½.
        assert_close(&chain.word_conditional(0, 0), &[0.5, 0.5], 1e-12);
    }
}

#[test]
fn word_region_specific_dominance() {
    let mut images = vec![img("q", vec![0], vec![], 0.0, 0.0)];
    for i in 0..200 {
        images.push(img(&format!("b{i}"), vec![0, 0, 0, 0, 0], vec![], 0.0, 0.0));
    }
    let corpus = Corpus {
        images,
        vocab: vocab(50),
        feature_dim: 1,
    };
    let n = corpus.len();
    let assign = Assignments {
        images: (0..n)
            .map(|p| ImageAssign {
                region: 0,
                patch_topics: vec![],
                word_topics: if p == 0 { vec![None] } else { vec![None; 5] },
            })
            .collect(),
    };
    let mut chain = Chain::from_assignments(&corpus, Hyperparams::new(1, 2, 1), assign).unwrap();
    let probs = chain.word_conditional(0, 0);
    assert!(probs[0] > 0.99, "{probs:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = (0..2000).filter(|_| chain.sample_word(0, 0, &mut rng).is_none()).count();
    assert!(x0 >= 1970);
    assert!(chain.counts_consistent());
}

#[test]
fn init_single_region_and_clusters() {
    let corpus = synthetic(30, 1);
    let chain = init_state(&corpus, Hyperparams::new(1, 3, 2), 4).unwrap();
    assert!(chain.assignments().images.iter().all(|a| a.region == 0));
    assert!(chain.counts_consistent());

    let corpus = two_cluster_corpus();
    for seed in 0..10 {
        let chain = init_state(&corpus, Hyperparams::new(2, 2, 1), seed).unwrap();
        let a = &chain.assignments().images;
        let west = a[0].region;
        for (p, ia) in a.iter().enumerate() {
            assert_eq!(ia.region == west, p % 2 == 0, "seed {seed}");
        }
        assert!(chain.counts_consistent());
    }
}

#[test]
fn init_rejects_bad_inputs() {
    let corpus = synthetic(5, 1);
    assert!(matches!(
        init_state(&corpus, Hyperparams::new(6, 2, 2), 0),
        Err(Error::TooManyRegions { regions: 6, images: 5 })
    ));
    let bad = Hyperparams {
        geo_reg: 0.0,
        ..Hyperparams::new(2, 2, 2)
    };
    assert!(init_state(&corpus, bad, 0).is_err());
    assert!(init_state(&corpus, Hyperparams::new(2, 2, 3), 0).is_err());
    let mut unlocated = corpus.clone();
    unlocated.images[2].location = None;
    assert!(matches!(
        init_state(&unlocated, Hyperparams::new(2, 2, 2), 0),
        Err(Error::MissingLocation(_))
    ));
}

#[test]
fn counts_consistent_across_sweeps() {
    let corpus = synthetic(60, 2);
    let mut chain = init_state(&corpus, Hyperparams::new(3, 4, 2), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert!(chain.counts_consistent());
    for _ in 0..10 {
        chain.sweep(&mut rng);
        assert!(chain.counts_consistent());
        let ll = chain.joint_log_likelihood();
        assert!(ll.is_finite());
        let geo = RegionGeo::build(&corpus, chain.assignments(), 3, chain.state().hyper.geo_reg);
        assert_eq!(geo.sums, chain.state().geo.sums);
    }
    assert_eq!(chain.sweeps_done(), 10);
}

#[test]
fn one_image_corpus_sweeps() {
    let corpus = Corpus {
        images: vec![img("solo", vec![0, 1], vec![vec![0.5, 0.5]], 45.0, 7.0)],
        vocab: vocab(2),
        feature_dim: 2,
    };
    let mut chain = init_state(&corpus, Hyperparams::new(1, 2, 2), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    chain.sweep(&mut rng);
    assert!(chain.counts_consistent());
    assert!(chain.joint_log_likelihood().is_finite());
}

#[test]
fn leave_one_out_is_idempotent() {
    let corpus = synthetic(30, 7);
    let mut chain = init_state(&corpus, Hyperparams::new(3, 4, 2), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    chain.sweep(&mut rng);
    let before = chain.state().clone();
    chain.region_conditional(4);
    chain.patch_conditional(4, 0);
    chain.word_conditional(4, 0);
    let after = chain.state();
    assert_eq!(before.counts, after.counts);
    assert_eq!(before.assign, after.assign);
    for (x, y) in before.geo.sums.iter().zip(&after.geo.sums) {
        assert_eq!(x.n, y.n);
        assert!((x.sum[0] - y.sum[0]).abs() < 1e-9 && (x.sum_sq[2] - y.sum_sq[2]).abs() < 1e-9);
    }
    for (x, y) in before.visual.sum.iter().zip(&after.visual.sum) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn training_is_deterministic() {
    let corpus = synthetic(50, 3);
    let hyper = Hyperparams::new(3, 4, 2);
    let mut sched = TrainSchedule::new(6, 3, 42);
    sched.keep_assignments = true;
    let a = train(&corpus, hyper.clone(), &sched).unwrap();
    let b = train(&corpus, hyper.clone(), &sched).unwrap();
    assert_eq!(a, b);
    sched.seed = 43;
    let c = train(&corpus, hyper, &sched).unwrap();
    assert_ne!(a.assign, c.assign);
}

#[test]
fn one_sweep_equals_init_plus_sweep() {
    let corpus = synthetic(25, 5);
    let hyper = Hyperparams::new(2, 3, 2);
    let mut sched = TrainSchedule::new(1, 0, 9);
    sched.keep_assignments = true;
    let trained = train(&corpus, hyper.clone(), &sched).unwrap();
    let mut chain = init_state(&corpus, hyper, 9).unwrap();
    let mut rng = stream_rng(9, Stream::Sweeps);
    chain.sweep(&mut rng);
    chain.accumulate();
    assert_eq!(chain.freeze(true), trained);
}

#[test]
fn sweep_logs_are_reported() {
    let corpus = synthetic(20, 5);
    let mut sched = TrainSchedule::new(7, 2, 1);
    sched.log_every = 3;
    let mut seen = Vec::new();
    train_with_log(&corpus, Hyperparams::new(2, 2, 2), &sched, |l| seen.push(l)).unwrap();
    assert_eq!(seen.iter().map(|l| l.sweep).collect::<Vec<_>>(), vec![0, 3, 6, 7]);
    let line = seen[1].to_string();
    assert!(line.starts_with("sweep=3 joint_ll="), "{line}");
    assert!(line["sweep=3 joint_ll=".len()..].parse::<f64>().is_ok());
}

#[test]
fn schedule_validation() {
    assert!(TrainSchedule::new(0, 0, 0).validate().is_err());
    assert!(TrainSchedule::new(5, 5, 0).validate().is_err());
    assert!(TrainSchedule::new(5, 4, 0).validate().is_ok());
}

#[test]
fn likelihood_ascends_from_init() {
    let mut ups = 0;
    for seed in 0..20 {
        let corpus = synthetic(80, 100 + seed);
        let mut logs = Vec::new();
        let mut sched = TrainSchedule::new(15, 5, seed);
        sched.log_every = 15;
        train_with_log(&corpus, Hyperparams::new(3, 4, 2), &sched, |l| logs.push(l.joint_ll)).unwrap();
        if logs.last().unwrap() > &logs[0] {
            ups += 1;
        }
    }
    assert!(ups >= 19, "{ups}/20");
}

#[test]
fn mirror_clusters_share_occupancy() {
    let mut images = Vec::new();
    for i in 0..60 {
        let dx = 0.01 * (i as f64);
        for (side, w) in [(-1.0, 0u32), (1.0, 1u32)] {
            images.push(img(
                &format!("m{i}_{w}"),
                vec![w, w],
                vec![vec![side * 3.0 + dx]],
                side * 4.0 + dx,
                0.5 * dx,
            ));
        }
    }
    let corpus = Corpus {
        images,
        vocab: vocab(2),
        feature_dim: 1,
    };
    let mut chain = init_state(&corpus, Hyperparams::new(2, 2, 1), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut ratio = 0.0;
    let sweeps = 40;
    for _ in 0..sweeps {
        chain.sweep(&mut rng);
        let c = &chain.state().counts.region_images;
        ratio += f64::from(c[0].min(c[1])) / f64::from(c[0].max(c[1]));
    }
    let ratio = ratio / sweeps as f64;
    assert!((ratio - 1.0).abs() <= 0.1, "{ratio}");
}
