use super::*;
use crate::corpus::{Corpus, Vocabulary};
use crate::model::{Assignments, Hyperparams, ImageAssign};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const TOWER: u32 = 0;
const BEACH: u32 = 1;

fn vocab() -> Vocabulary {
    Vocabulary::from_tokens(["tower", "beach", "misc"].iter().map(|s| s.to_string()).collect()).unwrap()
}

fn noisy(center: [f64; 2], rng: &mut ChaCha8Rng) -> Vec<f64> {
    center.iter().map(|c| c + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Region 0 near (10, 10) with topic 0 ("tower", features around the
/// origin); region 1 near (-10, -10) with topic 1 ("beach", features
/// around (8, 8)).
fn two_region_corpus(per_region: usize) -> (Corpus, Assignments) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut images = Vec::new();
    let mut assign = Vec::new();
    for r in 0..2u32 {
        let (word, feat, loc) = if r == 0 {
            (TOWER, [0.0, 0.0], 10.0)
        } else {
            (BEACH, [8.0, 8.0], -10.0)
        };
        for i in 0..per_region {
            images.push(GeoImage {
                id: format!("r{r}i{i}"),
                words: vec![word, word, 2],
                patches: vec![noisy(feat, &mut rng), noisy(feat, &mut rng)],
                location: Some(Location::new(loc + 0.1 * i as f64, loc - 0.05 * i as f64)),
            });
            assign.push(ImageAssign {
                region: r,
                patch_topics: vec![r, r],
                word_topics: vec![Some(r), Some(r), None],
            });
        }
    }
    let corpus = Corpus {
        images,
        vocab: vocab(),
        feature_dim: 2,
    };
    (corpus, Assignments { images: assign })
}

fn two_region_model() -> ModelState {
    let (corpus, assign) = two_region_corpus(20);
    ModelState::from_assignments(&corpus, Hyperparams::new(2, 2, 2), assign)
        .unwrap()
        .frozen()
}

fn opts(mode: Mode, neighbors: usize) -> PredictOptions {
    PredictOptions {
        neighbors,
        ..PredictOptions::new(mode, 7)
    }
}

#[test]
fn word_query_selects_its_region() {
    let m = two_region_model();
    let q = Query {
        words: vec![TOWER],
        patches: vec![],
    };
    assert_eq!(select_region(&m, &q, Mode::TextVisual).unwrap(), (0, false));
    let q = Query {
        words: vec![BEACH, BEACH],
        patches: vec![],
    };
    assert_eq!(select_region(&m, &q, Mode::TextVisual).unwrap().0, 1);
}

#[test]
fn visual_query_selects_its_region() {
    let m = two_region_model();
    let q = Query {
        words: vec![],
        patches: vec![vec![0.0, 0.0]],
    };
    assert_eq!(select_region(&m, &q, Mode::Visual).unwrap(), (0, false));
    let q = Query {
        words: vec![TOWER],
        patches: vec![vec![8.0, 8.0], vec![8.1, 7.9]],
    };
    assert_eq!(select_region(&m, &q, Mode::Visual).unwrap().0, 1);
}

#[test]
fn region_ties_go_to_lowest_index() {
    let mut images = Vec::new();
    for (i, lat) in [5.0, -5.0].iter().enumerate() {
        images.push(GeoImage {
            id: format!("x{i}"),
            words: vec![0],
            patches: vec![vec![1.0]],
            location: Some(Location::new(*lat, 0.0)),
        });
    }
    let corpus = Corpus {
        images,
        vocab: Vocabulary::from_tokens(vec!["a".into()]).unwrap(),
        feature_dim: 1,
    };
    let assign = Assignments {
        images: (0..2)
            .map(|r| ImageAssign {
                region: r,
                patch_topics: vec![0],
                word_topics: vec![Some(0)],
            })
            .collect(),
    };
    let m = ModelState::from_assignments(&corpus, Hyperparams::new(3, 1, 1), assign).unwrap();
    let q = Query {
        words: vec![0],
        patches: vec![vec![1.0]],
    };
    assert_eq!(select_region(&m, &q, Mode::TextVisual).unwrap().0, 0);
}

#[test]
fn empty_regions_are_never_selected() {
    let (corpus, assign) = two_region_corpus(5);
    let mut assign = assign;
    for a in &mut assign.images {
        a.region += 1;
    }
    let m = ModelState::from_assignments(&corpus, Hyperparams::new(3, 2, 2), assign).unwrap();
    for q in [vec![TOWER], vec![BEACH], vec![2]] {
        let q = Query {
            words: q,
            patches: vec![],
        };
        assert_ne!(select_region(&m, &q, Mode::TextVisual).unwrap().0, 0);
    }
}

#[test]
fn empty_queries_are_rejected() {
    let m = two_region_model();
    let empty = Query::default();
    assert!(matches!(predict(&m, &empty, &opts(Mode::TextVisual, 4), 0), Err(Error::EmptyQuery)));
    let words_only = Query {
        words: vec![TOWER],
        patches: vec![],
    };
    assert!(matches!(predict(&m, &words_only, &opts(Mode::Visual, 4), 0), Err(Error::EmptyQuery)));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(fold_in(&m, &empty, 0, 5, &mut rng), Err(Error::EmptyQuery)));
}

#[test]
fn options_are_validated() {
    let m = two_region_model();
    let q = Query {
        words: vec![TOWER],
        patches: vec![],
    };
    assert!(predict(&m, &q, &opts(Mode::TextVisual, 0), 0).is_err());
    let o = PredictOptions {
        fold_in_sweeps: 0,
        ..opts(Mode::TextVisual, 2)
    };
    assert!(predict(&m, &q, &o, 0).is_err());
    assert_eq!(PredictOptions::new(Mode::Visual, 0).neighbors, 8);
    assert_eq!(PredictOptions::new(Mode::TextVisual, 0).neighbors, 4);
}

#[test]
fn single_topic_fold_in_is_certain() {
    let (corpus, mut assign) = two_region_corpus(4);
    for a in &mut assign.images {
        a.patch_topics.iter_mut().for_each(|k| *k = 0);
        a.word_topics.iter_mut().flatten().for_each(|k| *k = 0);
    }
    let m = ModelState::from_assignments(&corpus, Hyperparams::new(2, 1, 2), assign).unwrap();
    let q = Query {
        words: vec![TOWER, 2],
        patches: vec![vec![3.0, 3.0]],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(fold_in(&m, &q, 0, 10, &mut rng).unwrap(), vec![1.0]);
}

#[test]
fn fold_in_follows_content() {
    let m = two_region_model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = Query {
        words: vec![TOWER, TOWER],
        patches: vec![vec![0.1, -0.1]],
    };
    let d = fold_in(&m, &q, 0, 40, &mut rng).unwrap();
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(d[0] > d[1]);
    let q = Query {
        words: vec![],
        patches: vec![vec![8.0, 8.0], vec![7.8, 8.2]],
    };
    let d = fold_in(&m, &q, 1, 40, &mut rng).unwrap();
    assert!(d[1] > d[0]);
}

#[test]
fn image_topic_dist_cases() {
    let m = two_region_model();
    assert!(matches!(image_topic_dist(&m, "missing"), Err(Error::UnknownImage(_))));
    let d = image_topic_dist(&m, "r1i3").unwrap();
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(d[1] > d[0]);

    let corpus = Corpus {
        images: vec![GeoImage {
            id: "plain".into(),
            words: vec![2, 2],
            patches: vec![],
            location: Some(Location::new(0.0, 0.0)),
        }],
        vocab: vocab(),
        feature_dim: 2,
    };
    let assign = Assignments {
        images: vec![ImageAssign {
            region: 0,
            patch_topics: vec![],
            word_topics: vec![None, None],
        }],
    };
    let m = ModelState::from_assignments(&corpus, Hyperparams::new(1, 4, 2), assign).unwrap();
    assert_eq!(image_topic_dist(&m, "plain").unwrap(), vec![0.25; 4]);
}

#[test]
fn own_content_is_most_similar() {
    let k_n = 3;
    let centers = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut images = Vec::new();
    let mut assign = Vec::new();
    for i in 0..60 {
        let mut words = Vec::new();
        let mut patches = Vec::new();
        let mut wt = Vec::new();
        let mut pt = Vec::new();
        let favored = rng.random_range(0..k_n);
        for _ in 0..8 {
            let k = if rng.random_bool(0.7) { favored } else { rng.random_range(0..k_n) };
            words.push(k as u32);
            wt.push(Some(k as u32));
            let k = if rng.random_bool(0.7) { favored } else { rng.random_range(0..k_n) };
            patches.push(noisy(centers[k], &mut rng));
            pt.push(k as u32);
        }
        images.push(GeoImage {
            id: format!("m{i}"),
            words,
            patches,
            location: Some(Location::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))),
        });
        assign.push(ImageAssign {
            region: 0,
            patch_topics: pt,
            word_topics: wt,
        });
    }
    let corpus = Corpus {
        images,
        vocab: Vocabulary::from_tokens(vec!["a".into(), "b".into(), "c".into()]).unwrap(),
        feature_dim: 2,
    };
    let m = ModelState::from_assignments(&corpus, Hyperparams::new(1, 3, 2), Assignments { images: assign }).unwrap();

    let trials = 100;
    let mut wins = 0;
    for t in 0..trials {
        let i = rng.random_range(0..corpus.len());
        let mut j = rng.random_range(0..corpus.len());
        while j == i {
            j = rng.random_range(0..corpus.len());
        }
        let mut frng = ChaCha8Rng::seed_from_u64(t);
        let q = fold_in(&m, &Query::from(&corpus.images[i]), 0, 30, &mut frng).unwrap();
        let a = m.hyper.a;
        let own = jsd(&q, &topic_dist_from_counts(&m.images[i].topic_counts, a)).unwrap();
        let other = jsd(&q, &topic_dist_from_counts(&m.images[j].topic_counts, a)).unwrap();
        if own < other {
            wins += 1;
        }
    }
    assert!(wins >= 90, "{wins}/{trials}");
}

#[test]
fn similar_images_are_ranked_and_truncated() {
    let m = two_region_model();
    let q = [0.9, 0.1];
    let (ranked, truncated) = similar_images(&m, &q, 0, 5).unwrap();
    assert!(!truncated);
    assert_eq!(ranked.len(), 5);
    assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
    assert!(ranked.iter().all(|&(i, _)| m.images[i].region == 0));
    let (ranked, truncated) = similar_images(&m, &q, 1, 50).unwrap();
    assert!(truncated);
    assert_eq!(ranked.len(), 20);
    assert!(similar_images(&m, &q, 0, 0).is_err());
}

#[test]
fn coherence_weights_by_hand() {
    let dists = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]];
    let w = coherence_weights(&dists).unwrap();
    let s13 = (-0.75 * (4.0f64 / 3.0).ln()).exp();
    let expect = [(0.5 + s13) / 2.0, (0.5 + s13) / 2.0, s13];
    for (a, b) in w.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert_eq!(coherence_weights(&dists[..1]).unwrap(), vec![1.0]);
    assert!((similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(similarity(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 1.0);
}

#[test]
fn propagation_averages_with_weights() {
    let n = vec![
        (Location::new(0.0, 0.0), vec![1.0, 0.0]),
        (Location::new(10.0, 20.0), vec![1.0, 0.0]),
    ];
    let (loc, w) = propagate_location(&n).unwrap();
    assert_eq!(w, vec![1.0, 1.0]);
    assert!((loc.lat - 5.0).abs() < 1e-12 && (loc.lon - 10.0).abs() < 1e-12);
    assert!(propagate_location(&[]).is_err());
    let l = weighted_location(&[Location::new(0.0, 0.0), Location::new(4.0, 4.0)], &[3.0, 1.0]);
    assert!((l.lat - 1.0).abs() < 1e-12 && (l.lon - 1.0).abs() < 1e-12);
}

#[test]
fn single_image_model_returns_its_location() {
    let corpus = Corpus {
        images: vec![GeoImage {
            id: "only".into(),
            words: vec![TOWER],
            patches: vec![vec![0.5, 0.5]],
            location: Some(Location::new(48.8584, 2.2945)),
        }],
        vocab: vocab(),
        feature_dim: 2,
    };
    let assign = Assignments {
        images: vec![ImageAssign {
            region: 0,
            patch_topics: vec![1],
            word_topics: vec![Some(0)],
        }],
    };
    let m = ModelState::from_assignments(&corpus, Hyperparams::new(1, 2, 2), assign).unwrap();
    let q = Query {
        words: vec![BEACH],
        patches: vec![vec![-3.0, 9.0]],
    };
    let p = predict(&m, &q, &opts(Mode::TextVisual, 4), 0).unwrap();
    assert_eq!(p.location, Location::new(48.8584, 2.2945));
    assert!(p.truncated);
    assert_eq!(p.neighbors.len(), 1);
    assert_eq!(p.neighbors[0].weight, 1.0);
}

#[test]
fn mean_location_is_region_geo_mean() {
    let m = two_region_model();
    let q = Query {
        words: vec![BEACH],
        patches: vec![vec![8.0, 8.0]],
    };
    let o = PredictOptions {
        mean_location: true,
        ..opts(Mode::TextVisual, 4)
    };
    let p = predict(&m, &q, &o, 0).unwrap();
    assert_eq!(p.region, 1);
    let mean = m.geo.estimate(1).mean;
    assert_eq!(p.location, Location::new(mean[0], mean[1]));
    let p2 = predict(&m, &q, &opts(Mode::TextVisual, 4), 0).unwrap();
    assert_eq!(p.neighbors, p2.neighbors);
    assert!(p2.location.lat < -9.0);
}

#[test]
fn text_visual_without_words_matches_visual() {
    let m = two_region_model();
    let q = Query {
        words: vec![],
        patches: vec![vec![0.2, 0.1], vec![-0.1, 0.3]],
    };
    let tv = predict(&m, &q, &opts(Mode::TextVisual, 5), 3).unwrap();
    let v = predict(&m, &q, &opts(Mode::Visual, 5), 3).unwrap();
    assert!(tv.fell_back_to_visual && !v.fell_back_to_visual);
    assert_eq!(tv.location, v.location);
    assert_eq!(tv.region, v.region);
    assert_eq!(tv.topic_dist, v.topic_dist);
    assert_eq!(tv.neighbors, v.neighbors);
}

#[test]
fn prediction_is_deterministic_per_stream() {
    let m = two_region_model();
    let q = Query {
        words: vec![TOWER, 2],
        patches: vec![vec![0.0, 0.4]],
    };
    let o = opts(Mode::TextVisual, 4);
    assert_eq!(predict(&m, &q, &o, 9).unwrap(), predict(&m, &q, &o, 9).unwrap());
}

#[test]
fn region_relabeling_does_not_change_location() {
    let (corpus, assign) = two_region_corpus(12);
    let h = Hyperparams::new(2, 2, 2);
    let m = ModelState::from_assignments(&corpus, h.clone(), assign.clone()).unwrap();
    let mut swapped = assign;
    for a in &mut swapped.images {
        a.region = 1 - a.region;
    }
    let s = ModelState::from_assignments(&corpus, h, swapped).unwrap();
    for (words, patches) in [(vec![TOWER], vec![vec![0.0, 0.1]]), (vec![BEACH, 2], vec![vec![8.0, 7.5]])] {
        let q = Query { words, patches };
        let o = opts(Mode::TextVisual, 4);
        let a = predict(&m, &q, &o, 1).unwrap();
        let b = predict(&s, &q, &o, 1).unwrap();
        assert_eq!(a.region, 1 - b.region);
        assert!((a.location.lat - b.location.lat).abs() < 1e-12);
        assert!((a.location.lon - b.location.lon).abs() < 1e-12);
    }
}

#[test]
fn predictions_file_round_trip() {
    let m = two_region_model();
    let q = Query {
        words: vec![TOWER],
        patches: vec![vec![0.1, 0.1]],
    };
    let p = predict(&m, &q, &opts(Mode::TextVisual, 3), 0).unwrap();
    let mut recs = vec![PredictionRecord::new("q1", &p), PredictionRecord::new("q2", &p)];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pred.jsonl");
    save_predictions(&path, &recs).unwrap();
    let back = load_predictions(&path).unwrap();
    for r in &mut recs {
        r.neighbors.iter_mut().for_each(|n| n.location = None);
    }
    assert_eq!(back, recs);
    assert_eq!(back[0].location(), p.location);
    let line = std::fs::read_to_string(&path).unwrap();
    assert!(line.starts_with("{\"id\":\"q1\",\"lat\":"));
    assert!(line.contains("\"sim\":"));

    std::fs::write(&path, "{\"id\":1}\n").unwrap();
    assert!(matches!(load_predictions(&path), Err(Error::Parse { line: 1, .. })));
}

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum::<f64>() + 1e-9;
        let mut p: Vec<f64> = v.iter().map(|x| (x + 1e-9 / v.len() as f64) / s).collect();
        let t: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= t);
        p
    })
}

proptest! {
    #[test]
    fn coherence_weights_are_bounded_and_equivariant(
        dists in prop::collection::vec(simplex(4), 2..6),
        rot in 0usize..6,
    ) {
        let w = coherence_weights(&dists).unwrap();
        for &x in &w {
            prop_assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&x));
        }
        let n = dists.len();
        let r = rot % n;
        let mut rotated = dists.clone();
        rotated.rotate_left(r);
        let wr = coherence_weights(&rotated).unwrap();
        for i in 0..n {
            prop_assert!((wr[i] - w[(i + r) % n]).abs() < 1e-12);
        }
    }
}
