//! Browser demo: draws a synthetic scene, trains a model a few sweeps at a
//! time and predicts the location of a held-out image picked by clicking.
//!
//! Every operation returns a JSON string. The plain Rust methods are what
//! the native tests exercise; the `#[wasm_bindgen]` wrappers only convert
//! errors.

use gtmi::evaluator::{distance, Metric};
use gtmi::generator::{generate_corpus, make_ground_truth, GenSpec, GroundTruthConfig, GroundTruthModel};
use gtmi::model::Assignments;
use gtmi::rng::{stream_rng, Stream, StreamRng};
use gtmi::sampler::{init_state, Chain};
use gtmi::{Corpus, GeoImage, Hyperparams, Mode, ModelState, PredictOptions, Query};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const VOCAB: usize = 60;
const FEATURE_DIM: usize = 4;
const SEPARATION: f64 = 5.0;
const QUERIES: usize = 60;
const MAX_SWEEPS_PER_CALL: u32 = 200;

#[wasm_bindgen]
pub struct Demo {
    seed: u64,
    gt: GroundTruthModel,
    corpus: Corpus,
    train_regions: Vec<u32>,
    queries: Vec<GeoImage>,
    query_regions: Vec<u32>,
    hyper: Hyperparams,
    rng: StreamRng,
    assign: Option<Assignments>,
    model: Option<ModelState>,
    sweeps: usize,
    joint_ll: f64,
}

#[derive(Serialize)]
struct Scene {
    /// `[min_lat, max_lat, min_lon, max_lon]` over all points.
    bounds: [f64; 4],
    /// `[lat, lon, true region]` per training image.
    train: Vec<[f64; 3]>,
    /// `[lat, lon, true region]` per held-out image.
    queries: Vec<[f64; 3]>,
    /// True region location means.
    region_means: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct RegionSummary {
    lat: f64,
    lon: f64,
    images: u32,
}

#[derive(Serialize)]
struct TrainStatus {
    sweeps: usize,
    joint_ll: f64,
    regions: Vec<RegionSummary>,
    /// Learned region per training image.
    assignment: Vec<u32>,
}

#[derive(Serialize)]
struct PredictionView {
    id: String,
    query: usize,
    truth: [f64; 2],
    predicted: [f64; 2],
    region: usize,
    error_km: f64,
    /// `[lat, lon, weight]` per neighbor.
    neighbors: Vec<[f64; 3]>,
    mode: Mode,
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

impl Demo {
    pub fn create(seed: u64, regions: usize, topics: usize, images: usize) -> Result<Demo, String> {
        let gt = make_ground_truth(&GroundTruthConfig::new(regions, topics, VOCAB, FEATURE_DIM, seed, SEPARATION))
            .map_err(|e| e.to_string())?;
        let (corpus, truth) = generate_corpus(&gt, &GenSpec::new(images, seed)).map_err(|e| e.to_string())?;
        let mut qspec = GenSpec::new(QUERIES, seed.wrapping_add(1));
        qspec.id_prefix = "q".into();
        let (queries, qtruth) = generate_corpus(&gt, &qspec).map_err(|e| e.to_string())?;
        let hyper = Hyperparams::new(regions, topics, FEATURE_DIM);
        hyper.validate().map_err(|e| e.to_string())?;
        if images < regions {
            return Err(format!("need at least {regions} images"));
        }
        Ok(Demo {
            seed,
            gt,
            corpus,
            train_regions: truth.images.iter().map(|t| t.region).collect(),
            queries: queries.images,
            query_regions: qtruth.images.iter().map(|t| t.region).collect(),
            hyper,
            rng: stream_rng(seed, Stream::Sweeps),
            assign: None,
            model: None,
            sweeps: 0,
            joint_ll: f64::NAN,
        })
    }

    pub fn scene(&self) -> Result<String, String> {
        let point = |im: &GeoImage, r: u32| {
            let l = im.location.expect("generated images carry locations");
            [l.lat, l.lon, f64::from(r)]
        };
        let train: Vec<[f64; 3]> = self
            .corpus
            .images
            .iter()
            .zip(&self.train_regions)
            .map(|(im, &r)| point(im, r))
            .collect();
        let queries: Vec<[f64; 3]> = self
            .queries
            .iter()
            .zip(&self.query_regions)
            .map(|(im, &r)| point(im, r))
            .collect();
        let mut bounds = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
        for p in train.iter().chain(&queries) {
            bounds[0] = bounds[0].min(p[0]);
            bounds[1] = bounds[1].max(p[0]);
            bounds[2] = bounds[2].min(p[1]);
            bounds[3] = bounds[3].max(p[1]);
        }
        to_json(&Scene {
            bounds,
            train,
            queries,
            region_means: self.gt.regions.iter().map(|r| r.mu_l).collect(),
        })
    }

    /// Runs `sweeps` more Gibbs sweeps; per-image topic counts are averaged
    /// over the second half of this batch.
    pub fn run_sweeps(&mut self, sweeps: u32) -> Result<String, String> {
        if sweeps == 0 || sweeps > MAX_SWEEPS_PER_CALL {
            return Err(format!("sweeps must be in 1..={MAX_SWEEPS_PER_CALL}"));
        }
        let mut chain = match self.assign.take() {
            Some(a) => Chain::from_assignments(&self.corpus, self.hyper.clone(), a),
            None => init_state(&self.corpus, self.hyper.clone(), self.seed),
        }
        .map_err(|e| e.to_string())?;
        for s in 0..sweeps {
            chain.sweep(&mut self.rng);
            if s >= sweeps / 2 {
                chain.accumulate();
            }
        }
        self.joint_ll = chain.joint_log_likelihood();
        let model = chain.freeze(true);
        self.sweeps += sweeps as usize;
        self.assign = model.assign.clone();
        self.model = Some(model);
        self.status()
    }

    pub fn status(&self) -> Result<String, String> {
        let Some(m) = &self.model else {
            return Err("not trained yet".into());
        };
        let regions = (0..m.regions())
            .map(|r| {
                let e = m.geo.estimate(r);
                RegionSummary {
                    lat: e.mean[0],
                    lon: e.mean[1],
                    images: m.counts.region_images[r],
                }
            })
            .collect();
        to_json(&TrainStatus {
            sweeps: self.sweeps,
            joint_ll: self.joint_ll,
            regions,
            assignment: m.images.iter().map(|im| im.region).collect(),
        })
    }

    /// Predicts the held-out image nearest to the clicked point.
    pub fn predict_near(&self, lat: f64, lon: f64, visual_only: bool) -> Result<String, String> {
        let model = self.model.as_ref().ok_or("train the model first")?;
        let d = |im: &GeoImage| {
            let l = im.location.expect("generated images carry locations");
            (l.lat - lat).powi(2) + (l.lon - lon).powi(2)
        };
        let i = (0..self.queries.len())
            .min_by(|&a, &b| d(&self.queries[a]).total_cmp(&d(&self.queries[b])))
            .ok_or("no queries")?;
        let q = &self.queries[i];
        let mode = if visual_only { Mode::Visual } else { Mode::TextVisual };
        let opts = PredictOptions::new(mode, self.seed);
        let p = gtmi::predictor::predict(model, &Query::from(q), &opts, i as u32).map_err(|e| e.to_string())?;
        let truth = q.location.expect("generated images carry locations");
        to_json(&PredictionView {
            id: q.id.clone(),
            query: i,
            truth: [truth.lat, truth.lon],
            predicted: [p.location.lat, p.location.lon],
            region: p.region,
            error_km: distance(p.location, truth, Metric::HaversineKm).map_err(|e| e.to_string())?,
            neighbors: p
                .neighbors
                .iter()
                .filter_map(|n| n.location.map(|l| [l.lat, l.lon, n.weight]))
                .collect(),
            mode,
        })
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, regions: u32, topics: u32, images: u32) -> Result<Demo, JsError> {
        Demo::create(u64::from(seed), regions as usize, topics as usize, images as usize).map_err(|e| JsError::new(&e))
    }

    /// Scene geometry as JSON.
    #[wasm_bindgen(js_name = sceneJson)]
    pub fn scene_json(&self) -> Result<String, JsError> {
        self.scene().map_err(|e| JsError::new(&e))
    }

    /// Runs more sweeps and returns the training status as JSON.
    pub fn train(&mut self, sweeps: u32) -> Result<String, JsError> {
        self.run_sweeps(sweeps).map_err(|e| JsError::new(&e))
    }

    /// Prediction for the held-out image nearest to `(lat, lon)` as JSON.
    pub fn predict(&self, lat: f64, lon: f64, visual_only: bool) -> Result<String, JsError> {
        self.predict_near(lat, lon, visual_only).map_err(|e| JsError::new(&e))
    }
}
