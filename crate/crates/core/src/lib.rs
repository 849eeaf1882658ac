//! Geographical multimodal topic model.
//!
//! Images carry text words, visual patch feature vectors and a location.
//! Training runs collapsed Gibbs sampling over latent regions (which
//! generate locations and region-specific words) and latent topics (which
//! generate words and patch features). A trained model predicts the
//! location of unseen images by picking a region and propagating the
//! locations of the most similar training images in it.

pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod generator;
pub mod model;
pub mod predictor;
pub mod rng;
pub mod sampler;
pub mod statdist;

pub use corpus::{Corpus, GeoImage, Location, Vocabulary};
pub use error::{Error, Result};
pub use model::{Hyperparams, ModelState, WordRule};
pub use predictor::{Mode, PredictOptions, Prediction, Query};
pub use sampler::{train, train_with_log, TrainSchedule};
