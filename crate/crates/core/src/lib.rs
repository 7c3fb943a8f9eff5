//! In-season crop growth stage estimation.
//!
//! The crate covers the whole pipeline: a synthetic season generator, the
//! preprocessing that turns daily field records into scaled weekly district
//! blocks, a small reverse-mode autodiff engine with the layers needed by three
//! neural estimators, an HMM baseline, and the training and evaluation
//! protocol with its metrics.

pub mod architectures;
pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod hmm;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod train;
pub mod types;

pub use architectures::{Arch, Batch, Model, ModelSpec, Tap};
pub use autodiff::{Tape, Var};
pub use checkpoint::Checkpoint;
pub use error::{Error, ErrorClass, Result};
pub use params::{Gradients, ParamId, ParamStore};
pub use pipeline::{PipelineConfig, RunManifest};
pub use metrics::{evaluate, MetricsReport, StageEstimator};
pub use tensor::Tensor;
pub use train::{History, TrainConfig};
pub use types::{Channel, Sample, SeasonFeatures, Stage, StageDistribution, CHANNELS, LOCATIONS, STAGES, WEEKS};
