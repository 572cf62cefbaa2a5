//! Hybrid CNN/ViT/GNN weed detection.
//!
//! The crate is organised bottom-up: [`tensor`] and [`autodiff`] provide the
//! numeric substrate; [`imaging`] prepares inputs; [`backbone`] and [`heads`]
//! make up the multi-task model; [`gan`], [`ssl`] and [`train`] optimise it;
//! [`metrics`] and [`folds`] evaluate it; [`deploy`] packages it.

// `!(x > 0.0)` style checks reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod backbone;
pub mod dataset;
pub mod deploy;
pub mod error;
pub mod folds;
pub mod gan;
pub mod gradcheck;
pub mod heads;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod reports;
pub mod ssl;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use backbone::BackboneConfig;
pub use dataset::{PlantClass, Sample, NUM_CLASSES};
pub use deploy::{Checkpoint, CheckpointKind, QuantizedModel};
pub use error::{Error, Result};
pub use gan::{Gan, GanConfig};
pub use heads::{LossReport, LossWeights};
pub use imaging::{ImageU8, PreprocessConfig};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use model::{HybridModel, Prediction};
pub use optim::AdamConfig;
pub use params::{Bound, Gradients, ParamStore};
pub use ssl::ContrastiveConfig;
pub use tensor::Tensor;
pub use train::{EpochRecord, TrainConfig};
