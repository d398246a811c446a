//! Latent interaction-graph learning for multi-entity trajectories.
//!
//! An encoder infers a distribution over three edge types for every ordered
//! pair of entities; a decoder rolls the system forward under sampled edges.
//! The trained edge posteriors drive trajectory prediction and a per-node
//! ranking of which entities changed mechanism between two regimes.

pub mod adam;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod format;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rca;
pub mod registry;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tensor;
pub mod training;

pub use data::{Regime, RegimeLabels, SplitSpec, TrajectoryCorpus};
pub use error::{Error, Result};
pub use model::{EdgePosterior, ModelParams, ModelShape};
pub use rca::{GroundTruthOracle, RcaReport};
pub use rng::Rng;
pub use synth::{HbCriterion, ScmSpec};
pub use tensor::Tensor;
pub use training::{Checkpoint, TrainConfig};
