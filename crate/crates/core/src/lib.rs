//! Multi-view depth estimation with iterative index updates over a plane-sweep
//! matching volume, attention-based feature fusion and learned pose
//! rectification.

pub mod checkpoint;
pub mod costvol;
pub mod data;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod posenet;
pub mod training;
pub mod updater;

pub use error::{Error, Result};
pub use data::SceneSample;
pub use geometry::{CameraIntrinsics, DepthBins, PoseSE3};
pub use metrics::DepthMetrics;
pub use model::{Model, ModelConfig, RunOptions, Variant};
pub use nn::ParamStore;
pub use numerics::{Graph, Tensor, Var};
pub use training::{TrainConfig, Trainer};
