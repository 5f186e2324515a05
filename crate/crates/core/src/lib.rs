//! Impression-aware news recommendation: card rendering, cue decomposition,
//! an NRMS-style encoder with local and global impression modeling, training
//! and grouped ranking evaluation.

pub mod autodiff;
pub mod data;
pub mod dataset;
pub mod decompose;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod render;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
pub use dataset::{CheckpointMeta, ExtractorSpec, NewsTable};
pub use eval::{EvalReport, Slice, SliceReport};
pub use model::{ModelConfig, NewsInput, NrmsIm};
pub use train::{TrainConfig, TrainOutcome};
