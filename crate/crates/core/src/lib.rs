//! Type-pair masked metric learning for outfit compatibility.
//!
//! Items carry general feature vectors. Every unordered pair of item types
//! owns a learnable elementwise mask, and compatibility between two items is
//! the L2 distance of their masked features. Training minimizes a triplet
//! hinge whose per-triplet weight is the triplet's own difficulty score times
//! a learned positive multiplier, plus a general-feature similarity term and
//! L1/L2 regularizers.
//!
//! Module map:
//!
//! - [`numcore`]: vector math, the reverse-mode tape, finite-difference checks
//! - [`data`]: datasets, the feature file format, manifests
//! - [`checkpoint`]: versioned binary checkpoints
//! - [`sampler`]: category-matched triplet sampling
//! - [`model`]: encoder and mask bank
//! - [`losses`]: the loss stack and its breakdown
//! - [`trainer`]: mini-batch optimization with linear learning-rate decay
//! - [`eval`]: fill-in-the-blank accuracy and compatibility AUC
//! - [`syngen`]: synthetic datasets with controllable hard distractors

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numcore;
pub mod sampler;
pub mod syngen;
pub mod trainer;

pub use data::{CompatQuestion, Dataset, FeatureStore, FitbQuestion, ItemId, ItemType, Manifest, Outfit};
pub use error::{Error, Result};
pub use eval::{CompatResult, FitbResult};
pub use losses::{LossBreakdown, LossConfig, LossWeights, Margin, TripletWeightTable};
pub use model::{Encoder, EncoderKind, MaskBank, Model, ModelConfig};
pub use numcore::{hinge, masked_l2, NodeId, ParamId, ParamStore, Tape, Vector};
pub use sampler::{SamplerConfig, Triplet, TripletKey};
pub use trainer::{LrSchedule, OptimizerKind, TrainConfig, Trainer};
