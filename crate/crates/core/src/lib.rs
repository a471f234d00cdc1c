//! Self-supervised representation learning for tabular data.
//!
//! The crate couples a contrastive objective over augmented views with a
//! variational reconstruction objective, optimized jointly over a shared
//! MLP encoder. It ships everything needed to run the pipeline end to end:
//!
//! - [`autodiff`]: dense f64 tensors and tape-based reverse-mode AD
//! - [`model`]: encoder trunk, projection head, variational heads, decoder
//! - [`loss`]: InfoNCE, Gaussian KL, reconstruction, combined objective
//! - [`optim`]: SGD / Adam / AdamW with a uniform step interface
//! - [`data`]: CSV ingestion, preprocessing, splits, augmentation, SMOTE
//! - [`train`]: pretraining loop and loss curves
//! - [`probe`]: frozen-feature linear probing
//! - [`metrics`]: confusion matrix and macro-averaged classification scores

pub mod autodiff;
pub mod data;
pub mod loss;
pub mod model;
pub mod optim;
pub mod rng;

pub use autodiff::{AutodiffError, Tape, Tensor, ValueId};
pub use loss::{LossBreakdown, LossError, LossWeights};
pub use model::{init_model, LinearParams, ModelBundle, ModelDims, ModelError};
pub use optim::{make_optimizer, OptimError, OptimizerConfig, OptimizerKind, OptimizerState};
