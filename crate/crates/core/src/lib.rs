//! Neighborhood contrastive learning for novel class discovery.
//!
//! A labeled split with known classes and an unlabeled split with disjoint,
//! unknown classes are drawn from a seeded Gaussian mixture. An encoder with
//! two softmax heads is pretrained, fine-tuned on the labeled classes, then
//! trained to cluster the unlabeled split with pairwise pseudo-labels,
//! consistency, queue-based contrastive terms with mined pseudo-positives,
//! and synthetic hard negatives.
//!
//! The math modules are generic over [`Scalar`] (`f32`/`f64`); the
//! training pipeline and the aliases below use `f64`.

pub mod data;
pub mod error;
pub mod eval;
pub mod hng;
pub mod losses;
pub mod memory;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = model::ModelState<f64>;
pub type Optimizer = model::OptimizerState<f64>;
pub type UnlabeledQueue = memory::FeatureQueue<f64>;
pub type LabeledFeatureQueue = memory::LabeledQueue<f64>;
pub type Report = losses::LossReport<f64>;
pub type Checkpoint = model::Checkpoint<f64>;
