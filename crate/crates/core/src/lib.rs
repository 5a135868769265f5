//! Multi-instance dynamic ordinal random fields.
//!
//! Sequences (bags) of feature vectors carry one ordinal label equal to the
//! maximum of their unobserved per-instance ordinal levels. MI-DORF models
//! the per-instance levels as a latent chain with ordinal probit node
//! potentials, learned transitions and a cardinality potential tying the
//! chain to the bag label. Inference and learning are exact.

pub mod baselines;
pub mod benchmark;
pub mod chain;
pub mod data;
pub mod error;
pub mod inference;
pub mod io;
pub mod lbfgs;
pub mod learning;
pub mod methods;
pub mod metrics;
pub mod params;
pub mod potentials;
pub mod synthgen;

pub use data::{Bag, Dataset, LatentAssignment, Level, OrdinalScale, TrainingSet, WeakBag};
pub use error::{Error, Result};
pub use params::{CutPoints, ModelParams, SquareMatrix};
