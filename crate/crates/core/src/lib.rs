//! Bayesian model selection for structured linear models.
//!
//! A structured linear model writes the mean of `Y` as `X_Z Q`, where a
//! discrete structure `Z` picks a linear operator and `Q` is a continuous
//! parameter. The prior draws a model index with a complexity penalty, a
//! structure uniformly from the index's structure space, and `Q` from an
//! elliptical Laplace law. This crate computes that posterior exactly by
//! enumeration or by collapsed Metropolis–Hastings, and ships an
//! experiment harness for contraction-rate studies.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod family;
pub mod instances;
pub mod marginal;
pub mod prior;
pub mod quad;
pub mod rng;
pub mod sampler;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use family::{ComplexityValue, FamilyKind, ModelFamily, ModelIndex};
pub use instances::Structure;
