//! Bayesian longitudinal tensor quantile regression.
//!
//! A scalar outcome observed at several visits is regressed on a 2-D or 3-D
//! image at a fixed quantile level. The image coefficient splits into a shared
//! part `B0` and a visit-specific part `B_t`, both in low-rank PARAFAC form, and
//! is fitted by Gibbs sampling with a Metropolis step for the inclusion flags.

pub mod chain;
pub mod dist;
pub mod error;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod simulate;
pub mod special;
pub mod tensor;

pub use error::{Error, Result};

/// Crate version recorded in chain manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
