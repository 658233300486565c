//! Bayesian sparse linear regression under spike-and-slab priors.

pub mod bvm;
pub mod diagnostics;
pub mod exact;
pub mod mcmc;
pub mod error;
pub mod lasso;
pub mod model;
pub mod numeric;
pub mod prediction;
pub mod priors;
pub mod quadrature;
pub mod rng;
pub mod twopiece;
pub mod within;

pub use error::{Error, Result};
pub use model::{DesignMatrix, Model, Observation, SparseCoef};
pub use rng::RngHandle;
