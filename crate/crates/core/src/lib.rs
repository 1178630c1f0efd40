//! Sparse Bayesian multiview model with Gaussian-process ordinal labels.

pub mod cli;
pub mod em;
pub mod error;
pub mod io;
pub mod kernels;
pub mod labels_gp;
pub mod latent_opt;
pub mod lbfgs;
pub mod predict;
pub mod simbench;
pub mod specialmath;
pub mod types;
pub mod view_continuous;
pub mod view_ordinal;

pub use error::{Error, Result};
pub use types::*;
