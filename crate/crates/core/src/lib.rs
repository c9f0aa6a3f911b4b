//! Streaming kernel component analysis with doubly stochastic gradients.
//!
//! Kernel PCA, kernel SVD, kernel CCA and per-component (GHA) eigenfunction
//! estimation, all represented as coefficients over seeded random Fourier
//! features that regenerate on demand. Desk-scale exact solvers and
//! subspace-angle diagnostics are included for verification.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
pub use kernel::{FeatureBlock, FeatureForm, KernelFamily, KernelSpec};
pub use model::{init_model, CoefficientModel, PairedModel};
