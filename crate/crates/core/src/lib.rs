//! Cox regression with time-varying effects and multiple imputation of missing
//! covariates.
//!
//! The crate is `no_std` (with `alloc`) and contains the numerical core: the survival
//! data model, time-varying effect bases, the partial-likelihood fitter, two
//! imputation methods, Rubin's-rules pooling with model selection, and the
//! simulation engine.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod basis;
pub mod cox;
pub mod error;
pub mod impute;
pub mod linalg;
pub mod pool;
pub mod sim;
pub mod special;
pub mod surv;
pub mod wald;

mod riskset;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
