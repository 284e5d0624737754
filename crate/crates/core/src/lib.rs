//! Polynomial joint densities on `[0, 1]^d` and conditional density
//! forecasts for time series.
//!
//! A return series is mapped to `[0, 1]` through a fitted marginal CDF
//! ([`marginal`]), windows of consecutive values are expanded in a product
//! basis of orthonormal polynomials ([`basis`], [`estimate`]), and the
//! density of the current value is obtained by substituting the previous
//! values ([`predict`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod basis;
pub mod config;
pub mod crossdeps;
pub mod error;
pub mod estimate;
pub mod eval;
pub mod ingest;
pub mod marginal;
pub mod optim;
pub mod pipeline;
pub mod predict;
pub mod quadrature;

pub use basis::OrthoBasis;
pub use error::{HcrError, Result};
