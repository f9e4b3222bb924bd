//! Factorized episodic memory: `k` matrix-normal Kanerva Machines combined
//! through a generalized product and written with a shared prediction error.
//!
//! The building blocks, bottom up:
//!
//! - [`numerics`]: symmetric matrices, Cholesky, regularized least squares, KL.
//! - [`machine`]: a single Kanerva Machine (prior, addressing, read, write).
//! - [`product`]: the coupled product memory and its episode-level loops.
//! - [`assignment`]: machine-weight policies and the history buffer.
//! - [`mixture`]: the one-hot (gated) special case.
//! - [`oracle`]: a dense joint-Gaussian reference for the product write.
//! - [`episodes`], [`scaling`], [`report`], [`snapshot`]: experiments and I/O.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod episodes;
pub mod error;
pub mod machine;
pub mod mixture;
pub mod numerics;
pub mod oracle;
pub mod product;
pub mod report;
pub mod scaling;
pub mod snapshot;

pub use error::{Error, Result};
pub use numerics::{Matrix, SymMatrix, Vector};
pub use product::{ProductConfig, ProductState};
