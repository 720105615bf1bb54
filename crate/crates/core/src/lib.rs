//! Numerical laboratory for bulk universality of sparse random matrices.
//!
//! The crate samples sparse Erdős–Rényi and generalized sparse ensembles,
//! evolves them under the matrix Ornstein–Uhlenbeck flow, solves the
//! free-convolution fixed point and measures bulk spectral statistics
//! against the GOE.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ensembles;
pub mod error;
pub mod flow;
pub mod free_conv;
pub mod rng;
pub mod spectral;
pub mod statistics;

pub use error::{Error, Result};
