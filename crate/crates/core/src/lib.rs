#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Vector Dyson equation for random Gram matrices with a variance profile.
//!
//! The crate solves the self-consistent equation
//! `−1/m = ζ − S(1 + Sᵗm)⁻¹` through its linearized form on the combined
//! row/column index space, recovers the self-consistent density of states,
//! classifies its edges and cusps, computes the stability operators at a
//! spectral point and checks the results against sampled random matrices.

pub mod cli;
pub mod density;
pub mod dyson;
pub mod error;
pub(crate) mod linalg;
pub mod profile;
pub mod rmt_lab;
pub mod singularity;
pub mod stability;

pub use error::{Error, Result};
