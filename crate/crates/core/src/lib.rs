//! Finite-time coherent sets of nonautonomous flows from Ulam
//! discretisations of the transfer operator.

// `!(x > 0.0)` is the NaN-rejecting guard used throughout; index loops mirror the maths.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boxgrid;
pub mod dataio;
pub mod error;
pub mod flowfield;
pub mod ftle;
pub mod partition;
pub mod pipeline;
pub mod sparse;
pub mod spectral;
pub mod ulam;
pub mod verify;

pub use error::{Error, Result};
