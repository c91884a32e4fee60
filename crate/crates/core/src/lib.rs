//! Optomechanics with a polarization-split cavity.
//!
//! A single laser tone drives two orthogonally polarized cavity modes that are
//! split in frequency by mirror astigmatism. The crate predicts the combined
//! optical spring, damping and effective temperature, synthesizes and fits the
//! resulting thermal-noise spectra, models polarization-resolved sideband
//! thermometry, and estimates the splitting from a measured mirror surface.

// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod units;
pub mod model;
pub mod roots;
pub mod two_mode;
pub mod lsq;
pub mod spectra;
pub mod global_fit;
pub mod thermometry;
pub mod curvature;
pub mod config;
pub mod cli;
