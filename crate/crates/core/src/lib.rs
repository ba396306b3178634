//! Frequency-bin entangled photon pairs from domain-engineered nonlinear crystals:
//! crystal design, joint spectra, entanglement metrics, two-photon interference,
//! time-of-flight spectroscopy and polarization tomography.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod biphoton;
pub mod crystal;
pub mod error;
pub mod interference;
pub mod measurement;
pub mod peaks;
pub mod presets;
pub mod sampling;
pub mod tomography;

pub use error::{Error, Result};
