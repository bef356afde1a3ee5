//! Coordinated beamforming and power allocation for multicell multiuser MIMO
//! networks whose base stations use low-resolution ADCs and DACs.
//!
//! Quantization is linearized with the additive quantization noise model
//! (gain `alpha = 1 - beta`, diagonal noise covariance scaled by
//! `alpha * beta`). On top of that the crate provides:
//!
//! * [`scenario`]: hexagonal multicell layouts, user drops, log-distance
//!   pathloss with lognormal shadowing and Rayleigh fading, all normalized
//!   to unit receiver noise.
//! * [`quantizer`]: the `(alpha, beta)` pair, derived from a Lloyd-Max
//!   design for a unit Gaussian, and the uplink/downlink quantization noise
//!   covariances.
//! * [`uplink`]: the quantization-aware fixed-point power iteration with
//!   MMSE combining.
//! * [`downlink`]: optimal precoders obtained by scaling the uplink
//!   combiners, plus the downlink SINR evaluator.
//! * [`baseline`]: the per-cell iterative baseline that treats inter-cell
//!   interference as fixed noise, and per-user SINR reports.
//! * [`harness`]: seeded Monte-Carlo experiments, CDF and power-curve
//!   post-processing, CSV/JSON output.
//!
//! All powers inside the solvers are on the unit-noise scale; the harness
//! converts them to dBm.

// Index loops mirror the matrix formulas; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod coordinated;
pub mod downlink;
mod error;
pub mod harness;
pub(crate) mod linalg;
pub mod quantizer;
pub mod scenario;
pub mod uplink;

pub use error::{Error, Result};

/// Complex baseband sample type used throughout.
pub type C64 = num_complex::Complex64;

/// Converts a value in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear value to dB. Zero maps to negative infinity.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}
