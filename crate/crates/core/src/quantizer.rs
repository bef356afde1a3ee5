//! Additive quantization noise model.
//!
//! A `b`-bit scalar MMSE quantizer applied to the real and imaginary parts of
//! a Gaussian signal is replaced by `alpha * r + q`, where `q` is uncorrelated
//! with `r`, `beta = E|r - r_q|^2 / E|r|^2` is the normalized distortion and
//! `alpha = 1 - beta`. The distortion is obtained from a Lloyd-Max design for a
//! unit-variance Gaussian rather than from a lookup table.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::{Error, Result, C64};

pub const MAX_BITS: u32 = 12;

/// Level-movement tolerance used for the cached distortion values.
pub const ORACLE_TOLERANCE: f64 = 1e-13;
const ORACLE_MAX_ITERATIONS: usize = 200;

/// Converter resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resolution {
    Bits(u32),
    Infinite,
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resolution::Bits(b) => write!(f, "{b}"),
            Resolution::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinite" | "infinity" => Ok(Resolution::Infinite),
            other => other
                .parse::<u32>()
                .map(Resolution::Bits)
                .map_err(|_| Error::InvalidResolution(s.to_string())),
        }
    }
}

impl Serialize for Resolution {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Resolution::Bits(b) => serializer.serialize_u32(*b),
            Resolution::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Resolution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(b) => Ok(Resolution::Bits(b)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// The `(alpha, beta)` gain pair of one resolution. Shared by uplink ADCs and
/// downlink DACs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizerModel {
    pub bits: Resolution,
    pub alpha: f64,
    pub beta: f64,
}

impl QuantizerModel {
    pub fn perfect() -> Self {
        Self {
            bits: Resolution::Infinite,
            alpha: 1.0,
            beta: 0.0,
        }
    }

    /// Model with an explicit distortion, for hand-built instances.
    pub fn with_beta(beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidResolution(format!("beta {beta} outside [0, 1)")));
        }
        Ok(Self {
            bits: Resolution::Infinite,
            alpha: 1.0 - beta,
            beta,
        })
    }

    /// SINR above which a single-antenna, interference-free link cannot be
    /// served: the quantization noise grows with the signal itself.
    pub fn sinr_ceiling(&self) -> f64 {
        if self.beta == 0.0 {
            f64::INFINITY
        } else {
            self.alpha / self.beta
        }
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::InvalidResolution(format!(
            "{bits} bits (supported: 1..={MAX_BITS} or infinite)"
        )));
    }
    Ok(())
}

/// AQNM model for a resolution. Finite resolutions use the cached Lloyd-Max
/// distortion.
pub fn quantizer_model(bits: Resolution) -> Result<QuantizerModel> {
    match bits {
        Resolution::Infinite => Ok(QuantizerModel::perfect()),
        Resolution::Bits(b) => {
            let beta = cached_distortion(b)?;
            Ok(QuantizerModel {
                bits,
                alpha: 1.0 - beta,
                beta,
            })
        }
    }
}

fn cached_distortion(bits: u32) -> Result<f64> {
    check_bits(bits)?;
    static CACHE: [OnceLock<f64>; MAX_BITS as usize] = [const { OnceLock::new() }; MAX_BITS as usize];
    let slot = &CACHE[bits as usize - 1];
    if let Some(v) = slot.get() {
        return Ok(*v);
    }
    let d = lloyd_max(bits, ORACLE_TOLERANCE)?.distortion;
    Ok(*slot.get_or_init(|| d))
}

/// Scalar quantizer codebook for a unit-variance Gaussian input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarCodebook {
    pub bits: u32,
    /// Interior decision thresholds, ascending (`2^b - 1` entries).
    pub thresholds: Vec<f64>,
    /// Reconstruction levels, ascending (`2^b` entries).
    pub levels: Vec<f64>,
    /// Mean squared error for a unit-variance Gaussian input.
    pub distortion: f64,
    pub iterations: usize,
}

impl ScalarCodebook {
    pub fn quantize(&self, x: f64) -> f64 {
        self.levels[self.thresholds.partition_point(|&t| t < x)]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        INV_SQRT_2PI * (-0.5 * x * x).exp()
    }
}

/// Upper tail `P(X > x)`.
fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `P(a < X < b)`, evaluated on whichever tail keeps precision.
fn cell_probability(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        upper_tail(-b) - upper_tail(-a)
    } else {
        1.0 - upper_tail(b) - upper_tail(-a)
    }
}

/// `(P, E[X; cell], E[X^2; cell])` for the cell `(a, b)`.
fn cell_moments(a: f64, b: f64) -> (f64, f64, f64) {
    let p = cell_probability(a, b);
    let m1 = pdf(a) - pdf(b);
    let xa = if a.is_infinite() { 0.0 } else { a * pdf(a) };
    let xb = if b.is_infinite() { 0.0 } else { b * pdf(b) };
    (p, m1, p + xa - xb)
}

fn edges(thresholds: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
    let n = thresholds.len();
    (0..=n).map(move |k| {
        let lo = if k == 0 { f64::NEG_INFINITY } else { thresholds[k - 1] };
        let hi = if k == n { f64::INFINITY } else { thresholds[k] };
        (lo, hi)
    })
}

/// Mean squared error of an arbitrary codebook against a unit Gaussian.
pub fn gaussian_distortion(thresholds: &[f64], levels: &[f64]) -> f64 {
    edges(thresholds)
        .zip(levels)
        .map(|((a, b), &y)| {
            let (p, m1, m2) = cell_moments(a, b);
            m2 - 2.0 * y * m1 + y * y * p
        })
        .sum()
}

/// Lloyd-Max design for a unit Gaussian.
///
/// Solves the stationarity conditions (every level is the centroid of its
/// cell, every threshold the midpoint of its neighbours) by Newton's method on
/// the levels. The Jacobian is tridiagonal, so each step is linear in the
/// number of levels. Starts from the high-resolution compander solution
/// (thresholds at the quantiles of a Gaussian with variance 3) and stops once
/// no level moves by `tolerance` or more.
pub fn lloyd_max(bits: u32, tolerance: f64) -> Result<ScalarCodebook> {
    check_bits(bits)?;
    if !(tolerance > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    let n_levels = 1usize << bits;
    let initial: Vec<f64> = (1..n_levels)
        .map(|k| {
            let p = k as f64 / n_levels as f64;
            // Phi^{-1}(p) = -sqrt(2) erfc^{-1}(2p)
            -3f64.sqrt() * std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
        })
        .collect();
    let mut levels: Vec<f64> = edges(&initial)
        .map(|(a, b)| {
            let (p, m1, _) = cell_moments(a, b);
            m1 / p
        })
        .collect();

    let mut residual = centroid_residual(&levels);
    for iteration in 1..=ORACLE_MAX_ITERATIONS {
        let step = newton_step(&levels, &residual);
        let current = max_abs(&residual);
        let mut scale = 1.0;
        let mut trial = levels.clone();
        loop {
            for (t, (y, d)) in trial.iter_mut().zip(levels.iter().zip(&step)) {
                *t = y + scale * d;
            }
            let ordered = trial.windows(2).all(|w| w[0] < w[1]);
            if ordered {
                let r = centroid_residual(&trial);
                if max_abs(&r) <= current || scale < 1e-6 {
                    residual = r;
                    break;
                }
            }
            scale *= 0.5;
            if scale < 1e-9 {
                return Err(Error::Oracle {
                    bits,
                    iterations: iteration,
                });
            }
        }
        let movement = scale * max_abs(&step);
        levels = trial;
        if movement < tolerance {
            let thresholds = midpoints(&levels);
            let distortion = gaussian_distortion(&thresholds, &levels);
            return Ok(ScalarCodebook {
                bits,
                thresholds,
                levels,
                distortion,
                iterations: iteration,
            });
        }
    }
    Err(Error::Oracle {
        bits,
        iterations: ORACLE_MAX_ITERATIONS,
    })
}

fn midpoints(levels: &[f64]) -> Vec<f64> {
    levels.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y_k - centroid_k` with thresholds at the midpoints of `levels`.
fn centroid_residual(levels: &[f64]) -> Vec<f64> {
    let thresholds = midpoints(levels);
    edges(&thresholds)
        .zip(levels)
        .map(|((a, b), y)| {
            let (p, m1, _) = cell_moments(a, b);
            y - m1 / p
        })
        .collect()
}

/// Solves `J d = -residual` for the tridiagonal Jacobian of
/// [`centroid_residual`].
fn newton_step(levels: &[f64], residual: &[f64]) -> Vec<f64> {
    let n = levels.len();
    let thresholds = midpoints(levels);
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for (k, (a, b)) in edges(&thresholds).enumerate() {
        let (p, m1, _) = cell_moments(a, b);
        let c = m1 / p;
        // d centroid / d a and d centroid / d b; each threshold moves by half
        // of each neighbouring level's change.
        let dca = if a.is_finite() { pdf(a) * (c - a) / p } else { 0.0 };
        let dcb = if b.is_finite() { pdf(b) * (b - c) / p } else { 0.0 };
        lower[k] = -0.5 * dca;
        upper[k] = -0.5 * dcb;
        diag[k] = 1.0 - 0.5 * dca - 0.5 * dcb;
    }
    // Thomas algorithm.
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    for k in 0..n {
        let denom = if k == 0 {
            diag[0]
        } else {
            diag[k] - lower[k] * c_prime[k - 1]
        };
        c_prime[k] = upper[k] / denom;
        let prev = if k == 0 { 0.0 } else { lower[k] * d_prime[k - 1] };
        d_prime[k] = (-residual[k] - prev) / denom;
    }
    let mut x = d_prime;
    for k in (0..n.saturating_sub(1)).rev() {
        x[k] -= c_prime[k] * x[k + 1];
    }
    x
}

/// Monte-Carlo distortion ratio with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaEstimate {
    pub beta: f64,
    pub std_error: f64,
}

/// `sum (x - Q(x))^2 / sum x^2` over unit-Gaussian samples.
pub fn empirical_beta<R: Rng + ?Sized>(bits: Resolution, n_samples: usize, rng: &mut R) -> Result<f64> {
    Ok(empirical_beta_estimate(bits, n_samples, rng)?.beta)
}

/// As [`empirical_beta`], with a delta-method standard error for the ratio.
pub fn empirical_beta_estimate<R: Rng + ?Sized>(
    bits: Resolution,
    n_samples: usize,
    rng: &mut R,
) -> Result<BetaEstimate> {
    if n_samples < 10_000 {
        return Err(Error::InvalidInput(format!(
            "need at least 1e4 samples, got {n_samples}"
        )));
    }
    let codebook = match bits {
        Resolution::Infinite => {
            return Ok(BetaEstimate {
                beta: 0.0,
                std_error: 0.0,
            })
        }
        Resolution::Bits(b) => {
            check_bits(b)?;
            lloyd_max(b, ORACLE_TOLERANCE)?
        }
    };
    let samples: Vec<(f64, f64)> = (0..n_samples)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            let e = x - codebook.quantize(x);
            (e * e, x * x)
        })
        .collect();
    let n = n_samples as f64;
    let err: f64 = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let pow: f64 = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let beta = err / pow;
    let var = samples.iter().map(|&(e, p)| (e - beta * p).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BetaEstimate {
        beta,
        std_error: (var / n).sqrt() / pow,
    })
}

/// Uplink quantization noise covariance `alpha beta diag(H Lambda H^H + I)`,
/// returned as its real diagonal.
pub fn ul_quant_cov(channels: &DMatrix<C64>, powers: &[f64], q: &QuantizerModel) -> Result<DVector<f64>> {
    if channels.ncols() != powers.len() {
        return Err(Error::Dimension(format!(
            "{} channel columns but {} powers",
            channels.ncols(),
            powers.len()
        )));
    }
    if powers.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidInput("powers must be nonnegative".into()));
    }
    let scale = q.alpha * q.beta;
    let mut diag = received_power_diag(channels, powers);
    diag.iter_mut().for_each(|d| *d = scale * (*d + 1.0));
    Ok(diag)
}

/// Downlink quantization noise covariance `alpha beta diag(W W^H)`, returned
/// as its real diagonal.
pub fn dl_quant_cov(precoders: &DMatrix<C64>, q: &QuantizerModel) -> DVector<f64> {
    let scale = q.alpha * q.beta;
    DVector::from_iterator(
        precoders.nrows(),
        precoders.row_iter().map(|row| scale * row.norm_squared()),
    )
}

/// `diag(H Lambda H^H)` without forming the full Gram matrix.
pub(crate) fn received_power_diag(channels: &DMatrix<C64>, powers: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        channels.nrows(),
        channels
            .row_iter()
            .map(|row| row.iter().zip(powers).map(|(h, p)| p * h.norm_sqr()).sum()),
    )
}

/// Full matrix form of [`ul_quant_cov`].
pub fn ul_quant_cov_matrix(channels: &DMatrix<C64>, powers: &[f64], q: &QuantizerModel) -> Result<DMatrix<C64>> {
    let diag = ul_quant_cov(channels, powers, q)?;
    Ok(DMatrix::from_diagonal(&diag.map(C64::from)))
}
