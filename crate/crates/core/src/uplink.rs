//! Uplink power minimization under SINR targets with quantized receivers.
//!
//! The optimal powers are the unique fixed point of
//!
//! ```text
//! lambda_{i,u} = 1 / ( alpha (1 + 1/gamma_{i,u}) h_{i,i,u}^H K_i(Lambda)^{-1} h_{i,i,u} )
//! K_i(Lambda)  = I + alpha sum_{j,v} lambda_{j,v} h_{i,j,v} h_{i,j,v}^H + beta diag(H_i Lambda H_i^H)
//! ```
//!
//! which is a standard interference function, so the plain iteration from
//! zero increases monotonically to the fixed point whenever the targets are
//! feasible. Linear systems in `K_i` go through a Cholesky factorization;
//! no inverse is formed.

use std::borrow::Cow;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::linalg::{add_to_diagonal, cholesky, quad_form_diag, real_diagonal, weighted_gram};
use crate::quantizer::{received_power_diag, QuantizerModel};
use crate::scenario::NetworkScenario;
use crate::{Error, Result, C64};

/// Iterations between checks of the infeasibility certificate.
const CERTIFICATE_PERIOD: usize = 8;
const RELATIVE_FLOOR: f64 = 1e-30;
/// Relative slack in the certificate comparison. Required powers grow like
/// `1 / (1 - rho)`, so a spectral radius this close to one is beyond any
/// useful power cap, and the slack absorbs rounding exactly at the bound.
const CERTIFICATE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Stop when the estimated largest relative distance to the fixed point
    /// (last relative change over one minus the observed contraction rate)
    /// drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Any power above this (unit-noise scale) is declared infeasible.
    pub power_cap: f64,
    pub initial_power: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
            power_cap: 1e12,
            initial_power: 0.0,
        }
    }
}

impl SolverOptions {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || !(self.power_cap > 0.0) || !(self.initial_power >= 0.0) {
            return Err(Error::InvalidInput(format!("invalid solver options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UplinkStatus {
    Optimal,
    Infeasible,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct UplinkSolution {
    /// `lambda_{i,u}` on the unit-noise scale, flat index `i * N_u + u`.
    pub powers: Vec<f64>,
    /// `F_i`, one `N_b x N_u` matrix of MMSE combiners per cell, evaluated at
    /// `powers`.
    pub combiners: Vec<DMatrix<C64>>,
    /// Linear SINR targets, flat index.
    pub targets: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub status: UplinkStatus,
    /// Largest `|SINR - target| / target` over users at `powers`.
    pub max_sinr_error: f64,
}

impl UplinkSolution {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn combiner(&self, cell: usize, user: usize) -> DVectorView<'_, C64> {
        self.combiners[cell].column(user)
    }
}

/// One receiver in a fixed-point problem: the channels of every user that
/// has a power variable, the noise term that takes the place of `I` in `K`,
/// and the users it decodes.
pub(crate) struct Receiver<'a> {
    pub channels: Cow<'a, DMatrix<C64>>,
    pub base: Option<DMatrix<C64>>,
    pub served: Range<usize>,
}

impl Receiver<'_> {
    fn n_antennas(&self) -> usize {
        self.channels.nrows()
    }

    /// `(K, sum_k lambda_k h_k h_k^H, diag of that sum)`.
    fn covariance(&self, powers: &[f64], q: &QuantizerModel) -> (DMatrix<C64>, DMatrix<C64>, DVector<f64>) {
        let gram = weighted_gram(&self.channels, powers);
        let diag = real_diagonal(&gram);
        let mut k = match &self.base {
            Some(b) => b.clone(),
            None => DMatrix::identity(self.n_antennas(), self.n_antennas()),
        };
        k += &gram * C64::from(q.alpha);
        add_to_diagonal(&mut k, &diag, q.beta);
        (k, gram, diag)
    }

    /// Writes the update-map values of the served users into `out`, and
    /// optionally the asymptotic map (the same expression with the noise
    /// term dropped) into `asymptotic`.
    fn update(
        &self,
        powers: &[f64],
        targets: &[f64],
        q: &QuantizerModel,
        out: &mut [f64],
        asymptotic: Option<&mut Vec<f64>>,
    ) -> Result<bool> {
        let (k, gram, diag) = self.covariance(powers, q);
        let chol = cholesky(k).ok_or_else(|| Error::Numerical("K is not positive definite".into()))?;
        for idx in self.served.clone() {
            let h = self.channels.column(idx).into_owned();
            let x = chol.solve(&h);
            let quad = h.dotc(&x).re;
            out[idx] = 1.0 / (q.alpha * (1.0 + 1.0 / targets[idx]) * quad);
        }
        let Some(asym) = asymptotic else {
            return Ok(true);
        };
        let mut k_inf = gram * C64::from(q.alpha);
        add_to_diagonal(&mut k_inf, &diag, q.beta);
        let Some(chol) = cholesky(k_inf) else {
            return Ok(false);
        };
        for idx in self.served.clone() {
            let h = self.channels.column(idx).into_owned();
            let quad = h.dotc(&chol.solve(&h)).re;
            if !(quad > 0.0) {
                return Ok(false);
            }
            asym[idx] = 1.0 / (q.alpha * (1.0 + 1.0 / targets[idx]) * quad);
        }
        Ok(true)
    }

    /// MMSE combiners of the served users, one column each.
    fn combiners(&self, powers: &[f64], q: &QuantizerModel) -> Result<DMatrix<C64>> {
        let nb = self.n_antennas();
        let (k, _, _) = self.covariance(powers, q);
        let mut out = DMatrix::zeros(nb, self.served.len());
        for (col, idx) in self.served.clone().enumerate() {
            let h = self.channels.column(idx);
            // alpha (K - alpha lambda h h^H) is the interference-plus-noise
            // covariance seen by this user after quantization.
            let mut cz = &k - (h * h.adjoint()) * C64::from(q.alpha * powers[idx]);
            cz *= C64::from(q.alpha);
            let chol = cholesky(cz)
                .ok_or_else(|| Error::Numerical("interference covariance is not positive definite".into()))?;
            out.set_column(col, &chol.solve(&h.into_owned()));
        }
        Ok(out)
    }
}

pub(crate) struct IterationOutcome {
    pub powers: Vec<f64>,
    pub iterations: usize,
    pub status: UplinkStatus,
}

/// Runs the Jacobi fixed-point iteration over all receivers.
///
/// Besides the power cap, infeasibility is detected with a certificate: if
/// the asymptotic map `T(x) = lim F(s x) / s` satisfies `T(x) >= x` at a
/// positive iterate, its spectral radius is at least one and no fixed point
/// exists (F is concave with `F(x) - F(0) >= T(x)`).
pub(crate) fn iterate(
    receivers: &[Receiver<'_>],
    targets: &[f64],
    q: &QuantizerModel,
    opts: &SolverOptions,
    init: Vec<f64>,
) -> Result<IterationOutcome> {
    let n = targets.len();
    let mut powers = init;
    let mut next = vec![0.0; n];
    let mut asymptotic = vec![0.0; n];
    let mut previous_change = f64::INFINITY;
    for iteration in 1..=opts.max_iterations {
        let check = iteration % CERTIFICATE_PERIOD == 0 && powers.iter().all(|&p| p > 0.0);
        let mut certificate = check;
        for rx in receivers {
            let complete = rx.update(&powers, targets, q, &mut next, check.then_some(&mut asymptotic))?;
            certificate &= complete;
        }
        if next.iter().any(|p| !p.is_finite() || *p > opts.power_cap) {
            if next.iter().all(|p| p.is_finite()) {
                powers.copy_from_slice(&next);
            }
            return Ok(IterationOutcome {
                powers,
                iterations: iteration,
                status: UplinkStatus::Infeasible,
            });
        }
        if certificate
            && asymptotic
                .iter()
                .zip(&powers)
                .all(|(t, p)| *t >= p * (1.0 - CERTIFICATE_SLACK))
        {
            powers.copy_from_slice(&next);
            return Ok(IterationOutcome {
                powers,
                iterations: iteration,
                status: UplinkStatus::Infeasible,
            });
        }
        let change = next
            .iter()
            .zip(&powers)
            .map(|(a, b)| (a - b).abs() / b.max(RELATIVE_FLOOR))
            .fold(0.0, f64::max);
        std::mem::swap(&mut powers, &mut next);
        // The iteration contracts geometrically near the fixed point, so the
        // remaining distance is about change / (1 - rate).
        let rate = if previous_change > 0.0 {
            change / previous_change
        } else {
            1.0
        };
        previous_change = change;
        if change < opts.tolerance * (1.0 - rate).clamp(0.0, 1.0) || change == 0.0 {
            return Ok(IterationOutcome {
                powers,
                iterations: iteration,
                status: UplinkStatus::Optimal,
            });
        }
    }
    Ok(IterationOutcome {
        powers,
        iterations: opts.max_iterations,
        status: UplinkStatus::IterationCap,
    })
}

fn receivers(scenario: &NetworkScenario) -> Vec<Receiver<'_>> {
    let nu = scenario.n_users_per_cell();
    (0..scenario.n_cells())
        .map(|i| Receiver {
            channels: Cow::Borrowed(scenario.bs_channels(i)),
            base: None,
            served: i * nu..(i + 1) * nu,
        })
        .collect()
}

fn check_powers(scenario: &NetworkScenario, powers: &[f64]) -> Result<()> {
    if powers.len() != scenario.n_users_total() {
        return Err(Error::Dimension(format!(
            "{} powers for {} users",
            powers.len(),
            scenario.n_users_total()
        )));
    }
    if powers.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidInput("powers must be finite and nonnegative".into()));
    }
    Ok(())
}

pub(crate) fn check_targets(n_users: usize, targets: &[f64]) -> Result<()> {
    if targets.len() != n_users {
        return Err(Error::Dimension(format!(
            "{} targets for {n_users} users",
            targets.len()
        )));
    }
    if targets.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidInput("SINR targets must be positive and finite".into()));
    }
    Ok(())
}

fn check_cell(scenario: &NetworkScenario, cell: usize) -> Result<()> {
    if cell >= scenario.n_cells() {
        return Err(Error::Dimension(format!("cell {cell} out of {}", scenario.n_cells())));
    }
    Ok(())
}

/// `K_i(Lambda)` for base station `cell`.
pub fn build_k(scenario: &NetworkScenario, powers: &[f64], q: &QuantizerModel, cell: usize) -> Result<DMatrix<C64>> {
    check_powers(scenario, powers)?;
    check_cell(scenario, cell)?;
    let rx = Receiver {
        channels: Cow::Borrowed(scenario.bs_channels(cell)),
        base: None,
        served: 0..0,
    };
    Ok(rx.covariance(powers, q).0)
}

/// One application of the fixed-point map to every user.
pub fn update_map(scenario: &NetworkScenario, targets: &[f64], q: &QuantizerModel, powers: &[f64]) -> Result<Vec<f64>> {
    check_powers(scenario, powers)?;
    check_targets(scenario.n_users_total(), targets)?;
    let mut out = vec![0.0; powers.len()];
    for rx in receivers(scenario) {
        rx.update(powers, targets, q, &mut out, None)?;
    }
    Ok(out)
}

/// Solves the uplink problem from `opts.initial_power` for every user.
pub fn fixed_point_solve(
    scenario: &NetworkScenario,
    targets: &[f64],
    q: &QuantizerModel,
    opts: &SolverOptions,
) -> Result<UplinkSolution> {
    let init = vec![opts.initial_power; scenario.n_users_total()];
    fixed_point_solve_from(scenario, targets, q, opts, init)
}

/// Solves the uplink problem from an explicit initial power vector.
pub fn fixed_point_solve_from(
    scenario: &NetworkScenario,
    targets: &[f64],
    q: &QuantizerModel,
    opts: &SolverOptions,
    init: Vec<f64>,
) -> Result<UplinkSolution> {
    opts.validate()?;
    check_targets(scenario.n_users_total(), targets)?;
    check_powers(scenario, &init)?;
    let rxs = receivers(scenario);
    let outcome = iterate(&rxs, targets, q, opts, init)?;
    let combiners = rxs
        .iter()
        .map(|rx| rx.combiners(&outcome.powers, q))
        .collect::<Result<Vec<_>>>()?;

    let mut max_sinr_error: f64 = 0.0;
    for k in 0..scenario.n_users_total() {
        let (i, u) = scenario.user_of(k);
        let f = combiners[i].column(u).into_owned();
        let sinr = ul_sinr(&f, scenario, &outcome.powers, q, i, u)?;
        max_sinr_error = max_sinr_error.max((sinr - targets[k]).abs() / targets[k]);
    }

    Ok(UplinkSolution {
        powers: outcome.powers,
        combiners,
        targets: targets.to_vec(),
        iterations: outcome.iterations,
        converged: outcome.status == UplinkStatus::Optimal,
        status: outcome.status,
        max_sinr_error,
    })
}

pub(crate) fn receiver_combiners(rx: &Receiver<'_>, powers: &[f64], q: &QuantizerModel) -> Result<DMatrix<C64>> {
    rx.combiners(powers, q)
}

/// Linear MMSE combiner of user `u` in cell `cell`:
/// `[alpha^2 sum_{(j,v) != (i,u)} lambda h h^H + alpha I + alpha beta diag(H_i Lambda H_i^H)]^{-1} h_{i,i,u}`.
pub fn mmse_combiner(
    scenario: &NetworkScenario,
    powers: &[f64],
    q: &QuantizerModel,
    cell: usize,
    user: usize,
) -> Result<DVector<C64>> {
    check_powers(scenario, powers)?;
    check_cell(scenario, cell)?;
    let idx = scenario.user_index(cell, user);
    let rx = Receiver {
        channels: Cow::Borrowed(scenario.bs_channels(cell)),
        base: None,
        served: idx..idx + 1,
    };
    Ok(rx.combiners(powers, q)?.column(0).into_owned())
}

/// Uplink SINR of user `u` in cell `cell` with combiner `f`, with the
/// quantization noise covariance taken at the full power profile.
pub fn ul_sinr(
    f: &DVector<C64>,
    scenario: &NetworkScenario,
    powers: &[f64],
    q: &QuantizerModel,
    cell: usize,
    user: usize,
) -> Result<f64> {
    check_powers(scenario, powers)?;
    check_cell(scenario, cell)?;
    let h_i = scenario.bs_channels(cell);
    if f.len() != h_i.nrows() {
        return Err(Error::Dimension(format!(
            "combiner of length {} for {} antennas",
            f.len(),
            h_i.nrows()
        )));
    }
    if f.iter().all(|v| *v == C64::new(0.0, 0.0)) {
        return Err(Error::InvalidInput("zero combiner".into()));
    }
    let own = scenario.user_index(cell, user);
    let a2 = q.alpha * q.alpha;
    let gains = h_i.ad_mul(f);
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (k, g) in gains.iter().enumerate() {
        let v = powers[k] * g.norm_sqr();
        if k == own {
            signal = v;
        } else {
            interference += v;
        }
    }
    let mut cq = received_power_diag(h_i, powers);
    cq.iter_mut().for_each(|d| *d = q.alpha * q.beta * (*d + 1.0));
    let quant = quad_form_diag(&cq, f);
    Ok(a2 * signal / (a2 * interference + quant + a2 * f.norm_squared()))
}
