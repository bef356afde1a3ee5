//! Per-cell iterative baseline and per-user SINR reports.
//!
//! Every cell optimizes only its own users and treats what the other cells
//! currently cause as fixed noise; the network then refreshes those noise
//! estimates and repeats.
//!
//! Uplink: cell `i` solves its single-cell fixed point with
//! `I + alpha E_i + beta diag(E_i)` in place of the identity in `K_i`, where
//! `E_i = sum_{j != i} H_{i,j} Lambda_j H_{i,j}^H` is frozen for the inner
//! solve. All cells update from the same snapshot.
//!
//! Downlink: each cell's precoder directions are the MMSE combiners of its
//! in-cell virtual uplink, which do not depend on how much noise its users
//! see. The cell then meets its targets against the current out-of-cell
//! interference: `Sigma_{i,i} tau_i = sigma_i^2` with
//! `sigma_i^2 = 1 - sum_{j != i} Sigma_{i,j} tau_j`, the received noise plus
//! leakage from the other cells in units of the user's noise.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coordinated::{CoordinatedSolution, CoordinatedStatus};
use crate::downlink::{assemble_precoders, build_sigma, dl_sinrs, solve_tau_rhs, DownlinkStatus};
use crate::linalg::{add_to_diagonal, real_diagonal, weighted_gram};
use crate::quantizer::QuantizerModel;
use crate::scenario::NetworkScenario;
use crate::uplink::{check_targets, iterate, receiver_combiners, ul_sinr, Receiver, SolverOptions, UplinkStatus};
use crate::{linear_to_db, Error, Result, C64};

/// Achieved SINRs this far below target, in dB, are flagged.
pub const UNDER_TARGET_MARGIN_DB: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PercellOptions {
    /// Options of every inner single-cell fixed point.
    pub inner: SolverOptions,
    /// Outer loops stop when the estimated relative distance of the noise
    /// estimates to their limit drops below this.
    pub tolerance: f64,
    pub max_outer_iterations: usize,
    /// Any uplink power or downlink radiated power per user above this
    /// (unit-noise scale) counts as divergence.
    pub power_cap: f64,
}

impl Default for PercellOptions {
    fn default() -> Self {
        Self {
            inner: SolverOptions::default(),
            tolerance: 1e-8,
            max_outer_iterations: 500,
            power_cap: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PercellStatus {
    Converged,
    Diverged,
    IterationCap,
}

impl PercellStatus {
    fn combine(self, other: Self) -> Self {
        use PercellStatus::*;
        match (self, other) {
            (Diverged, _) | (_, Diverged) => Diverged,
            (IterationCap, _) | (_, IterationCap) => IterationCap,
            _ => Converged,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PercellSolution {
    /// Uplink powers, flat index `i * N_u + u`.
    pub powers: Vec<f64>,
    /// Uplink MMSE combiners at `powers`, one `N_b x N_u` matrix per cell.
    pub combiners: Vec<DMatrix<C64>>,
    /// Downlink precoders, one `N_b x N_u` matrix per cell.
    pub precoders: Vec<DMatrix<C64>>,
    pub tau: DVector<f64>,
    pub targets: Vec<f64>,
    pub uplink_status: PercellStatus,
    pub downlink_status: PercellStatus,
    pub status: PercellStatus,
    pub outer_iterations: usize,
    pub downlink_iterations: usize,
    /// `alpha * sum ||w||^2`.
    pub downlink_power: f64,
    /// Achieved downlink SINR per user in dB.
    pub per_user_achieved_sinr: Vec<f64>,
}

impl PercellSolution {
    pub fn uplink_power(&self) -> f64 {
        self.powers.iter().sum()
    }
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    new.iter()
        .zip(old)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
        .fold(0.0, f64::max)
}

/// Geometric-rate estimate of the remaining distance to the limit, given
/// the last two changes.
fn remaining(change: f64, previous: f64) -> f64 {
    let rate = if previous > 0.0 && previous.is_finite() {
        change / previous
    } else {
        0.0
    };
    if rate >= 1.0 {
        f64::INFINITY
    } else {
        change / (1.0 - rate)
    }
}

/// Uplink noise seen by cell `cell` from the other cells' users.
fn external_noise(scenario: &NetworkScenario, powers: &[f64], q: &QuantizerModel, cell: usize) -> DMatrix<C64> {
    let nu = scenario.n_users_per_cell();
    let mut external = powers.to_vec();
    external[cell * nu..(cell + 1) * nu].iter_mut().for_each(|p| *p = 0.0);
    let gram = weighted_gram(scenario.bs_channels(cell), &external);
    let diag = real_diagonal(&gram);
    let nb = scenario.n_bs_antennas();
    let mut base = DMatrix::identity(nb, nb) + gram * C64::from(q.alpha);
    add_to_diagonal(&mut base, &diag, q.beta);
    base
}

fn in_cell_receiver<'a>(scenario: &NetworkScenario, cell: usize, base: Option<DMatrix<C64>>) -> Receiver<'a> {
    Receiver {
        channels: Cow::Owned(scenario.channel(cell, cell).into_owned()),
        base,
        served: 0..scenario.n_users_per_cell(),
    }
}

struct UplinkPart {
    powers: Vec<f64>,
    combiners: Vec<DMatrix<C64>>,
    iterations: usize,
    status: PercellStatus,
}

fn percell_uplink(
    scenario: &NetworkScenario,
    targets: &[f64],
    q: &QuantizerModel,
    opts: &PercellOptions,
) -> Result<UplinkPart> {
    let nc = scenario.n_cells();
    let nu = scenario.n_users_per_cell();
    let mut powers = vec![0.0; scenario.n_users_total()];
    let mut noise: Option<Vec<f64>> = None;
    let mut previous_change = f64::INFINITY;
    let mut status = PercellStatus::IterationCap;
    let mut iterations = opts.max_outer_iterations;

    'outer: for outer in 1..=opts.max_outer_iterations {
        let bases: Vec<_> = (0..nc).map(|i| external_noise(scenario, &powers, q, i)).collect();
        let estimate: Vec<f64> = bases
            .iter()
            .flat_map(|b| real_diagonal(b).iter().copied().collect::<Vec<_>>())
            .collect();
        if let Some(previous) = &noise {
            let change = relative_change(&estimate, previous);
            if change == 0.0 || remaining(change, previous_change) < opts.tolerance {
                status = PercellStatus::Converged;
                iterations = outer;
                break;
            }
            previous_change = change;
        }
        noise = Some(estimate);

        let mut next = powers.clone();
        for (i, base) in bases.into_iter().enumerate() {
            let rx = in_cell_receiver(scenario, i, Some(base));
            let cell = i * nu..(i + 1) * nu;
            let outcome = iterate(
                &[rx],
                &targets[cell.clone()],
                q,
                &opts.inner,
                powers[cell.clone()].to_vec(),
            )?;
            next[cell].copy_from_slice(&outcome.powers);
            match outcome.status {
                UplinkStatus::Optimal => {}
                UplinkStatus::Infeasible => {
                    status = PercellStatus::Diverged;
                    iterations = outer;
                    powers = next;
                    break 'outer;
                }
                UplinkStatus::IterationCap => {
                    status = PercellStatus::IterationCap;
                    iterations = outer;
                    powers = next;
                    break 'outer;
                }
            }
        }
        powers = next;
        if powers.iter().any(|p| !p.is_finite() || *p > opts.power_cap) {
            status = PercellStatus::Diverged;
            iterations = outer;
            break;
        }
    }

    let powers_for_combiners: Vec<f64> = powers.iter().map(|p| if p.is_finite() { *p } else { 0.0 }).collect();
    let combiners = (0..nc)
        .map(|i| {
            let base = external_noise(scenario, &powers_for_combiners, q, i);
            let cell = &powers_for_combiners[i * nu..(i + 1) * nu];
            receiver_combiners(&in_cell_receiver(scenario, i, Some(base)), cell, q)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UplinkPart {
        powers,
        combiners,
        iterations,
        status,
    })
}

struct DownlinkPart {
    precoders: Vec<DMatrix<C64>>,
    tau: DVector<f64>,
    power: f64,
    iterations: usize,
    status: PercellStatus,
}

fn zero_precoders(scenario: &NetworkScenario) -> Vec<DMatrix<C64>> {
    vec![DMatrix::zeros(scenario.n_bs_antennas(), scenario.n_users_per_cell()); scenario.n_cells()]
}

fn percell_downlink(
    scenario: &NetworkScenario,
    targets: &[f64],
    q: &QuantizerModel,
    opts: &PercellOptions,
) -> Result<DownlinkPart> {
    let nc = scenario.n_cells();
    let nu = scenario.n_users_per_cell();
    let n = scenario.n_users_total();
    let failed = |iterations| DownlinkPart {
        precoders: zero_precoders(scenario),
        tau: DVector::from_element(n, f64::NAN),
        power: f64::NAN,
        iterations,
        status: PercellStatus::Diverged,
    };

    let mut directions = Vec::with_capacity(nc);
    for i in 0..nc {
        let rx = in_cell_receiver(scenario, i, None);
        let cell = &targets[i * nu..(i + 1) * nu];
        let outcome = iterate(std::slice::from_ref(&rx), cell, q, &opts.inner, vec![0.0; nu])?;
        if outcome.status != UplinkStatus::Optimal {
            return Ok(failed(0));
        }
        directions.push(receiver_combiners(&rx, &outcome.powers, q)?);
    }
    let sigma = build_sigma(&directions, scenario, targets, q)?;
    let norms: Vec<f64> = directions
        .iter()
        .flat_map(|f| f.column_iter().map(|c| q.alpha * c.norm_squared()).collect::<Vec<_>>())
        .collect();

    let mut tau = DVector::zeros(n);
    let mut noise = DVector::from_element(n, 1.0);
    let mut previous_change = f64::INFINITY;
    let mut status = PercellStatus::IterationCap;
    let mut iterations = opts.max_outer_iterations;
    for outer in 1..=opts.max_outer_iterations {
        let mut next = tau.clone();
        for i in 0..nc {
            let cell = i * nu..(i + 1) * nu;
            let block = sigma.view((cell.start, cell.start), (nu, nu)).into_owned();
            let rhs = noise.rows(cell.start, nu).into_owned();
            let solved = solve_tau_rhs(&block, &rhs)?;
            if solved.status != DownlinkStatus::Optimal {
                return Ok(failed(outer));
            }
            next.rows_mut(cell.start, nu).copy_from(&solved.tau);
        }
        tau = next;
        if tau.iter().zip(&norms).any(|(t, w)| !(t * w <= opts.power_cap)) {
            status = PercellStatus::Diverged;
            iterations = outer;
            break;
        }
        let mut next_noise = DVector::from_element(n, 1.0);
        for row in 0..n {
            let own = row / nu;
            for col in 0..n {
                if col / nu != own {
                    next_noise[row] -= sigma[(row, col)] * tau[col];
                }
            }
        }
        let change = relative_change(next_noise.as_slice(), noise.as_slice());
        noise = next_noise;
        let done = change == 0.0 || remaining(change, previous_change) < opts.tolerance;
        previous_change = change;
        if done {
            status = PercellStatus::Converged;
            iterations = outer;
            break;
        }
    }

    if !tau.iter().all(|t| t.is_finite() && *t > 0.0) {
        return Ok(failed(iterations));
    }
    let dl = assemble_precoders(&directions, &tau, q)?;
    Ok(DownlinkPart {
        precoders: dl.precoders,
        tau,
        power: dl.total_power,
        iterations,
        status,
    })
}

/// Runs the per-cell baseline on both links.
pub fn percell_solve(
    scenario: &NetworkScenario,
    targets: &[f64],
    q: &QuantizerModel,
    opts: &PercellOptions,
) -> Result<PercellSolution> {
    check_targets(scenario.n_users_total(), targets)?;
    opts.inner.validate()?;
    if !(opts.tolerance > 0.0) || opts.max_outer_iterations == 0 {
        return Err(Error::InvalidInput(format!("invalid per-cell options {opts:?}")));
    }
    let ul = percell_uplink(scenario, targets, q, opts)?;
    let dl = percell_downlink(scenario, targets, q, opts)?;
    let per_user_achieved_sinr = dl_sinrs(&dl.precoders, scenario, q)?
        .into_iter()
        .map(linear_to_db)
        .collect();
    Ok(PercellSolution {
        powers: ul.powers,
        combiners: ul.combiners,
        precoders: dl.precoders,
        tau: dl.tau,
        targets: targets.to_vec(),
        uplink_status: ul.status,
        downlink_status: dl.status,
        status: ul.status.combine(dl.status),
        outer_iterations: ul.iterations,
        downlink_iterations: dl.iterations,
        downlink_power: dl.power,
        per_user_achieved_sinr,
    })
}

/// Read access shared by the coordinated and per-cell solutions.
pub trait SolutionView {
    fn uplink_powers(&self) -> &[f64];
    fn uplink_combiners(&self) -> &[DMatrix<C64>];
    /// `None` when no downlink precoders were produced.
    fn downlink_precoders(&self) -> Option<&[DMatrix<C64>]>;
    fn targets(&self) -> &[f64];
    fn downlink_power(&self) -> f64;
}

impl SolutionView for CoordinatedSolution {
    fn uplink_powers(&self) -> &[f64] {
        &self.uplink.powers
    }

    fn uplink_combiners(&self) -> &[DMatrix<C64>] {
        &self.uplink.combiners
    }

    fn downlink_precoders(&self) -> Option<&[DMatrix<C64>]> {
        match self.status() {
            CoordinatedStatus::Optimal => self.downlink.as_ref().map(|dl| dl.precoders.as_slice()),
            _ => None,
        }
    }

    fn targets(&self) -> &[f64] {
        &self.uplink.targets
    }

    fn downlink_power(&self) -> f64 {
        CoordinatedSolution::downlink_power(self)
    }
}

impl SolutionView for PercellSolution {
    fn uplink_powers(&self) -> &[f64] {
        &self.powers
    }

    fn uplink_combiners(&self) -> &[DMatrix<C64>] {
        &self.combiners
    }

    fn downlink_precoders(&self) -> Option<&[DMatrix<C64>]> {
        Some(&self.precoders)
    }

    fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn downlink_power(&self) -> f64 {
        self.downlink_power
    }
}

/// Per-user achieved SINRs in dB, flat index `i * N_u + u`. A user with no
/// useful signal reports negative infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrReport {
    pub target_db: Vec<f64>,
    pub uplink_db: Vec<f64>,
    pub downlink_db: Vec<f64>,
    /// Achieved minus target.
    pub uplink_delta_db: Vec<f64>,
    pub downlink_delta_db: Vec<f64>,
    /// Either link more than [`UNDER_TARGET_MARGIN_DB`] below target.
    pub under_target: Vec<bool>,
    pub uplink_power: f64,
    pub downlink_power: f64,
}

impl SinrReport {
    pub fn n_under_target(&self) -> usize {
        self.under_target.iter().filter(|&&u| u).count()
    }
}

pub fn achieved_sinr_report<S: SolutionView + ?Sized>(
    solution: &S,
    scenario: &NetworkScenario,
    q: &QuantizerModel,
) -> Result<SinrReport> {
    let n = scenario.n_users_total();
    let targets = solution.targets();
    check_targets(n, targets)?;
    let powers = solution.uplink_powers();
    let combiners = solution.uplink_combiners();
    let usable: Vec<f64> = powers.iter().map(|p| if p.is_finite() { *p } else { 0.0 }).collect();

    let mut uplink_db = Vec::with_capacity(n);
    for k in 0..n {
        let (i, u) = scenario.user_of(k);
        let f = combiners[i].column(u).into_owned();
        let sinr = match ul_sinr(&f, scenario, &usable, q, i, u) {
            Ok(s) => s,
            Err(Error::InvalidInput(_)) => 0.0,
            Err(e) => return Err(e),
        };
        uplink_db.push(linear_to_db(sinr));
    }
    let downlink_db = match solution.downlink_precoders() {
        Some(w) => dl_sinrs(w, scenario, q)?.into_iter().map(linear_to_db).collect(),
        None => vec![f64::NEG_INFINITY; n],
    };
    let target_db: Vec<f64> = targets.iter().map(|&t| linear_to_db(t)).collect();
    let delta = |achieved: &[f64]| -> Vec<f64> { achieved.iter().zip(&target_db).map(|(a, t)| a - t).collect() };
    let uplink_delta_db = delta(&uplink_db);
    let downlink_delta_db = delta(&downlink_db);
    let under_target = uplink_delta_db
        .iter()
        .zip(&downlink_delta_db)
        .map(|(a, b)| a.min(*b) < -UNDER_TARGET_MARGIN_DB)
        .collect();
    Ok(SinrReport {
        target_db,
        uplink_db,
        downlink_db,
        uplink_delta_db,
        downlink_delta_db,
        under_target,
        uplink_power: powers.iter().sum(),
        downlink_power: solution.downlink_power(),
    })
}
