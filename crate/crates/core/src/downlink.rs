//! Downlink precoders from the uplink solution.
//!
//! The optimal precoders are scaled uplink MMSE combiners,
//! `w_{i,u} = sqrt(tau_{i,u}) f_{i,u}`, where `tau` solves `Sigma tau = 1` and
//! `Sigma` collects the downlink SINR constraints written with equality.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::abs_sq;
use crate::quantizer::{dl_quant_cov, QuantizerModel};
use crate::scenario::NetworkScenario;
use crate::uplink::{check_targets, UplinkSolution};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DownlinkStatus {
    Optimal,
    NonPositiveTau,
}

#[derive(Debug, Clone)]
pub struct DownlinkSolution {
    /// `W_i`, one `N_b x N_u` matrix per cell.
    pub precoders: Vec<DMatrix<C64>>,
    pub tau: DVector<f64>,
    /// `alpha * sum ||w||^2` on the unit-noise scale; NaN when no valid
    /// precoders exist.
    pub total_power: f64,
    pub status: DownlinkStatus,
}

impl DownlinkSolution {
    pub fn precoder(&self, cell: usize, user: usize) -> nalgebra::DVectorView<'_, C64> {
        self.precoders[cell].column(user)
    }
}

#[derive(Debug, Clone)]
pub struct TauSolution {
    /// Filled with NaN when `Sigma` is singular.
    pub tau: DVector<f64>,
    pub status: DownlinkStatus,
    /// `max |Sigma tau - 1|`.
    pub residual: f64,
}

fn check_combiners(scenario: &NetworkScenario, combiners: &[DMatrix<C64>]) -> Result<()> {
    let ok = combiners.len() == scenario.n_cells()
        && combiners
            .iter()
            .all(|f| f.nrows() == scenario.n_bs_antennas() && f.ncols() == scenario.n_users_per_cell());
    if !ok {
        return Err(Error::Dimension(format!(
            "expected {} cells of {}x{} combiners",
            scenario.n_cells(),
            scenario.n_bs_antennas(),
            scenario.n_users_per_cell()
        )));
    }
    Ok(())
}

/// `(|H_j^H F_j|^2, |H_j|^{2T} |F_j|^2)`: rows are all users, columns the
/// users of cell `j`.
fn coupling_terms(scenario: &NetworkScenario, j: usize, f: &DMatrix<C64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = scenario.bs_channels(j);
    let gains = abs_sq(&h.ad_mul(f));
    let diag_terms = abs_sq(h).transpose() * abs_sq(f);
    (gains, diag_terms)
}

/// The real coupling matrix `Sigma`.
///
/// Row `(i,u)`, column `(j,v)` holds `-alpha^2 |f_{j,v}^H h_{j,i,u}|^2 -
/// alpha beta f_{j,v}^H diag(h_{j,i,u} h_{j,i,u}^H) f_{j,v}`; the diagonal
/// carries `alpha^2 / gamma` on the useful term instead of `-alpha^2`.
pub fn build_sigma(
    combiners: &[DMatrix<C64>],
    scenario: &NetworkScenario,
    targets: &[f64],
    q: &QuantizerModel,
) -> Result<DMatrix<f64>> {
    check_combiners(scenario, combiners)?;
    check_targets(scenario.n_users_total(), targets)?;
    let n = scenario.n_users_total();
    let nu = scenario.n_users_per_cell();
    let a2 = q.alpha * q.alpha;
    let ab = q.alpha * q.beta;
    let mut sigma = DMatrix::zeros(n, n);
    for (j, f) in combiners.iter().enumerate() {
        let (gains, diag_terms) = coupling_terms(scenario, j, f);
        for v in 0..nu {
            let col = j * nu + v;
            for row in 0..n {
                let useful = if row == col { a2 / targets[row] } else { -a2 };
                sigma[(row, col)] = useful * gains[(row, v)] - ab * diag_terms[(row, v)];
            }
        }
    }
    Ok(sigma)
}

/// Dense LU solve of `Sigma tau = 1`.
pub fn solve_tau(sigma: &DMatrix<f64>) -> Result<TauSolution> {
    solve_tau_rhs(sigma, &DVector::from_element(sigma.nrows(), 1.0))
}

pub(crate) fn solve_tau_rhs(sigma: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<TauSolution> {
    if !sigma.is_square() || rhs.len() != sigma.nrows() {
        return Err(Error::Dimension(format!(
            "Sigma is {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let n = sigma.nrows();
    let Some(tau) = sigma.clone().lu().solve(rhs) else {
        return Ok(TauSolution {
            tau: DVector::from_element(n, f64::NAN),
            status: DownlinkStatus::NonPositiveTau,
            residual: f64::NAN,
        });
    };
    let residual = (sigma * &tau - rhs).amax();
    let valid = tau.iter().all(|t| t.is_finite() && *t > 0.0);
    Ok(TauSolution {
        tau,
        status: if valid {
            DownlinkStatus::Optimal
        } else {
            DownlinkStatus::NonPositiveTau
        },
        residual,
    })
}

/// Scales every combiner column by `sqrt(tau)`.
pub fn assemble_precoders(
    combiners: &[DMatrix<C64>],
    tau: &DVector<f64>,
    q: &QuantizerModel,
) -> Result<DownlinkSolution> {
    let total: usize = combiners.iter().map(|f| f.ncols()).sum();
    if tau.len() != total {
        return Err(Error::Dimension(format!(
            "{} tau entries for {total} combiners",
            tau.len()
        )));
    }
    if tau.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidInput("tau must be positive and finite".into()));
    }
    let mut offset = 0;
    let mut total_power = 0.0;
    let precoders = combiners
        .iter()
        .map(|f| {
            let mut w = f.clone();
            for (v, mut col) in w.column_iter_mut().enumerate() {
                col *= C64::from(tau[offset + v].sqrt());
                total_power += q.alpha * col.norm_squared();
            }
            offset += f.ncols();
            w
        })
        .collect();
    Ok(DownlinkSolution {
        precoders,
        tau: tau.clone(),
        total_power,
        status: DownlinkStatus::Optimal,
    })
}

/// Full downlink construction from a solved uplink. A nonpositive or
/// singular `tau` yields zero precoders with status `NonPositiveTau`.
pub fn downlink_from_uplink(
    scenario: &NetworkScenario,
    uplink: &UplinkSolution,
    q: &QuantizerModel,
) -> Result<DownlinkSolution> {
    let sigma = build_sigma(&uplink.combiners, scenario, &uplink.targets, q)?;
    let solved = solve_tau(&sigma)?;
    match solved.status {
        DownlinkStatus::Optimal => assemble_precoders(&uplink.combiners, &solved.tau, q),
        DownlinkStatus::NonPositiveTau => Ok(DownlinkSolution {
            precoders: uplink
                .combiners
                .iter()
                .map(|f| DMatrix::zeros(f.nrows(), f.ncols()))
                .collect(),
            tau: solved.tau,
            total_power: f64::NAN,
            status: DownlinkStatus::NonPositiveTau,
        }),
    }
}

/// Downlink SINR of user `u` in cell `cell`:
/// `alpha^2 |w^H h|^2 / (alpha^2 sum_{other} |w^H h|^2 + sum_j h^H C_j h + 1)`
/// with `C_j = alpha beta diag(W_j W_j^H)`.
pub fn dl_sinr(
    precoders: &[DMatrix<C64>],
    scenario: &NetworkScenario,
    q: &QuantizerModel,
    cell: usize,
    user: usize,
) -> Result<f64> {
    check_combiners(scenario, precoders)?;
    if cell >= scenario.n_cells() || user >= scenario.n_users_per_cell() {
        return Err(Error::Dimension(format!("user ({cell}, {user}) out of range")));
    }
    let a2 = q.alpha * q.alpha;
    let mut signal = 0.0;
    let mut interference = 0.0;
    let mut quant = 0.0;
    for (j, w) in precoders.iter().enumerate() {
        let h = scenario.h(j, cell, user);
        for (v, col) in w.column_iter().enumerate() {
            let g = col.dotc(&h).norm_sqr();
            if j == cell && v == user {
                signal = g;
            } else {
                interference += g;
            }
        }
        let c = dl_quant_cov(w, q);
        quant += c.iter().zip(h.iter()).map(|(c, x)| c * x.norm_sqr()).sum::<f64>();
    }
    debug_assert!({
        let identity: f64 = precoders
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let h2 = scenario.h(j, cell, user).map(|x| x.norm_sqr());
                w.column_iter()
                    .map(|col| col.iter().zip(h2.iter()).map(|(x, d)| d * x.norm_sqr()).sum::<f64>())
                    .sum::<f64>()
            })
            .sum::<f64>()
            * q.alpha
            * q.beta;
        (identity - quant).abs() <= 1e-9 * quant.abs().max(1e-300) + 1e-300
    });
    if !signal.is_finite() || !interference.is_finite() || !quant.is_finite() {
        return Err(Error::InvalidInput("precoders must be finite".into()));
    }
    Ok(a2 * signal / (a2 * interference + quant + 1.0))
}

/// Downlink SINRs of every user, flat index `i * N_u + u`.
pub fn dl_sinrs(precoders: &[DMatrix<C64>], scenario: &NetworkScenario, q: &QuantizerModel) -> Result<Vec<f64>> {
    check_combiners(scenario, precoders)?;
    let n = scenario.n_users_total();
    let nu = scenario.n_users_per_cell();
    let a2 = q.alpha * q.alpha;
    let mut signal = vec![0.0; n];
    let mut other = vec![0.0; n];
    for (j, w) in precoders.iter().enumerate() {
        let (gains, diag_terms) = coupling_terms(scenario, j, w);
        for k in 0..n {
            for v in 0..nu {
                let g = a2 * gains[(k, v)];
                if k == j * nu + v {
                    signal[k] = g;
                } else {
                    other[k] += g;
                }
                other[k] += q.alpha * q.beta * diag_terms[(k, v)];
            }
        }
    }
    if signal.iter().chain(&other).any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("precoders must be finite".into()));
    }
    Ok(signal.iter().zip(&other).map(|(s, o)| s / (o + 1.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TauOptions {
    /// Stop when `|Sigma tau - 1|` falls below this, relative to
    /// `1 + |Sigma| |tau|` row by row.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for TauOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-13,
            max_iterations: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TauStatus {
    Converged,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct TauIteration {
    pub tau: DVector<f64>,
    pub iterations: usize,
    pub status: TauStatus,
}

/// Per-user update `tau_k <- (1 - sum_{l != k} Sigma_{k,l} tau_l) / Sigma_{k,k}`,
/// sweeping users in order with the latest values (Gauss-Seidel).
pub fn tau_iterative(
    combiners: &[DMatrix<C64>],
    scenario: &NetworkScenario,
    targets: &[f64],
    q: &QuantizerModel,
    opts: &TauOptions,
) -> Result<TauIteration> {
    let sigma = build_sigma(combiners, scenario, targets, q)?;
    tau_iterative_from_sigma(&sigma, opts)
}

pub fn tau_iterative_from_sigma(sigma: &DMatrix<f64>, opts: &TauOptions) -> Result<TauIteration> {
    if !sigma.is_square() {
        return Err(Error::Dimension(format!(
            "Sigma is {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let n = sigma.nrows();
    let ones = DVector::from_element(n, 1.0);
    let mut tau: DVector<f64> = DVector::zeros(n);
    for iteration in 1..=opts.max_iterations {
        for k in 0..n {
            let coupled: f64 = (0..n).filter(|&l| l != k).map(|l| sigma[(k, l)] * tau[l]).sum();
            tau[k] = (1.0 - coupled) / sigma[(k, k)];
        }
        if !tau.iter().all(|t| t.is_finite()) {
            break;
        }
        let scale = sigma.abs() * tau.abs() + &ones;
        let residual = (sigma * &tau - &ones).component_div(&scale).amax();
        if residual < opts.tolerance {
            return Ok(TauIteration {
                tau,
                iterations: iteration,
                status: TauStatus::Converged,
            });
        }
    }
    Ok(TauIteration {
        tau,
        iterations: opts.max_iterations,
        status: TauStatus::IterationCap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{quantizer_model, Resolution};
    use crate::uplink::{fixed_point_solve, ul_sinr, SolverOptions, UplinkStatus};
    use std::f64::consts::PI;

    fn two_cell_unit() -> NetworkScenario {
        // Every channel entry 1 except the cross links, which are 0.5.
        let h0 = DMatrix::from_row_slice(1, 2, &[C64::new(1.0, 0.0), C64::new(0.5, 0.0)]);
        let h1 = DMatrix::from_row_slice(1, 2, &[C64::new(0.5, 0.0), C64::new(1.0, 0.0)]);
        NetworkScenario::from_channels(1, vec![h0, h1]).unwrap()
    }

    fn random_like() -> NetworkScenario {
        let mk = |seed: f64| {
            DMatrix::from_fn(3, 4, |r, c| {
                let t = seed + 1.7 * r as f64 + 0.9 * c as f64;
                C64::new(t.sin(), (1.3 * t).cos())
            })
        };
        NetworkScenario::from_channels(2, vec![mk(0.2), mk(2.9)]).unwrap()
    }

    #[test]
    fn hand_computed_two_by_two() {
        let s = two_cell_unit();
        let q = QuantizerModel::with_beta(0.25).unwrap();
        let f = vec![DMatrix::from_element(1, 1, C64::new(1.0, 0.0)); 2];
        let sigma = build_sigma(&f, &s, &[2.0, 2.0], &q).unwrap();
        // alpha = 0.75, alpha beta = 0.1875, alpha^2 = 0.5625.
        // diagonal: 0.5625 / 2 * 1 - 0.1875 * 1 = 0.09375
        // off-diagonal: -0.5625 * 0.25 - 0.1875 * 0.25 = -0.1875
        let expected = DMatrix::from_row_slice(2, 2, &[0.09375, -0.1875, -0.1875, 0.09375]);
        assert!((sigma - expected).amax() < 1e-15);
    }

    #[test]
    fn unquantized_sigma_has_no_diag_terms() {
        let s = random_like();
        let f = vec![DMatrix::from_element(3, 2, C64::new(0.3, -0.2)); 2];
        let sigma = build_sigma(&f, &s, &[1.0; 4], &QuantizerModel::perfect()).unwrap();
        for row in 0..4 {
            for (col, (j, v)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let (i, u) = s.user_of(row);
                let g = f[j].column(v).dotc(&s.h(j, i, u)).norm_sqr();
                let expected = if row == col { g } else { -g };
                assert!((sigma[(row, col)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tau_trivial_cases() {
        let t = solve_tau(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(t.status, DownlinkStatus::Optimal);
        assert!(t.tau.iter().all(|x| (*x - 1.0).abs() < 1e-15));
        let t = solve_tau(&DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert!((t.tau[0] - 0.25).abs() < 1e-15);
        let t = solve_tau(&DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 1.0])).unwrap();
        assert_eq!(t.status, DownlinkStatus::NonPositiveTau);
        let t = solve_tau(&DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(t.status, DownlinkStatus::NonPositiveTau);
    }

    #[test]
    fn iterative_identity_and_counterexample() {
        let it = tau_iterative_from_sigma(&DMatrix::identity(4, 4), &TauOptions::default()).unwrap();
        assert_eq!(it.status, TauStatus::Converged);
        assert_eq!(it.iterations, 1);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 1.0]);
        let it = tau_iterative_from_sigma(&bad, &TauOptions::default()).unwrap();
        assert_eq!(it.status, TauStatus::IterationCap);
    }

    #[test]
    fn assemble_scales_columns() {
        let f = vec![DMatrix::from_fn(2, 2, |r, c| C64::new(r as f64 + 1.0, c as f64))];
        let q = quantizer_model(Resolution::Bits(2)).unwrap();
        let one = assemble_precoders(&f, &DVector::from_element(2, 1.0), &q).unwrap();
        assert_eq!(one.precoders[0], f[0]);
        let two = assemble_precoders(&f, &DVector::from_element(2, 2.0), &q).unwrap();
        assert!((two.total_power - 2.0 * one.total_power).abs() < 1e-12);
        assert!((one.total_power - q.alpha * f[0].norm_squared()).abs() < 1e-12);
        assert!(assemble_precoders(&f, &DVector::from_row_slice(&[1.0, 0.0]), &q).is_err());
    }

    #[test]
    fn sinr_trivial_cases() {
        let h = DMatrix::from_element(1, 1, C64::new(0.0, 2.0));
        let s = NetworkScenario::from_channels(1, vec![h]).unwrap();
        let perfect = QuantizerModel::perfect();
        let zero = vec![DMatrix::zeros(1, 1)];
        assert_eq!(dl_sinr(&zero, &s, &perfect, 0, 0).unwrap(), 0.0);
        let w = vec![DMatrix::from_element(1, 1, C64::new(0.6, 0.8) * 3.0)];
        assert!((dl_sinr(&w, &s, &perfect, 0, 0).unwrap() - 36.0).abs() < 1e-12);
    }

    #[test]
    fn batch_sinrs_match_single() {
        let s = random_like();
        let q = quantizer_model(Resolution::Bits(2)).unwrap();
        let w: Vec<_> = (0..2)
            .map(|j| DMatrix::from_fn(3, 2, |r, c| C64::new((r + j) as f64 * 0.3, c as f64 - 0.5)))
            .collect();
        let all = dl_sinrs(&w, &s, &q).unwrap();
        for k in 0..4 {
            let (i, u) = s.user_of(k);
            let one = dl_sinr(&w, &s, &q, i, u).unwrap();
            assert!((all[k] - one).abs() < 1e-12 * one);
        }
    }

    #[test]
    fn radiated_power_identity() {
        let q = quantizer_model(Resolution::Bits(3)).unwrap();
        let w = DMatrix::from_fn(4, 3, |r, c| C64::new((r * c) as f64 - 1.0, 0.5 * r as f64));
        let lhs = q.alpha * q.alpha * w.norm_squared() + dl_quant_cov(&w, &q).sum();
        assert!((lhs - q.alpha * w.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn optimal_downlink_meets_targets_with_zero_gap() {
        let s = random_like();
        let q = quantizer_model(Resolution::Bits(3)).unwrap();
        let targets = [1.0, 0.8, 1.5, 0.5];
        let ul = fixed_point_solve(&s, &targets, &q, &SolverOptions::default()).unwrap();
        assert_eq!(ul.status, UplinkStatus::Optimal);
        let dl = downlink_from_uplink(&s, &ul, &q).unwrap();
        assert_eq!(dl.status, DownlinkStatus::Optimal);
        let gap = (dl.total_power - ul.total_power()).abs() / ul.total_power();
        assert!(gap < 1e-8, "{} vs {}", dl.total_power, ul.total_power());
        for (k, t) in targets.iter().enumerate() {
            let (i, u) = s.user_of(k);
            let sinr = dl_sinr(&dl.precoders, &s, &q, i, u).unwrap();
            assert!((sinr - t).abs() / t < 1e-6);
        }
        let it = tau_iterative(&ul.combiners, &s, &targets, &q, &TauOptions::default()).unwrap();
        assert_eq!(it.status, TauStatus::Converged);
        assert!((it.tau - &dl.tau).amax() / dl.tau.amax() < 1e-8);
    }

    #[test]
    fn phase_invariance() {
        let s = random_like();
        let q = quantizer_model(Resolution::Bits(2)).unwrap();
        let targets = [0.7; 4];
        let ul = fixed_point_solve(&s, &targets, &q, &SolverOptions::default()).unwrap();
        let mut rotated = ul.clone();
        for (j, f) in rotated.combiners.iter_mut().enumerate() {
            for (v, mut col) in f.column_iter_mut().enumerate() {
                col *= C64::from_polar(1.0, 0.4 + PI * (j + 2 * v) as f64 / 3.0);
            }
        }
        let a = build_sigma(&ul.combiners, &s, &targets, &q).unwrap();
        let b = build_sigma(&rotated.combiners, &s, &targets, &q).unwrap();
        assert!((&a - &b).amax() < 1e-12 * a.amax());
        let da = downlink_from_uplink(&s, &ul, &q).unwrap();
        let db = downlink_from_uplink(&s, &rotated, &q).unwrap();
        assert!((da.total_power - db.total_power).abs() < 1e-10 * da.total_power);
        let sa = dl_sinrs(&da.precoders, &s, &q).unwrap();
        let sb = dl_sinrs(&db.precoders, &s, &q).unwrap();
        for (x, y) in sa.iter().zip(&sb) {
            assert!((x - y).abs() < 1e-10 * x);
        }
        for k in 0..4 {
            let (i, u) = s.user_of(k);
            let f = ul.combiners[i].column(u).into_owned();
            let g = rotated.combiners[i].column(u).into_owned();
            let x = ul_sinr(&f, &s, &ul.powers, &q, i, u).unwrap();
            let y = ul_sinr(&g, &s, &ul.powers, &q, i, u).unwrap();
            assert!((x - y).abs() < 1e-12 * x);
        }
    }
}
