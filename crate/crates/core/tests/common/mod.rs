#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use qcomp::scenario::{NetworkConfig, NetworkScenario};
use qcomp::C64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Synthetic network with Rayleigh links whose average gains are drawn
/// log-uniformly: in-cell links in `[1, 100]`, cross links in `[0.01, 1]`.
pub fn synthetic<R: Rng>(rng: &mut R, nc: usize, nu: usize, nb: usize) -> NetworkScenario {
    let mut gains = vec![vec![0.0; nc * nu]; nc];
    for (i, row) in gains.iter_mut().enumerate() {
        for (k, g) in row.iter_mut().enumerate() {
            let exponent: f64 = if k / nu == i {
                rng.random_range(0.0..2.0)
            } else {
                rng.random_range(-2.0..0.0)
            };
            *g = 10f64.powf(exponent);
        }
    }
    let channels = (0..nc)
        .map(|i| {
            DMatrix::from_fn(nb, nc * nu, |_, k| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                C64::new(re, im) * (gains[i][k] / 2.0).sqrt()
            })
        })
        .collect();
    NetworkScenario::from_channels(nu, channels).unwrap()
}

/// Physical drop from the geometry and pathloss model.
pub fn physical(seed: u64, nc: usize, nu: usize, nb: usize) -> NetworkScenario {
    NetworkScenario::generate(&NetworkConfig {
        n_cells: nc,
        n_users_per_cell: nu,
        n_bs_antennas: nb,
        seed,
        ..NetworkConfig::default()
    })
    .unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

pub struct Unquantized {
    pub powers: Vec<f64>,
    pub downlink_power: f64,
    pub converged: bool,
}

/// Textbook coordinated beamforming without quantization, written against
/// plain channel vectors and explicit inverses: uplink fixed point
/// `p_k = gamma_k / ((1 + gamma_k) h^H (I + sum_j p_j h_j h_j^H)^{-1} h)`,
/// MMSE combiners, and downlink weights from the coupling system solved by
/// Gaussian elimination.
pub fn unquantized_oracle(s: &NetworkScenario, targets: &[f64]) -> Unquantized {
    let n = s.n_users_total();
    let nb = s.n_bs_antennas();
    let serving = |k: usize| s.user_of(k).0;
    let h = |bs: usize, k: usize| -> DVector<C64> {
        let (i, u) = s.user_of(k);
        s.h(bs, i, u).into_owned()
    };
    let covariance = |bs: usize, p: &[f64], skip: Option<usize>| {
        let mut c = DMatrix::<C64>::identity(nb, nb);
        for k in 0..n {
            if Some(k) != skip {
                let v = h(bs, k);
                c += &v * v.adjoint() * C64::from(p[k]);
            }
        }
        c
    };

    let mut p = vec![0.0; n];
    let mut converged = false;
    for _ in 0..20_000 {
        let next: Vec<f64> = (0..n)
            .map(|k| {
                let v = h(serving(k), k);
                let inv = covariance(serving(k), &p, None).try_inverse().unwrap();
                let quad = v.dotc(&(inv * &v)).re;
                targets[k] / ((1.0 + targets[k]) * quad)
            })
            .collect();
        let change = max_rel(&next, &p.iter().map(|x| x.max(1e-300)).collect::<Vec<_>>());
        p = next;
        if change < 1e-14 {
            converged = true;
            break;
        }
    }

    let f: Vec<DVector<C64>> = (0..n)
        .map(|k| covariance(serving(k), &p, Some(k)).try_inverse().unwrap() * h(serving(k), k))
        .collect();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            let g = f[col].dotc(&h(serving(col), row)).norm_sqr();
            a[(row, col)] = if row == col { g / targets[row] } else { -g };
        }
    }
    let tau = a.full_piv_lu().solve(&DVector::from_element(n, 1.0)).unwrap();
    let downlink_power = (0..n).map(|k| tau[k] * f[k].norm_squared()).sum();
    Unquantized {
        powers: p,
        downlink_power,
        converged,
    }
}
