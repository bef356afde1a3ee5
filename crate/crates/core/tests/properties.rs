mod common;

use common::{max_rel, physical, rel, synthetic, unquantized_oracle};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qcomp::baseline::{percell_solve, PercellOptions, PercellStatus};
use qcomp::coordinated::{solve_coordinated, CoordinatedStatus};
use qcomp::downlink::{build_sigma, dl_sinrs, solve_tau, tau_iterative, DownlinkStatus, TauOptions, TauStatus};
use qcomp::quantizer::{quantizer_model, QuantizerModel, Resolution};
use qcomp::scenario::NetworkScenario;
use qcomp::uplink::{
    build_k, fixed_point_solve, fixed_point_solve_from, mmse_combiner, ul_sinr, update_map, SolverOptions, UplinkStatus,
};
use qcomp::{db_to_linear, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn resolution() -> impl Strategy<Value = Resolution> {
    prop_oneof![(1u32..=5).prop_map(Resolution::Bits), Just(Resolution::Infinite)]
}

#[derive(Debug, Clone)]
struct Instance {
    seed: u64,
    nc: usize,
    nu: usize,
    nb: usize,
    bits: Resolution,
    targets_db: Vec<f64>,
}

impl Instance {
    fn scenario(&self) -> NetworkScenario {
        synthetic(&mut ChaCha8Rng::seed_from_u64(self.seed), self.nc, self.nu, self.nb)
    }

    fn q(&self) -> QuantizerModel {
        quantizer_model(self.bits).unwrap()
    }

    fn targets(&self) -> Vec<f64> {
        self.targets_db.iter().map(|&t| db_to_linear(t)).collect()
    }
}

fn instance() -> impl Strategy<Value = Instance> {
    (any::<u64>(), 1usize..=3, 1usize..=3, 1usize..=6, resolution()).prop_flat_map(|(seed, nc, nu, nb, bits)| {
        prop::collection::vec(-5.0f64..5.0, nc * nu).prop_map(move |targets_db| Instance {
            seed,
            nc,
            nu,
            nb,
            bits,
            targets_db,
        })
    })
}

fn solve_optimal(inst: &Instance) -> Option<(NetworkScenario, qcomp::uplink::UplinkSolution)> {
    let s = inst.scenario();
    let sol = fixed_point_solve(&s, &inst.targets(), &inst.q(), &SolverOptions::default()).unwrap();
    (sol.status == UplinkStatus::Optimal).then_some((s, sol))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn k_is_hermitian_positive_definite(inst in instance(), scale in 0.0f64..10.0) {
        let s = inst.scenario();
        let powers: Vec<f64> = (0..s.n_users_total()).map(|k| scale * (k as f64 + 1.0).sin().abs()).collect();
        for cell in 0..s.n_cells() {
            let k = build_k(&s, &powers, &inst.q(), cell).unwrap();
            prop_assert!((&k - k.adjoint()).norm() < 1e-12 * k.norm());
            prop_assert!(k.clone().cholesky().is_some());
            // K dominates the identity.
            let nb = s.n_bs_antennas();
            prop_assert!((k - DMatrix::identity(nb, nb) * C64::from(1.0 - 1e-9)).cholesky().is_some());
        }
    }

    #[test]
    fn update_map_is_standard(inst in instance(), seed in any::<u64>(), rho in 1.01f64..20.0) {
        let s = inst.scenario();
        let q = inst.q();
        let targets = inst.targets();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = s.n_users_total();
        let big: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-4.0..2.0))).collect();
        let small: Vec<f64> = big.iter().map(|p| p * rng.random_range(0.0..1.0)).collect();
        let f_big = update_map(&s, &targets, &q, &big).unwrap();
        let f_small = update_map(&s, &targets, &q, &small).unwrap();
        let scaled: Vec<f64> = big.iter().map(|p| rho * p).collect();
        let f_scaled = update_map(&s, &targets, &q, &scaled).unwrap();
        for k in 0..n {
            prop_assert!(f_big[k] > 0.0 && f_small[k] > 0.0);
            prop_assert!(f_big[k] >= f_small[k] * (1.0 - 1e-12));
            prop_assert!(rho * f_big[k] > f_scaled[k]);
        }
    }

    #[test]
    fn trajectory_from_zero_is_monotone(inst in instance()) {
        let s = inst.scenario();
        let q = inst.q();
        let targets = inst.targets();
        let mut p = vec![0.0; s.n_users_total()];
        for _ in 0..50 {
            let next = update_map(&s, &targets, &q, &p).unwrap();
            for (a, b) in next.iter().zip(&p) {
                prop_assert!(*a >= b * (1.0 - 1e-12));
            }
            p = next;
        }
    }

    #[test]
    fn initialization_does_not_matter(inst in instance()) {
        let Some((s, zero)) = solve_optimal(&inst) else { return Ok(()) };
        let init: Vec<f64> = zero.powers.iter().map(|p| 10.0 * p).collect();
        let other = fixed_point_solve_from(&s, &inst.targets(), &inst.q(), &SolverOptions::default(), init).unwrap();
        prop_assert_eq!(other.status, UplinkStatus::Optimal);
        prop_assert!(max_rel(&other.powers, &zero.powers) < 1e-8);
    }

    #[test]
    fn optimal_solutions_are_active_with_zero_gap(inst in instance()) {
        let s = inst.scenario();
        let q = inst.q();
        let targets = inst.targets();
        let co = solve_coordinated(&s, &targets, &q, &SolverOptions::default()).unwrap();
        if co.uplink.status != UplinkStatus::Optimal {
            return Ok(());
        }
        // tau > 0 follows from the uplink fixed point.
        prop_assert_eq!(co.status(), CoordinatedStatus::Optimal);
        prop_assert!(co.uplink.powers.iter().all(|p| *p > 0.0));
        prop_assert!(co.uplink.max_sinr_error < 1e-6);
        let dl = co.downlink.as_ref().unwrap();
        let achieved = dl_sinrs(&dl.precoders, &s, &q).unwrap();
        prop_assert!(max_rel(&achieved, &targets) < 1e-6);
        prop_assert!(rel(dl.total_power, co.uplink.total_power()) < 1e-8);
    }

    #[test]
    fn iterative_tau_matches_direct(inst in instance()) {
        let Some((s, ul)) = solve_optimal(&inst) else { return Ok(()) };
        let sigma = build_sigma(&ul.combiners, &s, &inst.targets(), &inst.q()).unwrap();
        let direct = solve_tau(&sigma).unwrap();
        prop_assert_eq!(direct.status, DownlinkStatus::Optimal);
        prop_assert!(direct.residual < 1e-10);
        let it = tau_iterative(&ul.combiners, &s, &inst.targets(), &inst.q(), &TauOptions::default()).unwrap();
        prop_assert_eq!(it.status, TauStatus::Converged);
        prop_assert!(max_rel(it.tau.as_slice(), direct.tau.as_slice()) < 1e-8);
    }

    #[test]
    fn mmse_is_locally_optimal(inst in instance(), seed in any::<u64>()) {
        let s = inst.scenario();
        let q = inst.q();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let powers: Vec<f64> = (0..s.n_users_total()).map(|_| rng.random_range(0.0..5.0)).collect();
        let (i, u) = (0, 0);
        let f = mmse_combiner(&s, &powers, &q, i, u).unwrap();
        let best = ul_sinr(&f, &s, &powers, &q, i, u).unwrap();
        for _ in 0..100 {
            let delta = DVector::from_fn(f.len(), |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let g = &f + delta * C64::from(1e-3 * f.norm());
            prop_assert!(ul_sinr(&g, &s, &powers, &q, i, u).unwrap() <= best * (1.0 + 1e-12));
        }
    }

    #[test]
    fn coordinated_never_costs_more_than_percell(inst in instance()) {
        let s = inst.scenario();
        let q = inst.q();
        let targets = inst.targets();
        let co = solve_coordinated(&s, &targets, &q, &SolverOptions::default()).unwrap();
        let pc = percell_solve(&s, &targets, &q, &PercellOptions::default()).unwrap();
        if co.status() == CoordinatedStatus::Optimal && pc.status == PercellStatus::Converged {
            prop_assert!(co.downlink_power() <= pc.downlink_power * (1.0 + 1e-6));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn more_bits_cost_less_power(seed in any::<u64>(), target_db in -3.0f64..3.0) {
        let s = synthetic(&mut ChaCha8Rng::seed_from_u64(seed), 2, 2, 4);
        let targets = vec![db_to_linear(target_db); 4];
        let mut previous = f64::INFINITY;
        for bits in [Resolution::Bits(1), Resolution::Bits(2), Resolution::Bits(3), Resolution::Bits(5), Resolution::Infinite] {
            let sol = fixed_point_solve(&s, &targets, &quantizer_model(bits).unwrap(), &SolverOptions::default()).unwrap();
            let total = if sol.status == UplinkStatus::Optimal { sol.total_power() } else { f64::INFINITY };
            prop_assert!(total <= previous * (1.0 + 1e-9), "{bits}: {total} > {previous}");
            previous = total;
        }
        prop_assert!(previous.is_finite());
    }

    #[test]
    fn unquantized_matches_textbook_solver(seed in 0u64..1000) {
        let s = physical(seed, 2, 2, 4);
        let targets = vec![1.0; 4];
        let co = solve_coordinated(&s, &targets, &QuantizerModel::perfect(), &SolverOptions::default()).unwrap();
        let oracle = unquantized_oracle(&s, &targets);
        prop_assume!(oracle.converged);
        prop_assert_eq!(co.status(), CoordinatedStatus::Optimal);
        prop_assert!(max_rel(&co.uplink.powers, &oracle.powers) < 1e-8);
        prop_assert!(rel(co.downlink_power(), oracle.downlink_power) < 1e-8);
    }
}
