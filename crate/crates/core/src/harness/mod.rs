//! Seeded Monte-Carlo experiments over drops, quantizer resolutions, SINR
//! targets and methods.
//!
//! Each drop gets its own seed derived from the master seed by counter, so
//! results do not depend on the worker count or scheduling order. All
//! (resolution, target, method) combinations of a drop share the same
//! channel realization.

mod analysis;
mod records;

use std::path::PathBuf;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use analysis::{compute_cdf, power_vs_target_curve, CdfField, CurvePoint, PowerCurve};
pub use records::{read_records_csv, write_metadata_json, write_records_csv, Metadata, RECORD_SCHEMA_VERSION};

use crate::baseline::{achieved_sinr_report, percell_solve, PercellOptions, PercellStatus};
use crate::coordinated::{solve_coordinated, CoordinatedStatus};
use crate::quantizer::{quantizer_model, Resolution};
use crate::scenario::{NetworkConfig, NetworkScenario};
use crate::uplink::SolverOptions;
use crate::{db_to_linear, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Coordinated design across all base stations.
    QiCoMP,
    /// Per-cell design treating inter-cell interference as noise.
    QPercell,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::QiCoMP => "QiCoMP",
            Method::QPercell => "QPercell",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "qicomp" => Ok(Method::QiCoMP),
            "qpercell" => Ok(Method::QPercell),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub records: String,
    pub metadata: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            records: "records.csv".into(),
            metadata: "metadata.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// `network.seed` is ignored; drops are seeded from `seed`.
    pub network: NetworkConfig,
    pub bits: Vec<Resolution>,
    pub targets_db: Vec<f64>,
    pub n_drops: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub output: OutputPaths,
    pub solver: SolverOptions,
    pub percell: PercellOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "desk".into(),
            network: NetworkConfig::default(),
            bits: vec![Resolution::Bits(3), Resolution::Infinite],
            targets_db: vec![0.0],
            n_drops: 100,
            methods: vec![Method::QiCoMP, Method::QPercell],
            seed: 0,
            output: OutputPaths::default(),
            solver: SolverOptions::default(),
            percell: PercellOptions::default(),
        }
    }
}

pub const PRESETS: [&str; 4] = ["desk", "fig2a", "fig2b", "fig3"];

impl ExperimentSpec {
    /// Named configurations. `desk` is small enough for CI; the others
    /// follow the network sizes of the CDF and power-curve experiments.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            name: name.into(),
            ..Self::default()
        };
        let network = |n_cells, n_users_per_cell, n_bs_antennas| NetworkConfig {
            n_cells,
            n_users_per_cell,
            n_bs_antennas,
            ..NetworkConfig::default()
        };
        Ok(match name {
            "desk" => base,
            "fig2a" => Self {
                network: network(2, 2, 64),
                bits: vec![Resolution::Bits(3)],
                n_drops: 200,
                ..base
            },
            "fig2b" => Self {
                network: network(7, 4, 64),
                bits: vec![Resolution::Bits(3)],
                n_drops: 200,
                ..base
            },
            "fig3" => Self {
                network: network(7, 4, 16),
                bits: vec![Resolution::Bits(2), Resolution::Bits(3), Resolution::Infinite],
                targets_db: (0..=6).map(|k| 2.0 * k as f64).collect(),
                n_drops: 20,
                ..base
            },
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset {name:?}; expected one of {PRESETS:?}"
                )))
            }
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.n_drops == 0 {
            return Err(Error::Config("n_drops must be at least 1".into()));
        }
        if self.bits.is_empty() || self.targets_db.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("bits, targets_db and methods must be nonempty".into()));
        }
        for bits in &self.bits {
            quantizer_model(*bits)?;
        }
        if self.targets_db.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("targets_db must be finite".into()));
        }
        self.solver.validate()?;
        Ok(())
    }

    pub fn n_trials(&self) -> usize {
        self.n_drops * self.bits.len() * self.targets_db.len() * self.methods.len()
    }
}

/// Seed of drop `drop`: the first output of the master generator on stream
/// `drop`.
pub fn drop_seed(master: u64, drop: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(drop as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub drop: usize,
    pub method: Method,
    pub bits: Resolution,
    pub target_db: f64,
    pub n_bs_antennas: usize,
    /// Solver outcome name, e.g. `Optimal`, `Infeasible`, `Converged`,
    /// `Diverged`.
    pub status: String,
    /// True for `Optimal` and `Converged`.
    pub converged: bool,
    pub ul_power_dbm: f64,
    /// NaN when no downlink precoders exist.
    pub dl_power_dbm: f64,
    /// Achieved downlink SINR per user, dB; negative infinity without
    /// useful signal.
    pub achieved_sinr_db: Vec<f64>,
    pub n_under_target: usize,
    pub iterations: usize,
    /// Only filled when timings are requested, so that record files stay
    /// reproducible by default.
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    pub record_timings: bool,
}

fn run_drop(spec: &ExperimentSpec, drop: usize, opts: &RunOptions) -> Result<Vec<TrialRecord>> {
    let config = NetworkConfig {
        seed: drop_seed(spec.seed, drop),
        ..spec.network.clone()
    };
    let scenario = NetworkScenario::generate(&config)?;
    let n = scenario.n_users_total();
    let mut out = Vec::with_capacity(spec.bits.len() * spec.targets_db.len() * spec.methods.len());
    for &bits in &spec.bits {
        let q = quantizer_model(bits)?;
        for &target_db in &spec.targets_db {
            let targets = vec![db_to_linear(target_db); n];
            for &method in &spec.methods {
                let start = Instant::now();
                let (status, converged, ul_power, dl_power, iterations, report) = match method {
                    Method::QiCoMP => {
                        let sol = solve_coordinated(&scenario, &targets, &q, &spec.solver)?;
                        let status = sol.status();
                        let report = achieved_sinr_report(&sol, &scenario, &q)?;
                        (
                            format!("{status:?}"),
                            status == CoordinatedStatus::Optimal,
                            sol.uplink.total_power(),
                            sol.downlink_power(),
                            sol.uplink.iterations,
                            report,
                        )
                    }
                    Method::QPercell => {
                        let sol = percell_solve(&scenario, &targets, &q, &spec.percell)?;
                        let report = achieved_sinr_report(&sol, &scenario, &q)?;
                        (
                            format!("{:?}", sol.status),
                            sol.status == PercellStatus::Converged,
                            sol.uplink_power(),
                            sol.downlink_power,
                            sol.outer_iterations,
                            report,
                        )
                    }
                };
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                out.push(TrialRecord {
                    drop,
                    method,
                    bits,
                    target_db,
                    n_bs_antennas: config.n_bs_antennas,
                    status,
                    converged,
                    ul_power_dbm: config.to_dbm(ul_power),
                    dl_power_dbm: config.to_dbm(dl_power),
                    n_under_target: report.under_target.iter().filter(|&&u| u).count(),
                    achieved_sinr_db: report.downlink_db,
                    iterations,
                    wall_time_ms: opts.record_timings.then_some(elapsed),
                });
            }
        }
    }
    Ok(out)
}

/// Runs every trial of `spec` and returns the records ordered by drop, then
/// resolution, target and method as listed in the experiment spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    run_experiment_with(spec, &RunOptions::default())
}

pub fn run_experiment_with(spec: &ExperimentSpec, opts: &RunOptions) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let work = || -> Result<Vec<TrialRecord>> {
        let per_drop = (0..spec.n_drops)
            .into_par_iter()
            .map(|d| run_drop(spec, d, opts))
            .collect::<Result<Vec<_>>>()?;
        Ok(per_drop.into_iter().flatten().collect())
    };
    let records = match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    debug_assert_eq!(records.len(), spec.n_trials());
    Ok(records)
}

/// Writes the records CSV and metadata JSON under `spec.output.dir`,
/// returning their paths.
pub fn write_outputs(spec: &ExperimentSpec, records: &[TrialRecord]) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(&spec.output.dir)?;
    let csv_path = spec.output.dir.join(&spec.output.records);
    let json_path = spec.output.dir.join(&spec.output.metadata);
    write_records_csv(&csv_path, records)?;
    write_metadata_json(&json_path, &Metadata::new(spec, records)?)?;
    Ok((csv_path, json_path))
}
