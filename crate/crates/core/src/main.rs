use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use qcomp::harness::{
    compute_cdf, power_vs_target_curve, read_records_csv, run_experiment_with, write_outputs, CdfField, ExperimentSpec,
    Method, RunOptions, TrialRecord,
};
use qcomp::quantizer::{lloyd_max, Resolution, MAX_BITS, ORACLE_TOLERANCE};

#[derive(Parser)]
#[command(
    name = "qcomp",
    version,
    about = "Coordinated beamforming and power allocation with low-resolution converters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write records CSV plus metadata JSON.
    Run(RunArgs),
    /// Empirical CDF of a record field, as `value,fraction` lines.
    Cdf(CdfArgs),
    /// Mean downlink power versus target per resolution, method and array size.
    Curve(CurveArgs),
    /// Print the Lloyd-Max quantizer gain and distortion per resolution.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec in TOML.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// Built-in spec: desk, fig2a, fig2b or fig3.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed, overriding the experiment spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding the experiment spec.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of drops, overriding the experiment spec.
    #[arg(long)]
    drops: Option<usize>,
    /// Also record wall time per trial (records are then not reproducible).
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct Filter {
    /// Records CSV written by `run`.
    records: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    bits: Option<Resolution>,
    #[arg(long)]
    target_db: Option<f64>,
    #[arg(long)]
    antennas: Option<usize>,
    /// Write to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CdfArgs {
    #[command(flatten)]
    filter: Filter,
    /// sinr, ul_power or dl_power.
    #[arg(long, default_value = "sinr")]
    field: CdfField,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    filter: Filter,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 8)]
    max_bits: u32,
}

fn load_filtered(filter: &Filter) -> anyhow::Result<Vec<TrialRecord>> {
    let records = read_records_csv(&filter.records).with_context(|| format!("reading {}", filter.records.display()))?;
    Ok(records
        .into_iter()
        .filter(|r| filter.method.is_none_or(|m| r.method == m))
        .filter(|r| filter.bits.is_none_or(|b| r.bits == b))
        .filter(|r| filter.target_db.is_none_or(|t| r.target_db == t))
        .filter(|r| filter.antennas.is_none_or(|n| r.n_bs_antennas == n))
        .collect())
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut spec = match (&args.spec, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentSpec::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(name)) => ExperimentSpec::preset(name)?,
        (None, None) => bail!("pass --spec FILE or --preset NAME"),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(dir) = args.out {
        spec.output.dir = dir;
    }
    if let Some(drops) = args.drops {
        spec.n_drops = drops;
    }
    if args.workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    spec.validate()?;
    let opts = RunOptions {
        workers: args.workers,
        record_timings: args.timings,
    };
    let records = run_experiment_with(&spec, &opts)?;
    let (csv, json) = write_outputs(&spec, &records)?;
    let converged = records.iter().filter(|r| r.converged).count();
    eprintln!(
        "{} trials ({converged} converged) -> {}, {}",
        records.len(),
        csv.display(),
        json.display()
    );
    Ok(())
}

fn cdf(args: CdfArgs) -> anyhow::Result<()> {
    let records = load_filtered(&args.filter)?;
    let mut text = String::from("value,fraction\n");
    for (v, f) in compute_cdf(&records, args.field)? {
        text.push_str(&format!("{v},{f}\n"));
    }
    emit(args.filter.out.as_deref(), &text)
}

fn curve(args: CurveArgs) -> anyhow::Result<()> {
    let records = load_filtered(&args.filter)?;
    if records.is_empty() {
        bail!("no records match the filter");
    }
    let mut text = String::from("bits,method,n_bs_antennas,target_db,mean_power_dbm,n_converged,n_drops,diverged\n");
    for c in power_vs_target_curve(&records) {
        for p in &c.points {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.bits, c.method, c.n_bs_antennas, p.target_db, p.mean_power_dbm, p.n_converged, p.n_drops, p.diverged
            ));
        }
    }
    emit(args.filter.out.as_deref(), &text)
}

fn oracle(args: OracleArgs) -> anyhow::Result<()> {
    if args.max_bits == 0 || args.max_bits > MAX_BITS {
        bail!("--max-bits must be in 1..={MAX_BITS}");
    }
    println!("bits,alpha,beta,iterations");
    for bits in 1..=args.max_bits {
        let cb = lloyd_max(bits, ORACLE_TOLERANCE)?;
        println!("{bits},{},{},{}", 1.0 - cb.distortion, cb.distortion, cb.iterations);
    }
    println!("inf,1,0,0");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Cdf(a) => cdf(a),
        Command::Curve(a) => curve(a),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
