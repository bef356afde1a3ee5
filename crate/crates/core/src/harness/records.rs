//! CSV records and JSON metadata.
//!
//! One CSV row per trial. Floats use the shortest representation that
//! round-trips; `-inf` marks users without useful signal and `NaN` a missing
//! power. Per-user SINRs are joined with `;` inside a single field.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentSpec, Method, TrialRecord};
use crate::quantizer::{quantizer_model, Resolution};
use crate::scenario::NetworkConfig;
use crate::{Error, Result};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

const COLUMNS: [&str; 13] = [
    "drop",
    "method",
    "bits",
    "target_db",
    "n_bs_antennas",
    "status",
    "converged",
    "ul_power_dbm",
    "dl_power_dbm",
    "n_under_target",
    "iterations",
    "achieved_sinr_db",
    "wall_time_ms",
];

/// Shortest round-trip form, switching to exponent notation away from
/// moderate magnitudes.
fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn row(r: &TrialRecord) -> [String; 13] {
    let sinrs: Vec<String> = r.achieved_sinr_db.iter().map(|&x| fmt_f64(x)).collect();
    [
        r.drop.to_string(),
        r.method.to_string(),
        r.bits.to_string(),
        fmt_f64(r.target_db),
        r.n_bs_antennas.to_string(),
        r.status.clone(),
        r.converged.to_string(),
        fmt_f64(r.ul_power_dbm),
        fmt_f64(r.dl_power_dbm),
        r.n_under_target.to_string(),
        r.iterations.to_string(),
        sinrs.join(";"),
        r.wall_time_ms.map(fmt_f64).unwrap_or_default(),
    ]
}

pub fn write_records_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    writer.write_record(COLUMNS)?;
    for r in records {
        writer.write_record(row(r))?;
    }
    writer.flush()?;
    Ok(())
}

fn field<'a>(record: &'a csv::StringRecord, index: &[usize; 13], column: usize) -> &'a str {
    record.get(index[column]).unwrap_or("")
}

fn parse<T: std::str::FromStr>(text: &str, column: &str, line: usize) -> Result<T> {
    text.parse()
        .map_err(|_| Error::Record(format!("line {line}: bad {column} value {text:?}")))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut index = [0usize; 13];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Record(format!("missing column {name:?}")))?;
    }
    let mut out = Vec::new();
    for (n, result) in reader.records().enumerate() {
        let rec = result?;
        let line = n + 2;
        let get = |c: usize| field(&rec, &index, c);
        let sinrs = get(11);
        let achieved_sinr_db = if sinrs.is_empty() {
            Vec::new()
        } else {
            sinrs
                .split(';')
                .map(|s| parse(s, COLUMNS[11], line))
                .collect::<Result<Vec<f64>>>()?
        };
        let wall = get(12);
        out.push(TrialRecord {
            drop: parse(get(0), COLUMNS[0], line)?,
            method: get(1).parse::<Method>()?,
            bits: get(2).parse::<Resolution>()?,
            target_db: parse(get(3), COLUMNS[3], line)?,
            n_bs_antennas: parse(get(4), COLUMNS[4], line)?,
            status: get(5).to_string(),
            converged: parse(get(6), COLUMNS[6], line)?,
            ul_power_dbm: parse(get(7), COLUMNS[7], line)?,
            dl_power_dbm: parse(get(8), COLUMNS[8], line)?,
            n_under_target: parse(get(9), COLUMNS[9], line)?,
            iterations: parse(get(10), COLUMNS[10], line)?,
            achieved_sinr_db,
            wall_time_ms: if wall.is_empty() {
                None
            } else {
                Some(parse(wall, COLUMNS[12], line)?)
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerEntry {
    pub bits: Resolution,
    pub alpha: f64,
    pub beta: f64,
}

/// Experiment description written next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub schema: String,
    pub schema_version: u32,
    pub generator: String,
    pub name: String,
    pub seed: u64,
    pub n_drops: usize,
    pub n_records: usize,
    pub network: NetworkConfig,
    pub noise_power_dbm: f64,
    pub quantizers: Vec<QuantizerEntry>,
    pub targets_db: Vec<f64>,
    pub methods: Vec<Method>,
    pub columns: Vec<String>,
}

impl Metadata {
    pub fn new(spec: &ExperimentSpec, records: &[TrialRecord]) -> Result<Self> {
        let quantizers = spec
            .bits
            .iter()
            .map(|&bits| {
                let q = quantizer_model(bits)?;
                Ok(QuantizerEntry {
                    bits,
                    alpha: q.alpha,
                    beta: q.beta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            schema: "qcomp-records".into(),
            schema_version: RECORD_SCHEMA_VERSION,
            generator: format!("qcomp {}", env!("CARGO_PKG_VERSION")),
            name: spec.name.clone(),
            seed: spec.seed,
            n_drops: spec.n_drops,
            n_records: records.len(),
            network: spec.network.clone(),
            noise_power_dbm: spec.network.noise_power_dbm(),
            quantizers,
            targets_db: spec.targets_db.clone(),
            methods: spec.methods.clone(),
            columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
        })
    }
}

pub fn write_metadata_json(path: &Path, metadata: &Metadata) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, metadata)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}
