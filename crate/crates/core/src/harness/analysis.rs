//! Post-processing of trial records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Method, TrialRecord};
use crate::quantizer::Resolution;
use crate::{db_to_linear, linear_to_db, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CdfField {
    /// Per-user achieved downlink SINR, pooled over records.
    AchievedSinr,
    UplinkPower,
    DownlinkPower,
}

impl std::str::FromStr for CdfField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinr" | "achieved_sinr" => Ok(Self::AchievedSinr),
            "ul_power" | "ul-power" => Ok(Self::UplinkPower),
            "dl_power" | "dl-power" => Ok(Self::DownlinkPower),
            _ => Err(Error::Config(format!("unknown CDF field {s:?}"))),
        }
    }
}

/// Empirical CDF: distinct values in ascending order, each with the
/// fraction of samples at or below it. NaN samples are skipped; negative
/// infinity is kept.
pub fn compute_cdf(records: &[TrialRecord], field: CdfField) -> Result<Vec<(f64, f64)>> {
    let mut values: Vec<f64> = match field {
        CdfField::AchievedSinr => records
            .iter()
            .flat_map(|r| r.achieved_sinr_db.iter().copied())
            .collect(),
        CdfField::UplinkPower => records.iter().map(|r| r.ul_power_dbm).collect(),
        CdfField::DownlinkPower => records.iter().map(|r| r.dl_power_dbm).collect(),
    };
    values.retain(|v| !v.is_nan());
    if values.is_empty() {
        return Err(Error::EmptySelection(format!("no {field:?} samples")));
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (k, v) in values.iter().enumerate() {
        let fraction = (k + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = fraction,
            _ => out.push((*v, fraction)),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub target_db: f64,
    /// Mean of the linear downlink power over converged drops, in dBm; NaN
    /// when no drop converged.
    pub mean_power_dbm: f64,
    pub n_converged: usize,
    pub n_drops: usize,
    /// Some drop at this target did not converge.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub bits: Resolution,
    pub method: Method,
    pub n_bs_antennas: usize,
    /// Ascending in target.
    pub points: Vec<CurvePoint>,
}

impl PowerCurve {
    /// Smallest target with a non-converged drop.
    pub fn divergence_onset_db(&self) -> Option<f64> {
        self.points.iter().find(|p| p.diverged).map(|p| p.target_db)
    }
}

/// Mean total downlink power versus target, one curve per (resolution,
/// method, antenna count).
pub fn power_vs_target_curve(records: &[TrialRecord]) -> Vec<PowerCurve> {
    type Key = (Resolution, Method, usize);
    let mut groups: BTreeMap<Key, BTreeMap<u64, Vec<&TrialRecord>>> = BTreeMap::new();
    for r in records {
        // Order-preserving key for finite floats.
        let t = r.target_db;
        let bits = t.to_bits();
        let ordered = if t.is_sign_negative() { !bits } else { bits | (1 << 63) };
        groups
            .entry((r.bits, r.method, r.n_bs_antennas))
            .or_default()
            .entry(ordered)
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((bits, method, n_bs_antennas), by_target)| PowerCurve {
            bits,
            method,
            n_bs_antennas,
            points: by_target
                .into_values()
                .map(|rs| {
                    let converged: Vec<f64> = rs
                        .iter()
                        .filter(|r| r.converged && r.dl_power_dbm.is_finite())
                        .map(|r| db_to_linear(r.dl_power_dbm))
                        .collect();
                    let mean_power_dbm = if converged.is_empty() {
                        f64::NAN
                    } else {
                        linear_to_db(converged.iter().sum::<f64>() / converged.len() as f64)
                    };
                    CurvePoint {
                        target_db: rs[0].target_db,
                        mean_power_dbm,
                        n_converged: converged.len(),
                        n_drops: rs.len(),
                        diverged: converged.len() < rs.len(),
                    }
                })
                .collect(),
        })
        .collect()
}
