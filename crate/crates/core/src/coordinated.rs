//! The full coordinated pipeline: uplink fixed point, then downlink
//! precoders by scaling the uplink combiners.

use serde::{Deserialize, Serialize};

use crate::downlink::{downlink_from_uplink, DownlinkSolution, DownlinkStatus};
use crate::quantizer::QuantizerModel;
use crate::scenario::NetworkScenario;
use crate::uplink::{fixed_point_solve, SolverOptions, UplinkSolution, UplinkStatus};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordinatedStatus {
    Optimal,
    Infeasible,
    IterationCap,
    NonPositiveTau,
}

#[derive(Debug, Clone)]
pub struct CoordinatedSolution {
    pub uplink: UplinkSolution,
    /// Present only when the uplink reached its fixed point.
    pub downlink: Option<DownlinkSolution>,
}

impl CoordinatedSolution {
    pub fn status(&self) -> CoordinatedStatus {
        match (self.uplink.status, &self.downlink) {
            (UplinkStatus::Infeasible, _) => CoordinatedStatus::Infeasible,
            (UplinkStatus::IterationCap, _) => CoordinatedStatus::IterationCap,
            (UplinkStatus::Optimal, Some(dl)) if dl.status == DownlinkStatus::Optimal => CoordinatedStatus::Optimal,
            (UplinkStatus::Optimal, _) => CoordinatedStatus::NonPositiveTau,
        }
    }

    /// Total downlink radiated power; NaN unless a valid downlink exists.
    pub fn downlink_power(&self) -> f64 {
        self.downlink.as_ref().map_or(f64::NAN, |dl| dl.total_power)
    }
}

pub fn solve_coordinated(
    scenario: &NetworkScenario,
    targets: &[f64],
    q: &QuantizerModel,
    opts: &SolverOptions,
) -> Result<CoordinatedSolution> {
    let uplink = fixed_point_solve(scenario, targets, q, opts)?;
    let downlink = match uplink.status {
        UplinkStatus::Optimal => Some(downlink_from_uplink(scenario, &uplink, q)?),
        _ => None,
    };
    Ok(CoordinatedSolution { uplink, downlink })
}
