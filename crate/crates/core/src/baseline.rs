//! SAR-agnostic benchmark: optimize without SAR constraints, then scale the
//! beamformers down until every SAR limit holds.

use crate::eh::HarvestCurve;
use crate::error::Result;
use crate::linalg::{quad_form, CMatrix, C64};
use crate::metrics::{evaluate, optimize_splits, BeamformingSolution};
use crate::model::{ChannelSet, SystemScenario};
use crate::optimal::{maximize_ratio, MaxMinResult};

/// Max-min design with the SAR constraints dropped.
pub fn solve_p14(scenario: &SystemScenario, channels: &ChannelSet, eh: &dyn HarvestCurve) -> Result<MaxMinResult> {
    maximize_ratio(&scenario.without_sar(), channels, eh)
}

/// `delta_l = sum_k w_k^H A_l w_k / P_l`.
pub fn sar_overshoot(sol: &BeamformingSolution, sar_matrices: &[CMatrix], sar_limits: &[f64]) -> Vec<f64> {
    sar_matrices
        .iter()
        .zip(sar_limits)
        .map(|(a, &limit)| sol.beamformers.iter().map(|w| quad_form(a, w)).sum::<f64>() / limit)
        .collect()
}

/// Scale every beamformer by `1 / sqrt(max(1, max_l delta_l))`, so the worst
/// SAR row lands exactly on its limit when any was exceeded.
pub fn backoff(sol: &BeamformingSolution, sar_matrices: &[CMatrix], sar_limits: &[f64]) -> BeamformingSolution {
    let worst = sar_overshoot(sol, sar_matrices, sar_limits).into_iter().fold(1.0, f64::max);
    let alpha = C64::new(1.0 / worst.sqrt(), 0.0);
    BeamformingSolution::new(
        sol.beamformers.iter().map(|w| w * alpha).collect(),
        sol.splits.clone(),
        "backoff",
    )
}

#[derive(Debug, Clone)]
pub struct BackoffResult {
    /// The SAR-free design.
    pub unconstrained: MaxMinResult,
    /// `max(1, max_l delta_l)` of the SAR-free design.
    pub overshoot: f64,
    /// Scaled beamformers with re-optimized splits.
    pub solution: BeamformingSolution,
    /// Achieved ratio of `solution` in the SAR-constrained scenario.
    pub t: f64,
}

/// Full benchmark: SAR-free max-min, backoff, then per-user split search.
pub fn backoff_design(scenario: &SystemScenario, channels: &ChannelSet, eh: &dyn HarvestCurve) -> Result<BackoffResult> {
    let unconstrained = solve_p14(scenario, channels, eh)?;
    let overshoot = sar_overshoot(&unconstrained.solution, &scenario.sar_matrices, &scenario.sar_limits)
        .into_iter()
        .fold(1.0, f64::max);
    let scaled = backoff(&unconstrained.solution, &scenario.sar_matrices, &scenario.sar_limits);
    let solution = optimize_splits(&scaled, scenario, channels, eh).with_producer("backoff");
    let t = evaluate(&solution, scenario, channels, eh).ratio;
    Ok(BackoffResult { unconstrained, overshoot, solution, t })
}
