//! Optimal joint design: the rank-relaxed SDP for power minimization, rank-1
//! recovery, and the bisection over the max-min ratio `t`.

use crate::conic::{solve_with_retry, Affine, ConicProblem, MatVar, SolveStatus};
use crate::eh::HarvestCurve;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, outer, CMatrix, C64};
use crate::metrics::{clamp_split, BeamformingSolution};
use crate::model::{ChannelSet, SystemScenario};

/// Eigenvalue ratio `lambda_2 / lambda_1` above which a matrix is not rank-1.
pub const RANK_ONE_THRESHOLD: f64 = 1e-6;

/// Relaxed solution of the power-minimization SDP.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub matrices: Vec<CMatrix>,
    pub splits: Vec<f64>,
    /// `sum_k trace(W_k)` (W).
    pub objective: f64,
    /// `lambda_2 / lambda_1` for each `W_k`.
    pub rank_ratios: Vec<f64>,
    /// Cone auxiliaries `m_k >= 1/rho_k` and `n_k >= 1/(1 - rho_k)`.
    pub m: Vec<f64>,
    pub n: Vec<f64>,
}

pub(crate) struct SplitVars {
    pub m: Affine,
    pub n: Affine,
}

/// Declares `rho_k` with `m_k rho_k >= 1` and, when the user has an EH
/// target, `n_k (1 - rho_k) >= 1`. Without an EH target `n_k` would be
/// unbounded above, so it is pinned to the constant 1 instead.
///
/// `rho_hint` is the expected split; the variables are stored scaled by it
/// (`rho = r rho~`, `m = m~ / r`, `n = n~ / (1 - r)`) so that all of them are
/// O(1) even when the split is close to 0 or 1.
pub(crate) fn add_split_vars(p: &mut ConicProblem, k: usize, rho_hint: f64, with_eh: bool) -> SplitVars {
    use crate::metrics::{RHO_MAX, RHO_MIN};
    let r = rho_hint.clamp(RHO_MIN, RHO_MAX);
    let rho_s = p.scalar(&format!("rho_{k}"), Some(RHO_MIN / r), Some(RHO_MAX / r));
    let m_s = p.nonneg(&format!("m_{k}"));
    p.add_hyperbolic(&m_s, &rho_s);
    let rho = rho_s.scaled(r);
    let n = if with_eh {
        let n_s = p.nonneg(&format!("n_{k}"));
        let one_minus = Affine::constant(1.0).minus(&rho).scaled(1.0 / (1.0 - r));
        p.add_hyperbolic(&n_s, &one_minus);
        n_s.scaled(1.0 / (1.0 - r))
    } else {
        Affine::constant(1.0)
    };
    SplitVars { m: m_s.scaled(1.0 / r), n }
}

/// Per-user split hints from the single-user closed form.
pub(crate) fn split_hints(scenario: &SystemScenario, sinr: &[f64], rf: &[f64]) -> Vec<f64> {
    sinr.iter()
        .zip(rf)
        .map(|(&g, &l)| crate::fastsu::case1_rho(g, l, scenario.noise_antenna, scenario.noise_circuit))
        .collect()
}

/// `rho = 1/m` satisfies the SINR constraint exactly as encoded, and since it
/// can only be smaller than the solver's `rho`, the EH side stays satisfied.
pub(crate) fn split_from_m(m: f64) -> f64 {
    clamp_split(if m > 0.0 { 1.0 / m } else { 1.0 })
}

fn check_targets(scenario: &SystemScenario, sinr_targets: &[f64], rf_targets: &[f64]) -> Result<()> {
    let k = scenario.num_users;
    if sinr_targets.len() != k || rf_targets.len() != k {
        return Err(Error::Domain(format!(
            "expected {k} targets, got {} SINR and {} EH",
            sinr_targets.len(),
            rf_targets.len()
        )));
    }
    if sinr_targets.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::Domain("SINR targets must be positive and finite".into()));
    }
    if rf_targets.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::Domain("EH input targets must be nonnegative and finite".into()));
    }
    Ok(())
}

pub(crate) fn check_channels(scenario: &SystemScenario, channels: &ChannelSet) -> Result<()> {
    if channels.num_users() != scenario.num_users {
        return Err(Error::Domain(format!(
            "{} channels for {} users",
            channels.num_users(),
            scenario.num_users
        )));
    }
    if channels.vectors.iter().any(|h| h.len() != scenario.num_antennas) {
        return Err(Error::Domain("channel length differs from antenna count".into()));
    }
    Ok(())
}

/// Minimize `sum_k trace(W_k)` subject to per-user SINR targets `gamma_k`,
/// RF-input EH targets `lambda_k` (already through the inverse EH curve) and
/// the scenario's SAR limits.
pub fn solve_p2(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    sinr_targets: &[f64],
    rf_targets: &[f64],
) -> Result<SdpSolution> {
    solve_p2_tol(scenario, channels, sinr_targets, rf_targets, None)
}

pub fn solve_p2_tol(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    sinr_targets: &[f64],
    rf_targets: &[f64],
    tol: Option<f64>,
) -> Result<SdpSolution> {
    check_targets(scenario, sinr_targets, rf_targets)?;
    check_channels(scenario, channels)?;
    let (nt, kk) = (scenario.num_antennas, scenario.num_users);
    let mut p = ConicProblem::new();
    let w: Vec<MatVar> = (0..kk).map(|k| p.hermitian_psd(&format!("W_{k}"), nt)).collect();
    let hints = split_hints(scenario, sinr_targets, rf_targets);
    let splits: Vec<SplitVars> = (0..kk).map(|k| add_split_vars(&mut p, k, hints[k], rf_targets[k] > 0.0)).collect();
    // Work in units of a lower bound on the optimal power so that W is O(1).
    let pu = power_lower_bound(scenario, channels, sinr_targets, rf_targets).max(1e-300);
    let hh: Vec<CMatrix> = channels.vectors.iter().map(|h| outer(h) * C64::new(pu, 0.0)).collect();

    for k in 0..kk {
        // gains[j] = <h_k h_k^H, W_j>
        let gains: Vec<Affine> = w.iter().map(|wj| wj.trace_with(&hh[k])).collect();
        let mut total = Affine::zero();
        for g in &gains {
            total.add_scaled(g, 1.0);
        }
        let mut sinr = gains[k].clone().scaled(1.0 + 1.0 / sinr_targets[k]).minus(&total);
        sinr.add_scaled(&splits[k].m, -scenario.noise_circuit);
        p.add_ge_zero(sinr.offset(-scenario.noise_antenna));

        if rf_targets[k] > 0.0 {
            let mut eh = total.offset(scenario.noise_antenna);
            eh.add_scaled(&splits[k].n, -rf_targets[k]);
            p.add_ge_zero(eh);
        }
    }
    for (a, &limit) in scenario.sar_matrices.iter().zip(&scenario.sar_limits) {
        let mut exposure = Affine::zero();
        for wk in &w {
            exposure.add_scaled(&wk.trace_with(a), pu);
        }
        p.add_le(&exposure, Affine::constant(limit));
    }
    let mut objective = Affine::zero();
    for wk in &w {
        objective.add_scaled(&wk.trace(), 1.0);
    }
    p.minimize(objective);

    let report = match tol {
        Some(t) => crate::conic::solve(&p, t),
        None => solve_with_retry(&p),
    }
    .map_err(Error::Solver)?;
    match report.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Infeasible),
        s => return Err(Error::Solver(format!("power minimization ended with {s:?}"))),
    }
    let matrices: Vec<CMatrix> = w.iter().map(|wk| report.matrix(wk) * C64::new(pu, 0.0)).collect();
    let m: Vec<f64> = splits.iter().map(|s| report.value(&s.m)).collect();
    let n: Vec<f64> = splits.iter().map(|s| report.value(&s.n)).collect();
    Ok(SdpSolution {
        rank_ratios: matrices.iter().map(rank_ratio).collect(),
        splits: m.iter().map(|&mk| split_from_m(mk)).collect(),
        objective: report.objective * pu,
        matrices,
        m,
        n,
    })
}

/// Cheap lower bound on the minimal transmit power: each user needs
/// `|h_k^H w_k|^2 >= gamma_k (N0 + NC)` and the total received power must reach
/// the EH input target.
pub(crate) fn power_lower_bound(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    sinr_targets: &[f64],
    rf_targets: &[f64],
) -> f64 {
    let noise = scenario.noise_antenna + scenario.noise_circuit;
    let mut sinr_part = 0.0;
    let mut eh_part = 0.0f64;
    for k in 0..scenario.num_users {
        let g = crate::linalg::norm_sq(channels.h(k));
        sinr_part += sinr_targets[k] * noise / g;
        eh_part = eh_part.max((rf_targets[k] - scenario.noise_antenna).max(0.0) / g);
    }
    sinr_part.max(eh_part)
}

/// `lambda_2 / lambda_1` of a Hermitian PSD matrix (0 for the zero matrix).
pub fn rank_ratio(w: &CMatrix) -> f64 {
    let e = hermitian_eigen(w);
    let l1 = e.values[0];
    if l1 <= 0.0 {
        return 0.0;
    }
    e.values.get(1).map_or(0.0, |l2| l2.max(0.0) / l1)
}

/// Principal eigenvector `sqrt(lambda_1) u_1` of each `W_k`.
pub fn extract_rank1(sdp: &SdpSolution) -> Result<BeamformingSolution> {
    extract_rank1_with(sdp, RANK_ONE_THRESHOLD)
}

pub fn extract_rank1_with(sdp: &SdpSolution, threshold: f64) -> Result<BeamformingSolution> {
    let ratios: Vec<f64> = sdp.matrices.iter().map(rank_ratio).collect();
    if ratios.iter().any(|&r| r > threshold) {
        return Err(Error::RankRecoveryFailed { ratios });
    }
    Ok(BeamformingSolution::new(
        sdp.matrices.iter().map(principal_component).collect(),
        sdp.splits.clone(),
        "optimal",
    ))
}

pub(crate) fn principal_component(w: &CMatrix) -> crate::linalg::CVector {
    let e = hermitian_eigen(w);
    let scale = e.values[0].max(0.0).sqrt();
    e.vectors.column(0).map(|z| z * C64::new(scale, 0.0))
}

/// Per-probe targets of the max-min bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTargets {
    pub t: f64,
    pub sinr: Vec<f64>,
    /// RF input power needed for `t * eh_target` at the rectifier output.
    pub rf: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionOptions {
    pub t_lo: f64,
    /// Stop when `(hi - lo) / hi` falls below this.
    pub rel_width: f64,
    pub max_doublings: usize,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        Self { t_lo: 1e-6, rel_width: 1e-3, max_doublings: 40 }
    }
}

#[derive(Debug, Clone)]
pub struct MaxMinResult {
    pub t: f64,
    pub solution: BeamformingSolution,
    /// Number of feasibility problems solved.
    pub probes: usize,
}

/// Upper bound on `t` ignoring SAR and inter-user interference: the best
/// single-user SINR with all power on one user, and the EH output with all
/// power harvested.
pub fn ratio_upper_bound(scenario: &SystemScenario, channels: &ChannelSet, eh: &dyn HarvestCurve) -> f64 {
    let mut bound = f64::INFINITY;
    for k in 0..scenario.num_users {
        let g = crate::linalg::norm_sq(channels.h(k)) * scenario.power_budget;
        bound = bound.min(g / (scenario.sinr_targets[k] * scenario.noise_antenna));
        if scenario.eh_targets[k] > 0.0 {
            let out = eh.forward(g + scenario.noise_antenna).unwrap_or(eh.ceiling());
            bound = bound.min(out / scenario.eh_targets[k]);
        }
    }
    bound
}

pub fn probe_targets(scenario: &SystemScenario, eh: &dyn HarvestCurve, t: f64) -> Result<ProbeTargets> {
    let rf = scenario
        .eh_targets
        .iter()
        .map(|&l| if l > 0.0 { eh.inverse(t * l) } else { Ok(0.0) })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeTargets { t, sinr: scenario.sinr_targets.iter().map(|g| t * g).collect(), rf })
}

/// Bisection on `t` with a caller-supplied feasibility engine. A probe passes
/// when the engine returns a solution whose transmit power is within the
/// budget; infeasibility-type errors and solver failures fail the probe,
/// anything else is propagated.
pub fn bisect_max_min<F>(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    eh: &dyn HarvestCurve,
    opts: BisectionOptions,
    mut engine: F,
) -> Result<MaxMinResult>
where
    F: FnMut(&ProbeTargets) -> Result<BeamformingSolution>,
{
    let mut probes = 0usize;
    let budget = scenario.power_budget * (1.0 + 1e-6);
    let mut probe = |t: f64| -> Result<Option<BeamformingSolution>> {
        probes += 1;
        let targets = match probe_targets(scenario, eh, t) {
            Ok(tg) => tg,
            Err(e) if e.is_infeasibility() => return Ok(None),
            Err(e) => return Err(e),
        };
        match engine(&targets) {
            Ok(sol) if sol.transmit_power() <= budget => Ok(Some(sol)),
            Ok(_) => Ok(None),
            Err(e) if e.is_infeasibility() || matches!(e, Error::Solver(_) | Error::RankRecoveryFailed { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let mut lo = opts.t_lo;
    let mut best = probe(lo)?.ok_or(Error::ProblemInfeasible { t_lo: lo })?;
    let mut hi = ratio_upper_bound(scenario, channels, eh).max(2.0 * lo);
    let mut doublings = 0;
    while let Some(sol) = probe(hi)? {
        lo = hi;
        best = sol;
        doublings += 1;
        if doublings >= opts.max_doublings {
            return Ok(MaxMinResult { t: lo, solution: best, probes });
        }
        hi *= 2.0;
    }
    while (hi - lo) / hi > opts.rel_width {
        // geometric midpoint while the bracket spans orders of magnitude
        let mid = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        match probe(mid)? {
            Some(sol) => {
                lo = mid;
                best = sol;
            }
            None => hi = mid,
        }
    }
    Ok(MaxMinResult { t: lo, solution: best, probes })
}

/// Max-min ratio with the optimal SDP design as the feasibility engine.
pub fn maximize_ratio(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    eh: &dyn HarvestCurve,
) -> Result<MaxMinResult> {
    maximize_ratio_with(scenario, channels, eh, BisectionOptions::default())
}

pub fn maximize_ratio_with(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    eh: &dyn HarvestCurve,
    opts: BisectionOptions,
) -> Result<MaxMinResult> {
    bisect_max_min(scenario, channels, eh, opts, |tg| {
        let sdp = solve_p2(scenario, channels, &tg.sinr, &tg.rf)?;
        recover_beamformers(&sdp, scenario, channels, &tg.sinr, &tg.rf)
    })
}

/// Rank-1 extraction that tolerates solver noise: when some `W_k` is not
/// numerically rank one, keep the principal directions and re-solve the power
/// allocation over them. Fails only if that allocation is infeasible too.
pub fn recover_beamformers(
    sdp: &SdpSolution,
    scenario: &SystemScenario,
    channels: &ChannelSet,
    sinr_targets: &[f64],
    rf_targets: &[f64],
) -> Result<BeamformingSolution> {
    let ratios = match extract_rank1(sdp) {
        Ok(sol) => return Ok(sol),
        Err(Error::RankRecoveryFailed { ratios }) => ratios,
        Err(e) => return Err(e),
    };
    let directions = sdp.matrices.iter().map(principal_component).collect();
    let dirs = crate::fixedbf::FixedDirections::new(directions, channels, &scenario.sar_matrices)
        .map_err(|_| Error::RankRecoveryFailed { ratios: ratios.clone() })?;
    match crate::fixedbf::solve_p6(&dirs, scenario, sinr_targets, rf_targets) {
        Ok(alloc) => Ok(alloc.to_solution(&dirs, "optimal")),
        Err(e) if e.is_infeasibility() => Err(Error::RankRecoveryFailed { ratios }),
        Err(e) => Err(e),
    }
}
