//! Fixed-direction beamforming (MRT, ZF, RZF) with convex power and
//! power-splitting allocation.

use nalgebra::DMatrix;

use crate::conic::{solve_with_retry, Affine, ConicProblem, SolveStatus};
use crate::eh::HarvestCurve;
use crate::error::{Error, Result};
use crate::linalg::{inner, norm_sq, quad_form, CMatrix, CVector, C64};
use crate::metrics::{clamp_split, BeamformingSolution};
use crate::model::{ChannelSet, SystemScenario};
use crate::optimal::{
    add_split_vars, bisect_max_min, check_channels, split_from_m, split_hints, BisectionOptions, MaxMinResult,
};

/// Cross gains below this are treated as exact zeros by [`solve_p7`].
pub const CROSS_GAIN_SNAP: f64 = 1e-12;

/// Unit-norm directions `w_k` with link gains `G[(k, j)] = |h_k^H w_j|^2` and
/// radiation gains `F[(k, l)] = w_k^H A_l w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDirections {
    pub directions: Vec<CVector>,
    pub gains: DMatrix<f64>,
    pub radiation: DMatrix<f64>,
}

impl FixedDirections {
    /// Normalizes each direction and tabulates the gains.
    pub fn new(directions: Vec<CVector>, channels: &ChannelSet, sar_matrices: &[CMatrix]) -> Result<Self> {
        let k = directions.len();
        if channels.num_users() != k {
            return Err(Error::Domain(format!("{k} directions for {} users", channels.num_users())));
        }
        let mut dirs = Vec::with_capacity(k);
        for (i, d) in directions.into_iter().enumerate() {
            let n = norm_sq(&d).sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::DegenerateChannel { user: i });
            }
            dirs.push(d.map(|z| z / n));
        }
        let gains = DMatrix::from_fn(k, k, |a, b| inner(channels.h(a), &dirs[b]).norm_sqr());
        let radiation = DMatrix::from_fn(k, sar_matrices.len(), |a, l| quad_form(&sar_matrices[l], &dirs[a]).max(0.0));
        Ok(Self { directions: dirs, gains, radiation })
    }

    pub fn num_users(&self) -> usize {
        self.directions.len()
    }

    /// Largest off-diagonal gain.
    pub fn max_cross_gain(&self) -> f64 {
        let k = self.num_users();
        let mut m = 0.0f64;
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    m = m.max(self.gains[(a, b)]);
                }
            }
        }
        m
    }
}

/// `w_k = h_k / ||h_k||`.
pub fn mrt_directions(channels: &ChannelSet, sar_matrices: &[CMatrix]) -> Result<FixedDirections> {
    FixedDirections::new(channels.vectors.clone(), channels, sar_matrices)
}

/// `h_k` projected onto the orthogonal complement of the other users'
/// channels, normalized.
pub fn zf_directions(channels: &ChannelSet, sar_matrices: &[CMatrix]) -> Result<FixedDirections> {
    let k = channels.num_users();
    let nt = channels.h(0).len();
    if k > nt {
        return Err(Error::Domain(format!("zero forcing needs at least as many antennas as users ({nt} < {k})")));
    }
    let mut dirs = Vec::with_capacity(k);
    for user in 0..k {
        let h = channels.h(user);
        let others: Vec<&CVector> = (0..k).filter(|&j| j != user).map(|j| channels.h(j)).collect();
        let projected = if others.is_empty() {
            h.clone()
        } else {
            // rows h_j^H, so H v = [h_j^H v]
            let hk = CMatrix::from_fn(others.len(), nt, |r, c| others[r][c].conj());
            let pinv = hk
                .clone()
                .pseudo_inverse(1e-12 * hk.norm())
                .map_err(|e| Error::Domain(format!("pseudo-inverse failed: {e}")))?;
            h - &pinv * (&hk * h)
        };
        if norm_sq(&projected).sqrt() < 1e-10 * norm_sq(h).sqrt() {
            return Err(Error::DegenerateChannel { user });
        }
        dirs.push(projected);
    }
    FixedDirections::new(dirs, channels, sar_matrices)
}

/// `(K I + H H^H + sum_l A_l)^{-1} h_k`, normalized. `H` stacks the channels
/// as columns.
pub fn rzf_directions(channels: &ChannelSet, sar_matrices: &[CMatrix]) -> Result<FixedDirections> {
    let k = channels.num_users();
    let nt = channels.h(0).len();
    let mut r = CMatrix::identity(nt, nt) * C64::new(k as f64, 0.0);
    for h in &channels.vectors {
        r += h * h.adjoint();
    }
    for a in sar_matrices {
        r += a;
    }
    let chol = r
        .cholesky()
        .ok_or_else(|| Error::Domain("regularized matrix is not positive definite".into()))?;
    let dirs = channels.vectors.iter().map(|h| chol.solve(h)).collect();
    FixedDirections::new(dirs, channels, sar_matrices)
}

/// Powers and splits for fixed directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub powers: Vec<f64>,
    pub splits: Vec<f64>,
    /// `sum_k p_k` (W).
    pub objective: f64,
}

impl PowerAllocation {
    pub fn to_solution(&self, dirs: &FixedDirections, producer: &str) -> BeamformingSolution {
        BeamformingSolution::new(
            dirs.directions
                .iter()
                .zip(&self.powers)
                .map(|(d, &p)| d.map(|z| z * p.max(0.0).sqrt()))
                .collect(),
            self.splits.clone(),
            producer,
        )
    }
}

fn check_p6_inputs(dirs: &FixedDirections, scenario: &SystemScenario, sinr: &[f64], rf: &[f64]) -> Result<()> {
    let k = scenario.num_users;
    if dirs.num_users() != k || sinr.len() != k || rf.len() != k {
        return Err(Error::Domain("directions/targets do not match the user count".into()));
    }
    if dirs.radiation.ncols() != scenario.num_sar() {
        return Err(Error::Domain("radiation gains do not match the SAR constraints".into()));
    }
    if sinr.iter().chain(rf).any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Domain("targets must be nonnegative and finite".into()));
    }
    Ok(())
}

/// Minimal `sum_k p_k` with `w_k = sqrt(p_k) d_k` meeting SINR, RF-input EH
/// and SAR constraints.
pub fn solve_p6(dirs: &FixedDirections, scenario: &SystemScenario, sinr: &[f64], rf: &[f64]) -> Result<PowerAllocation> {
    check_p6_inputs(dirs, scenario, sinr, rf)?;
    let kk = scenario.num_users;
    let (n0, nc) = (scenario.noise_antenna, scenario.noise_circuit);
    if sinr.iter().all(|&g| g == 0.0) && rf.iter().all(|&l| l <= n0) {
        return Ok(PowerAllocation { powers: vec![0.0; kk], splits: vec![0.5; kk], objective: 0.0 });
    }
    if sinr.contains(&0.0) {
        return Err(Error::Domain("SINR targets must be positive unless all targets are zero".into()));
    }
    // p = pu * p~ keeps the variables O(1)
    let pu = (0..kk)
        .map(|k| {
            let g = dirs.gains[(k, k)].max(1e-300);
            (sinr[k] * (n0 + nc) / g).max((rf[k] - n0).max(0.0) / g)
        })
        .sum::<f64>()
        .max(1e-300);

    let mut p = ConicProblem::new();
    let pw: Vec<Affine> = (0..kk).map(|k| p.nonneg(&format!("p_{k}"))).collect();
    let hints = split_hints(scenario, sinr, rf);
    let splits: Vec<_> = (0..kk).map(|k| add_split_vars(&mut p, k, hints[k], rf[k] > 0.0)).collect();
    for k in 0..kk {
        let g = |j: usize| dirs.gains[(k, j)] * pu;
        let mut row = Affine::zero();
        for (j, pj) in pw.iter().enumerate() {
            let coeff = if j == k { g(k) / sinr[k] } else { -g(j) };
            row.add_scaled(pj, coeff);
        }
        row.add_scaled(&splits[k].m, -nc);
        p.add_ge_zero(row.offset(-n0));
        if rf[k] > 0.0 {
            let mut row = Affine::constant(n0);
            for (j, pj) in pw.iter().enumerate() {
                row.add_scaled(pj, g(j));
            }
            row.add_scaled(&splits[k].n, -rf[k]);
            p.add_ge_zero(row);
        }
    }
    for (l, &limit) in scenario.sar_limits.iter().enumerate() {
        let mut exposure = Affine::zero();
        for (k, pk) in pw.iter().enumerate() {
            exposure.add_scaled(pk, dirs.radiation[(k, l)] * pu);
        }
        p.add_le(&exposure, Affine::constant(limit));
    }
    let mut objective = Affine::zero();
    for pk in &pw {
        objective.add_scaled(pk, 1.0);
    }
    p.minimize(objective);

    let report = solve_with_retry(&p).map_err(Error::Solver)?;
    match report.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Infeasible),
        s => return Err(Error::Solver(format!("power allocation ended with {s:?}"))),
    }
    let powers: Vec<f64> = pw.iter().map(|a| report.value(a).max(0.0) * pu).collect();
    let splits = splits.iter().map(|sv| split_from_m(report.value(&sv.m))).collect();
    Ok(PowerAllocation { objective: powers.iter().sum(), powers, splits })
}

/// Allocation for directions without cross-user interference (ZF). Each
/// user's constraints only bound its own power from below and every SAR row
/// is increasing in the powers, so the optimum is the per-user minimum power
/// (both SINR and EH tight, split from the closed form), provided it meets
/// the SAR limits.
pub fn solve_p7(dirs: &FixedDirections, scenario: &SystemScenario, sinr: &[f64], rf: &[f64]) -> Result<PowerAllocation> {
    check_p6_inputs(dirs, scenario, sinr, rf)?;
    let (n0, nc) = (scenario.noise_antenna, scenario.noise_circuit);
    if dirs.max_cross_gain() >= CROSS_GAIN_SNAP {
        return Err(Error::Domain(format!(
            "directions are not interference-free (cross gain {:e})",
            dirs.max_cross_gain()
        )));
    }
    let mut powers = Vec::with_capacity(scenario.num_users);
    let mut splits = Vec::with_capacity(scenario.num_users);
    for k in 0..scenario.num_users {
        let g = dirs.gains[(k, k)];
        if sinr[k] == 0.0 && rf[k] <= n0 {
            powers.push(0.0);
            splits.push(0.5);
            continue;
        }
        if g <= 0.0 {
            return Err(Error::Infeasible);
        }
        let rho = clamp_split(crate::fastsu::case1_rho(sinr[k], rf[k], n0, nc));
        // received signal power needed by each constraint at this split
        let for_sinr = sinr[k] * (n0 + nc / rho);
        let for_eh = rf[k] / (1.0 - rho) - n0;
        powers.push(for_sinr.max(for_eh).max(0.0) / g);
        splits.push(rho);
    }
    for (l, &limit) in scenario.sar_limits.iter().enumerate() {
        let exposure: f64 = powers.iter().enumerate().map(|(k, p)| p * dirs.radiation[(k, l)]).sum();
        if exposure > limit * (1.0 + 1e-9) {
            return Err(Error::Infeasible);
        }
    }
    Ok(PowerAllocation { objective: powers.iter().sum(), powers, splits })
}

/// Which fixed-direction family to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedScheme {
    Mrt,
    Zf,
    Rzf,
}

impl FixedScheme {
    pub fn label(self) -> &'static str {
        match self {
            FixedScheme::Mrt => "mrt",
            FixedScheme::Zf => "zf",
            FixedScheme::Rzf => "rzf",
        }
    }

    pub fn directions(self, channels: &ChannelSet, sar_matrices: &[CMatrix]) -> Result<FixedDirections> {
        match self {
            FixedScheme::Mrt => mrt_directions(channels, sar_matrices),
            FixedScheme::Zf => zf_directions(channels, sar_matrices),
            FixedScheme::Rzf => rzf_directions(channels, sar_matrices),
        }
    }
}

/// Max-min ratio for a fixed-direction scheme. ZF uses the closed-form
/// allocation, the others the conic one.
pub fn maximize_ratio_fixed(
    scheme: FixedScheme,
    scenario: &SystemScenario,
    channels: &ChannelSet,
    eh: &dyn HarvestCurve,
) -> Result<MaxMinResult> {
    check_channels(scenario, channels)?;
    let dirs = scheme.directions(channels, &scenario.sar_matrices)?;
    bisect_max_min(scenario, channels, eh, BisectionOptions::default(), |tg| {
        let alloc = match scheme {
            FixedScheme::Zf => solve_p7(&dirs, scenario, &tg.sinr, &tg.rf)?,
            _ => solve_p6(&dirs, scenario, &tg.sinr, &tg.rf)?,
        };
        Ok(alloc.to_solution(&dirs, scheme.label()))
    })
}
