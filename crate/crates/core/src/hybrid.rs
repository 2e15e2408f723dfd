//! Hybrid beamforming `w_k = sqrt(x_k) w_k^ZF + sqrt(y_k) w_k^MRT`.
//!
//! The combining weights come from a second-order cone relaxation in which
//! the cross term `sqrt(x_k y_k)` is replaced by `s_k` with `s_k^2 <= x_k y_k`.
//! When the relaxation is tight the beamformers are built directly, otherwise
//! the combined vectors are used as fixed directions and the power
//! allocation is re-solved.

use nalgebra::DMatrix;

use crate::conic::{solve_with_retry, Affine, ConicProblem, SolveStatus};
use crate::eh::HarvestCurve;
use crate::error::{Error, Result};
use crate::fixedbf::{mrt_directions, solve_p6, zf_directions, FixedDirections};
use crate::linalg::{inner, quad_form, CMatrix, CVector, C64};
use crate::metrics::BeamformingSolution;
use crate::model::{ChannelSet, SystemScenario};
use crate::optimal::{add_split_vars, bisect_max_min, check_channels, split_from_m, split_hints, BisectionOptions, MaxMinResult};

/// Relative relaxation gap below which the cone solution is used as is.
pub const RELAXATION_GAP_TOL: f64 = 1e-6;

/// Gain tables of the ZF and MRT directions.
#[derive(Debug, Clone)]
pub struct HybridGains {
    pub zf: FixedDirections,
    pub mrt: FixedDirections,
    /// `q_k = |h_k^H w_k^ZF|`.
    pub q: Vec<f64>,
    /// `Q[(k, j)] = |h_k^H w_j^MRT|`.
    pub big_q: DMatrix<f64>,
    /// `r_k = |h_k^H w_k^ZF h_k^H w_k^MRT|`.
    pub r: Vec<f64>,
    /// `e_k = ||w_k^MRT||^2` (one for unit directions).
    pub e: Vec<f64>,
    /// `f_k = Re(w_k^ZF^H w_k^MRT)`.
    pub f: Vec<f64>,
    /// `A[(k, l)] = w_k^ZF^H A_l w_k^ZF`.
    pub a: DMatrix<f64>,
    /// `B[(k, l)] = w_k^MRT^H A_l w_k^MRT`.
    pub b: DMatrix<f64>,
    /// `C[(k, l)] = Re(w_k^ZF^H A_l w_k^MRT)`.
    pub c: DMatrix<f64>,
}

impl HybridGains {
    pub fn num_users(&self) -> usize {
        self.q.len()
    }

    /// Combined direction of user `k` (not normalized).
    pub fn combine(&self, k: usize, x: f64, y: f64) -> CVector {
        let zf = &self.zf.directions[k];
        let mrt = &self.mrt.directions[k];
        zf * C64::new(x.max(0.0).sqrt(), 0.0) + mrt * C64::new(y.max(0.0).sqrt(), 0.0)
    }
}

pub fn precompute_hybrid_gains(channels: &ChannelSet, sar_matrices: &[CMatrix]) -> Result<HybridGains> {
    let zf = zf_directions(channels, sar_matrices)?;
    let mrt = mrt_directions(channels, sar_matrices)?;
    let kk = channels.num_users();
    let nl = sar_matrices.len();
    let q: Vec<f64> = (0..kk).map(|k| inner(channels.h(k), &zf.directions[k]).norm()).collect();
    let big_q = DMatrix::from_fn(kk, kk, |k, j| inner(channels.h(k), &mrt.directions[j]).norm());
    let r = (0..kk)
        .map(|k| (inner(channels.h(k), &zf.directions[k]) * inner(channels.h(k), &mrt.directions[k])).norm())
        .collect();
    let e = mrt.directions.iter().map(crate::linalg::norm_sq).collect();
    let f = (0..kk).map(|k| inner(&zf.directions[k], &mrt.directions[k]).re).collect();
    let a = DMatrix::from_fn(kk, nl, |k, l| quad_form(&sar_matrices[l], &zf.directions[k]));
    let b = DMatrix::from_fn(kk, nl, |k, l| quad_form(&sar_matrices[l], &mrt.directions[k]));
    let c = DMatrix::from_fn(kk, nl, |k, l| inner(&zf.directions[k], &(&sar_matrices[l] * &mrt.directions[k])).re);
    Ok(HybridGains { zf, mrt, q, big_q, r, e, f, a, b, c })
}

/// Which combining weights are free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restriction {
    None,
    /// `y = 0`: ZF only.
    ZfOnly,
    /// `x = 0`: MRT only.
    MrtOnly,
}

#[derive(Debug, Clone)]
pub struct HybridCoefficients {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<f64>,
    pub splits: Vec<f64>,
    /// Relaxed power `sum_k x_k + y_k e_k + 2 s_k f_k`.
    pub objective: f64,
    /// `|s_k^2 - x_k y_k|` per user.
    pub gaps: Vec<f64>,
}

impl HybridCoefficients {
    /// Whether `s_k = sqrt(x_k y_k)` holds for every user.
    pub fn is_tight(&self) -> bool {
        self.gaps
            .iter()
            .zip(self.x.iter().zip(&self.y))
            .all(|(g, (x, y))| *g <= RELAXATION_GAP_TOL * (x * y).max(1.0))
    }
}

/// The cone relaxation. With unit ZF directions the ZF power weight is one.
pub fn solve_p9(scenario: &SystemScenario, gains: &HybridGains, sinr: &[f64], rf: &[f64]) -> Result<HybridCoefficients> {
    solve_p9_restricted(scenario, gains, sinr, rf, Restriction::None)
}

pub fn solve_p9_restricted(
    scenario: &SystemScenario,
    gains: &HybridGains,
    sinr: &[f64],
    rf: &[f64],
    restriction: Restriction,
) -> Result<HybridCoefficients> {
    let kk = scenario.num_users;
    if gains.num_users() != kk || sinr.len() != kk || rf.len() != kk {
        return Err(Error::Domain("gains/targets do not match the user count".into()));
    }
    if gains.a.ncols() != scenario.num_sar() {
        return Err(Error::Domain("SAR gains do not match the SAR constraints".into()));
    }
    if sinr.iter().chain(rf).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain("targets must be positive and finite".into()));
    }
    let (n0, nc) = (scenario.noise_antenna, scenario.noise_circuit);
    let pu = (0..kk)
        .map(|k| {
            let g = gains.q[k].powi(2).max(gains.big_q[(k, k)].powi(2)).max(1e-300);
            (sinr[k] * (n0 + nc) / g).max((rf[k] - n0).max(0.0) / g)
        })
        .sum::<f64>()
        .max(1e-300);

    let mut p = ConicProblem::new();
    let zero = Affine::zero();
    let x: Vec<Affine> = (0..kk)
        .map(|k| if restriction == Restriction::MrtOnly { zero.clone() } else { p.nonneg(&format!("x_{k}")) })
        .collect();
    let y: Vec<Affine> = (0..kk)
        .map(|k| if restriction == Restriction::ZfOnly { zero.clone() } else { p.nonneg(&format!("y_{k}")) })
        .collect();
    let s: Vec<Affine> = (0..kk)
        .map(|k| {
            if restriction != Restriction::None {
                return zero.clone();
            }
            let sk = p.nonneg(&format!("s_{k}"));
            p.add_rotated_cone(&x[k], &y[k], &sk);
            sk
        })
        .collect();
    let hints = split_hints(scenario, sinr, rf);
    let splits: Vec<_> = (0..kk).map(|k| add_split_vars(&mut p, k, hints[k], true)).collect();

    for k in 0..kk {
        // useful signal x q^2 + y Q_kk^2 + 2 s r, in units of pu
        let mut signal = Affine::zero();
        signal.add_scaled(&x[k], gains.q[k].powi(2) * pu);
        signal.add_scaled(&s[k], 2.0 * gains.r[k] * pu);
        let mut interference = Affine::zero();
        for (j, yj) in y.iter().enumerate() {
            if j != k {
                interference.add_scaled(yj, gains.big_q[(k, j)].powi(2) * pu);
            }
        }
        let own_mrt = y[k].clone().scaled(gains.big_q[(k, k)].powi(2) * pu);

        let mut row = signal.clone().plus(&own_mrt).scaled(1.0 / sinr[k]).minus(&interference);
        row.add_scaled(&splits[k].m, -nc);
        p.add_ge_zero(row.offset(-n0));

        let mut row = signal.plus(&own_mrt).plus(&interference).offset(n0);
        row.add_scaled(&splits[k].n, -rf[k]);
        p.add_ge_zero(row);
    }
    for (l, &limit) in scenario.sar_limits.iter().enumerate() {
        let mut exposure = Affine::zero();
        for k in 0..kk {
            exposure.add_scaled(&x[k], gains.a[(k, l)] * pu);
            exposure.add_scaled(&y[k], gains.b[(k, l)] * pu);
            exposure.add_scaled(&s[k], 2.0 * gains.c[(k, l)] * pu);
        }
        p.add_le(&exposure, Affine::constant(limit));
    }
    let mut objective = Affine::zero();
    for k in 0..kk {
        objective.add_scaled(&x[k], 1.0);
        objective.add_scaled(&y[k], gains.e[k]);
        objective.add_scaled(&s[k], 2.0 * gains.f[k]);
    }
    p.minimize(objective);

    let report = solve_with_retry(&p).map_err(Error::Solver)?;
    match report.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Infeasible),
        st => return Err(Error::Solver(format!("hybrid relaxation ended with {st:?}"))),
    }
    let xs: Vec<f64> = x.iter().map(|a| report.value(a).max(0.0) * pu).collect();
    let ys: Vec<f64> = y.iter().map(|a| report.value(a).max(0.0) * pu).collect();
    let ss: Vec<f64> = s.iter().map(|a| report.value(a).max(0.0) * pu).collect();
    let gaps = (0..kk).map(|k| (ss[k] * ss[k] - xs[k] * ys[k]).abs()).collect();
    Ok(HybridCoefficients {
        objective: report.objective * pu,
        splits: splits.iter().map(|sv| split_from_m(report.value(&sv.m))).collect(),
        x: xs,
        y: ys,
        s: ss,
        gaps,
    })
}

/// A hybrid design and how it was obtained.
#[derive(Debug, Clone)]
pub struct HybridOutcome {
    pub solution: BeamformingSolution,
    pub coefficients: HybridCoefficients,
    /// True when built directly from a tight relaxation.
    pub direct: bool,
}

/// Solve the relaxation and build the beamformers, falling back to a fixed
/// direction power allocation when the relaxation is loose.
pub fn hybrid_solution(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    gains: &HybridGains,
    sinr: &[f64],
    rf: &[f64],
) -> Result<HybridOutcome> {
    let coeffs = solve_p9(scenario, gains, sinr, rf)?;
    if coeffs.is_tight() {
        let beams = (0..scenario.num_users).map(|k| gains.combine(k, coeffs.x[k], coeffs.y[k])).collect();
        let solution = BeamformingSolution::new(beams, coeffs.splits.clone(), "hybrid");
        return Ok(HybridOutcome { solution, coefficients: coeffs, direct: true });
    }
    let solution = fallback(scenario, channels, gains, &coeffs, sinr, rf)?;
    Ok(HybridOutcome { solution, coefficients: coeffs, direct: false })
}

/// Use the combined vectors as fixed directions and re-solve the powers.
pub fn fallback(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    gains: &HybridGains,
    coeffs: &HybridCoefficients,
    sinr: &[f64],
    rf: &[f64],
) -> Result<BeamformingSolution> {
    let directions = (0..scenario.num_users)
        .map(|k| {
            let v = gains.combine(k, coeffs.x[k], coeffs.y[k]);
            if crate::linalg::norm_sq(&v) > 0.0 {
                v
            } else {
                gains.mrt.directions[k].clone()
            }
        })
        .collect();
    let dirs = FixedDirections::new(directions, channels, &scenario.sar_matrices)?;
    let alloc = solve_p6(&dirs, scenario, sinr, rf)?;
    Ok(alloc.to_solution(&dirs, "hybrid"))
}

/// Max-min ratio with the hybrid design as the feasibility engine.
pub fn maximize_ratio_hybrid(scenario: &SystemScenario, channels: &ChannelSet, eh: &dyn HarvestCurve) -> Result<MaxMinResult> {
    check_channels(scenario, channels)?;
    let gains = precompute_hybrid_gains(channels, &scenario.sar_matrices)?;
    bisect_max_min(scenario, channels, eh, BisectionOptions::default(), |tg| {
        hybrid_solution(scenario, channels, &gains, &tg.sinr, &tg.rf).map(|o| o.solution)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eh::EhModel;
    use crate::fixedbf::solve_p7;
    use crate::linalg::c;
    use crate::metrics::{check_feasibility_at_ratio, evaluate};
    use crate::model::{generate_channels, ChannelModel};
    use crate::optimal::probe_targets;

    fn defaults(seed: u64) -> (SystemScenario, ChannelSet) {
        let s = SystemScenario::default_for(4, 4).unwrap();
        let ch = generate_channels(&s, &ChannelModel::default(), seed).unwrap();
        (s, ch)
    }

    #[test]
    fn gain_table_examples() {
        let e = |i: usize| CVector::from_fn(3, |r, _| if r == i { c(1.0, 0.0) } else { c(0.0, 0.0) });
        let ch = ChannelSet::from_vectors(vec![e(0) * c(2.0, 0.0), e(1) * c(0.0, 0.5)]).unwrap();
        let g = precompute_hybrid_gains(&ch, &[CMatrix::identity(3, 3)]).unwrap();
        for k in 0..2 {
            assert!((g.f[k] - 1.0).abs() < 1e-12);
            assert!((g.e[k] - 1.0).abs() < 1e-12);
            assert!((g.a[(k, 0)] - 1.0).abs() < 1e-12);
            assert!((g.r[k] - g.q[k] * g.big_q[(k, k)]).abs() < 1e-12);
        }
        assert!((g.q[0] - 2.0).abs() < 1e-12);
        assert!(g.big_q[(0, 1)].abs() < 1e-12);

        let (s, ch) = defaults(1);
        let g = precompute_hybrid_gains(&ch, &s.sar_matrices).unwrap();
        for k in 0..4 {
            assert!(g.f[k] >= -1.0 - 1e-12 && g.f[k] <= 1.0 + 1e-12);
            // the two inner products are aligned, so the gain formula is exact
            assert!((g.r[k] - g.q[k] * g.big_q[(k, k)]).abs() < 1e-12 * g.r[k].max(1e-300));
            let w = g.combine(k, 0.3, 0.7);
            let direct = inner(ch.h(k), &w).norm_sqr();
            let formula = 0.3 * g.q[k].powi(2) + 0.7 * g.big_q[(k, k)].powi(2) + 2.0 * (0.21f64).sqrt() * g.r[k];
            assert!((direct - formula).abs() < 1e-12 * direct);
            let sar = quad_form(&s.sar_matrices[0], &w);
            let formula = 0.3 * g.a[(k, 0)] + 0.7 * g.b[(k, 0)] + 2.0 * (0.21f64).sqrt() * g.c[(k, 0)];
            assert!((sar - formula).abs() < 1e-12 * sar);
        }
    }

    #[test]
    fn restricted_problems_match_fixed_designs() {
        let eh = EhModel::default();
        let (s, ch) = defaults(2);
        let s = s.without_sar();
        let tg = probe_targets(&s, &eh, 0.5).unwrap();
        let g = precompute_hybrid_gains(&ch, &[]).unwrap();
        let zf_only = solve_p9_restricted(&s, &g, &tg.sinr, &tg.rf, Restriction::ZfOnly).unwrap();
        let p7 = solve_p7(&g.zf, &s, &tg.sinr, &tg.rf).unwrap();
        assert!((zf_only.objective - p7.objective).abs() < 1e-6 * p7.objective);
        let mrt_only = solve_p9_restricted(&s, &g, &tg.sinr, &tg.rf, Restriction::MrtOnly);
        let p6 = solve_p6(&g.mrt, &s, &tg.sinr, &tg.rf);
        match (mrt_only, p6) {
            (Ok(a), Ok(b)) => assert!((a.objective - b.objective).abs() < 1e-6 * b.objective),
            (Err(a), Err(b)) => assert!(a.is_infeasibility() && b.is_infeasibility()),
            (a, b) => panic!("{a:?} vs {b:?}"),
        }
        let full = solve_p9(&s, &g, &tg.sinr, &tg.rf).unwrap();
        assert!(full.objective <= p7.objective * (1.0 + 1e-6));
    }

    #[test]
    fn hybrid_solution_is_feasible() {
        let eh = EhModel::default();
        for seed in 3..6 {
            let (s, ch) = defaults(seed);
            let tg = probe_targets(&s, &eh, 0.3).unwrap();
            let g = precompute_hybrid_gains(&ch, &s.sar_matrices).unwrap();
            let Ok(out) = hybrid_solution(&s, &ch, &g, &tg.sinr, &tg.rf) else { continue };
            let scen = s.with_power_budget(1e6).unwrap();
            let rep = check_feasibility_at_ratio(&out.solution, &scen, &ch, &eh, 0.3, 1e-5);
            assert!(rep.all_satisfied(), "seed {seed}: {:?}", rep.violations().collect::<Vec<_>>());
        }
    }

    #[test]
    fn loose_relaxation_falls_back() {
        let eh = EhModel::default();
        let (s, ch) = defaults(6);
        let tg = probe_targets(&s, &eh, 0.3).unwrap();
        let g = precompute_hybrid_gains(&ch, &s.sar_matrices).unwrap();
        let mut coeffs = solve_p9(&s, &g, &tg.sinr, &tg.rf).unwrap();
        // synthesize a loose relaxation
        coeffs.s.iter_mut().for_each(|v| *v *= 0.5);
        coeffs.gaps = (0..4).map(|k| (coeffs.s[k].powi(2) - coeffs.x[k] * coeffs.y[k]).abs()).collect();
        if coeffs.x.iter().zip(&coeffs.y).any(|(x, y)| x * y > 0.0) {
            assert!(!coeffs.is_tight());
        }
        let sol = fallback(&s, &ch, &g, &coeffs, &tg.sinr, &tg.rf).unwrap();
        let r = evaluate(&sol, &s, &ch, &eh);
        for k in 0..4 {
            assert!(r.sinr[k] >= tg.sinr[k] * (1.0 - 1e-5));
        }
        for (l, &limit) in s.sar_limits.iter().enumerate() {
            assert!(r.sar[l] <= limit * (1.0 + 1e-6));
        }
    }

    #[test]
    fn single_user_hybrid_is_mrt() {
        let s = SystemScenario::default_for(4, 1).unwrap();
        let ch = generate_channels(&s, &ChannelModel::default(), 7).unwrap();
        let eh = EhModel::default();
        let tg = probe_targets(&s, &eh, 0.5).unwrap();
        let g = precompute_hybrid_gains(&ch, &s.sar_matrices).unwrap();
        let Ok(out) = hybrid_solution(&s, &ch, &g, &tg.sinr, &tg.rf) else { return };
        let w = &out.solution.beamformers[0];
        let cos = inner(w, ch.h(0)).norm() / (crate::linalg::norm_sq(w) * crate::linalg::norm_sq(ch.h(0))).sqrt();
        assert!((cos - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hybrid_beats_fixed_schemes() {
        let eh = EhModel::default();
        let (s, ch) = defaults(9);
        let h = maximize_ratio_hybrid(&s, &ch, &eh);
        let z = crate::fixedbf::maximize_ratio_fixed(crate::fixedbf::FixedScheme::Zf, &s, &ch, &eh);
        if let (Ok(h), Ok(z)) = (h, z) {
            assert!(h.t >= z.t * (1.0 - 2e-3), "{} vs {}", h.t, z.t);
        }
    }
}
