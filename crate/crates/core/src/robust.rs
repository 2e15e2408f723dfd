//! Worst-case design for bounded channel errors `||dh_k||^2 <= sigma_k^2` and
//! SAR-matrix errors `||dA_l||_F <= tau_l`.
//!
//! Channel uncertainty enters through S-procedure LMIs, SAR uncertainty
//! through the exact worst case `trace(A W) + tau ||W||_F`. Solutions that are
//! not rank one are turned into beamformers by Gaussian randomization, with
//! every candidate checked against the exact worst-case margins (a
//! trust-region subproblem per constraint).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conic::{solve, solve_with_retry, Affine, ConicProblem, HermExpr, MatVar, SolveStatus};
use crate::eh::HarvestCurve;
use crate::error::{Error, Result};
use crate::linalg::{frobenius, hermitian_eigen, inner, norm_sq, outer, quad_form, trace_product, CMatrix, CVector, C64};
use crate::metrics::BeamformingSolution;
use crate::model::{ChannelSet, SystemScenario, UncertaintyModel};
use crate::optimal::{
    add_split_vars, bisect_max_min, BisectionOptions, MaxMinResult, check_channels, power_lower_bound, principal_component, rank_ratio, split_from_m, split_hints,
    RANK_ONE_THRESHOLD,
};

const TIGHT_TOLERANCE: f64 = 1e-10;

/// `trace(A W) + tau ||W||_F`: the largest `trace((A + dA) W)` over Hermitian
/// `||dA||_F <= tau`.
pub fn worst_case_sar_margin(w_sum: &CMatrix, a_hat: &CMatrix, tau: f64) -> f64 {
    trace_product(a_hat, w_sum) + tau * frobenius(w_sum)
}

/// The error `dA = tau W / ||W||_F` attaining [`worst_case_sar_margin`].
pub fn worst_case_sar_error(w_sum: &CMatrix, tau: f64) -> CMatrix {
    let f = frobenius(w_sum);
    if f == 0.0 {
        return CMatrix::zeros(w_sum.nrows(), w_sum.ncols());
    }
    w_sum * C64::new(tau / f, 0.0)
}

/// How the SAR uncertainty is accounted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SarRobustForm {
    /// `trace(A W) + tau ||W||_F <= P` (second-order cone).
    Exact,
    /// `(1 + tau / ||A||_F) trace(A W) <= P`.
    LinearSurrogate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustOptions {
    pub sar_form: SarRobustForm,
    pub rank_threshold: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for RobustOptions {
    fn default() -> Self {
        Self { sar_form: SarRobustForm::Exact, rank_threshold: RANK_ONE_THRESHOLD, draws: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct RobustSdpSolution {
    pub matrices: Vec<CMatrix>,
    pub splits: Vec<f64>,
    /// S-procedure multipliers of the SINR and EH constraints.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub m: Vec<f64>,
    pub n: Vec<f64>,
    pub objective: f64,
    pub rank_ratios: Vec<f64>,
}

/// `min ||x - c|| <= r` of `x^H Q x` for Hermitian `Q`, with a minimizer.
///
/// In the eigenbasis of `Q` the minimizer is `x_i = mu c_i / (q_i + mu)` with
/// `mu >= max(0, -q_min)` fixed by the distance constraint; the distance is
/// decreasing in `mu`, so `mu` is found by bisection.
pub fn min_quadratic_over_ball(q: &CMatrix, center: &CVector, radius: f64) -> (f64, CVector) {
    let e = hermitian_eigen(q);
    let n = e.values.len();
    let c: Vec<C64> = (0..n).map(|i| inner(&e.vectors.column(i).into_owned(), center)).collect();
    let vals = &e.values;
    let q_min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let r2 = radius * radius;
    let dist2 = |mu: f64| -> f64 {
        (0..n)
            .map(|i| {
                let d = vals[i] + mu;
                if d <= 0.0 {
                    if c[i].norm_sqr() > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else {
                    c[i].norm_sqr() * (vals[i] / d).powi(2)
                }
            })
            .sum()
    };
    let build = |mu: f64, extra: f64| -> (f64, CVector) {
        let mut x = CVector::zeros(n);
        let mut extra_left = extra;
        for i in 0..n {
            let d = vals[i] + mu;
            let xi = if d > 0.0 {
                c[i] * (mu / d)
            } else if extra_left > 0.0 {
                // hard case: spend the remaining distance along this direction
                let t = extra_left.sqrt();
                extra_left = 0.0;
                C64::new(t, 0.0)
            } else {
                C64::new(0.0, 0.0)
            };
            x += e.vectors.column(i) * xi;
        }
        (quad_form(q, &x), x)
    };

    let mu_lo = (-q_min).max(0.0);
    let base = dist2(mu_lo);
    if base <= r2 {
        if q_min >= 0.0 {
            // an interior point reaches the minimum (null-space component)
            return build(0.0, 0.0);
        }
        return build(mu_lo, r2 - base);
    }
    let mut lo = mu_lo;
    let mut hi = mu_lo + scale.max(1e-300);
    while dist2(hi) > r2 {
        hi = mu_lo + 2.0 * (hi - mu_lo);
        if !hi.is_finite() {
            break;
        }
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dist2(mid) > r2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    build(hi, 0.0)
}

/// Exact worst-case margins of a beamforming solution. Margins are
/// `worst value - requirement`; nonnegative means the constraint holds for
/// every error in the set.
#[derive(Debug, Clone)]
pub struct WorstCaseMargins {
    /// `min |h^H w_k|^2 - gamma sum |h^H w_j|^2 - gamma (N0 + NC / rho)`.
    pub sinr: Vec<f64>,
    /// `min h^H (sum W) h - (lambda / (1 - rho) - N0)`.
    pub eh: Vec<f64>,
    /// `P_l - worst exposure`.
    pub sar: Vec<f64>,
}

impl WorstCaseMargins {
    /// All margins nonnegative up to `tol` relative to the requirement.
    pub fn holds(&self, sinr_need: &[f64], eh_need: &[f64], limits: &[f64], tol: f64) -> bool {
        self.sinr.iter().zip(sinr_need).all(|(m, r)| *m >= -tol * r.abs())
            && self.eh.iter().zip(eh_need).all(|(m, r)| *m >= -tol * r.abs())
            && self.sar.iter().zip(limits).all(|(m, p)| *m >= -tol * p)
    }
}

fn interference_matrix(sol: &BeamformingSolution, k: usize, gamma: f64) -> CMatrix {
    let mut q = outer(&sol.beamformers[k]);
    for (j, w) in sol.beamformers.iter().enumerate() {
        if j != k {
            q -= outer(w) * C64::new(gamma, 0.0);
        }
    }
    q
}

fn total_matrix(sol: &BeamformingSolution) -> CMatrix {
    let n = sol.beamformers[0].len();
    sol.beamformers.iter().fold(CMatrix::zeros(n, n), |acc, w| acc + outer(w))
}

/// Signal-side requirements `gamma (N0 + NC / rho)` and
/// `lambda / (1 - rho) - N0` at the solution's splits.
pub fn requirements(sol: &BeamformingSolution, scenario: &SystemScenario, sinr: &[f64], rf: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (n0, nc) = (scenario.noise_antenna, scenario.noise_circuit);
    let s = sol.splits.iter().zip(sinr).map(|(&rho, &g)| g * (n0 + nc / rho)).collect();
    let e = sol.splits.iter().zip(rf).map(|(&rho, &l)| l / (1.0 - rho) - n0).collect();
    (s, e)
}

pub fn worst_case_margins(
    sol: &BeamformingSolution,
    scenario: &SystemScenario,
    channels: &ChannelSet,
    uncertainty: &UncertaintyModel,
    sinr: &[f64],
    rf: &[f64],
) -> WorstCaseMargins {
    let (sinr_need, eh_need) = requirements(sol, scenario, sinr, rf);
    let total = total_matrix(sol);
    let kk = scenario.num_users;
    let sinr_m = (0..kk)
        .map(|k| {
            let q = interference_matrix(sol, k, sinr[k]);
            min_quadratic_over_ball(&q, channels.h(k), uncertainty.channel_radius(k)).0 - sinr_need[k]
        })
        .collect();
    let eh_m = (0..kk)
        .map(|k| min_quadratic_over_ball(&total, channels.h(k), uncertainty.channel_radius(k)).0 - eh_need[k])
        .collect();
    let sar_m = scenario
        .sar_matrices
        .iter()
        .zip(&scenario.sar_limits)
        .zip(&uncertainty.sar_bounds)
        .map(|((a, &p), &tau)| p - worst_case_sar_margin(&total, a, tau))
        .collect();
    WorstCaseMargins { sinr: sinr_m, eh: eh_m, sar: sar_m }
}

fn check_inputs(scenario: &SystemScenario, channels: &ChannelSet, unc: &UncertaintyModel, sinr: &[f64], rf: &[f64]) -> Result<()> {
    check_channels(scenario, channels)?;
    unc.check_dims(scenario)?;
    let k = scenario.num_users;
    if sinr.len() != k || rf.len() != k {
        return Err(Error::Domain("target vectors do not match the user count".into()));
    }
    if sinr.iter().chain(rf).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain("targets must be positive and finite".into()));
    }
    Ok(())
}

/// Worst-case power minimization over the SDP relaxation.
///
/// A user with zero channel uncertainty gets the nominal scalar constraints:
/// the LMI with `sigma = 0` only reaches them as its multiplier grows without
/// bound.
pub fn solve_p13(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    uncertainty: &UncertaintyModel,
    sinr_targets: &[f64],
    rf_targets: &[f64],
    opts: &RobustOptions,
) -> Result<RobustSdpSolution> {
    check_inputs(scenario, channels, uncertainty, sinr_targets, rf_targets)?;
    let (nt, kk) = (scenario.num_antennas, scenario.num_users);
    let (n0, nc) = (scenario.noise_antenna, scenario.noise_circuit);
    let pu = power_lower_bound(scenario, channels, sinr_targets, rf_targets).max(1e-300);

    let mut p = ConicProblem::new();
    let w: Vec<MatVar> = (0..kk).map(|k| p.hermitian_psd(&format!("W_{k}"), nt)).collect();
    let hints = split_hints(scenario, sinr_targets, rf_targets);
    let splits: Vec<_> = (0..kk).map(|k| add_split_vars(&mut p, k, hints[k], true)).collect();
    let mut total = HermExpr::zeros(nt);
    for wk in &w {
        total.add_scaled(&wk.expr(), 1.0);
    }
    let mut multipliers = Vec::with_capacity(kk);

    for k in 0..kk {
        let h: Vec<C64> = channels.h(k).iter().cloned().collect();
        let sigma2 = uncertainty.channel_bounds[k];
        // Q_k = W_k - gamma sum_{j != k} W_j, in units of pu
        let mut qk = w[k].expr().clone();
        qk.add_scaled(&total, -sinr_targets[k]);
        qk.add_scaled(&w[k].expr(), sinr_targets[k]);

        let mut sinr_rhs = Affine::constant(sinr_targets[k] * n0);
        sinr_rhs.add_scaled(&splits[k].m, sinr_targets[k] * nc);
        let mut eh_rhs = Affine::constant(-n0);
        eh_rhs.add_scaled(&splits[k].n, rf_targets[k]);

        if sigma2 == 0.0 {
            p.add_ge(qk.quad_form(&h).scaled(pu), &sinr_rhs);
            p.add_ge(total.quad_form(&h).scaled(pu), &eh_rhs);
            multipliers.push(None);
            continue;
        }
        let u = p.nonneg(&format!("u_{k}"));
        let v = p.nonneg(&format!("v_{k}"));
        // congruence with diag(1/||h||, I) keeps the corner on the block's scale
        let s = 1.0 / norm_sq(channels.h(k)).sqrt();
        p.add_psd(s_procedure_lmi(&qk, &h, &sinr_rhs, &u, sigma2, pu, s));
        p.add_psd(s_procedure_lmi(&total, &h, &eh_rhs, &v, sigma2, pu, s));
        multipliers.push(Some((u, v)));
    }
    for ((a, &limit), &tau) in scenario.sar_matrices.iter().zip(&scenario.sar_limits).zip(&uncertainty.sar_bounds) {
        let exposure = total.trace_with(a).scaled(pu);
        match opts.sar_form {
            SarRobustForm::LinearSurrogate => {
                let factor = 1.0 + tau / frobenius(a);
                p.add_le(&exposure.scaled(factor), Affine::constant(limit));
            }
            SarRobustForm::Exact if tau == 0.0 => p.add_le(&exposure, Affine::constant(limit)),
            SarRobustForm::Exact => {
                let head = Affine::constant(limit).minus(&exposure);
                let rest = total.frobenius_terms().into_iter().map(|t| t.scaled(tau * pu)).collect();
                p.add_soc(head, rest);
            }
        }
    }
    let mut objective = Affine::zero();
    for wk in &w {
        objective.add_scaled(&wk.trace(), 1.0);
    }
    p.minimize(objective);

    // a tight first pass makes the split auxiliaries tight; fall back when it stalls
    let mut report = solve(&p, TIGHT_TOLERANCE).map_err(Error::Solver)?;
    if report.status == SolveStatus::Inaccurate {
        report = solve_with_retry(&p).map_err(Error::Solver)?;
    }
    match report.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(Error::Infeasible),
        st => return Err(Error::Solver(format!("robust power minimization ended with {st:?}"))),
    }
    let matrices: Vec<CMatrix> = w.iter().map(|wk| report.matrix(wk) * C64::new(pu, 0.0)).collect();
    let m: Vec<f64> = splits.iter().map(|sv| report.value(&sv.m)).collect();
    let n: Vec<f64> = splits.iter().map(|sv| report.value(&sv.n)).collect();
    let (u, v) = multipliers
        .iter()
        .map(|mv| mv.as_ref().map_or((0.0, 0.0), |(u, v)| (report.value(u) * pu, report.value(v) * pu)))
        .unzip();
    Ok(RobustSdpSolution {
        rank_ratios: matrices.iter().map(rank_ratio).collect(),
        splits: m.iter().map(|&mk| split_from_m(mk)).collect(),
        objective: report.objective * pu,
        matrices,
        u,
        v,
        m,
        n,
    })
}

/// `[[h^H X h - rhs - mult sigma^2, (X h)^H], [X h, X + mult I]] >= 0` with
/// `X = pu X~`, `mult = pu mult~`, after congruence by `diag(s, I)`.
fn s_procedure_lmi(x: &HermExpr, h: &[C64], rhs: &Affine, mult: &Affine, sigma2: f64, pu: f64, s: f64) -> HermExpr {
    let mut corner = x.quad_form(h).scaled(pu).minus(rhs);
    corner.add_scaled(mult, -sigma2 * pu);
    let column: Vec<_> = x.mul_vec(h).into_iter().map(|e| e.times(C64::new(pu * s, 0.0))).collect();
    let mut block = x.clone();
    block.add_identity_times(mult);
    let mut scaled_block = HermExpr::zeros(block.n);
    scaled_block.add_scaled(&block, pu);
    HermExpr::bordered(&corner.scaled(s * s), &column, &scaled_block)
}

/// Beamformers from a robust SDP solution: principal eigenvectors when every
/// `W_k` is numerically rank one and they pass the worst-case check,
/// Gaussian randomization otherwise.
pub fn robust_beamformers(
    sdp: &RobustSdpSolution,
    scenario: &SystemScenario,
    channels: &ChannelSet,
    uncertainty: &UncertaintyModel,
    sinr: &[f64],
    rf: &[f64],
    opts: &RobustOptions,
) -> Result<BeamformingSolution> {
    if sdp.rank_ratios.iter().all(|&r| r <= opts.rank_threshold) {
        let sol = BeamformingSolution::new(sdp.matrices.iter().map(principal_component).collect(), sdp.splits.clone(), "robust");
        let margins = worst_case_margins(&sol, scenario, channels, uncertainty, sinr, rf);
        let (sn, en) = requirements(&sol, scenario, sinr, rf);
        if margins.holds(&sn, &en, &scenario.sar_limits, 1e-6) {
            return Ok(sol);
        }
    }
    randomize_rank1(sdp, scenario, channels, uncertainty, sinr, rf, opts)
}

/// Draw `w_k = U_k L_k^{1/2} z_k` with `z_k ~ CN(0, I)`, scale the draw by the
/// smallest common factor meeting the worst-case SINR and EH margins, and
/// keep the least-power candidate that also meets the worst-case SAR limits.
/// The principal eigenvectors are tried first.
pub fn randomize_rank1(
    sdp: &RobustSdpSolution,
    scenario: &SystemScenario,
    channels: &ChannelSet,
    uncertainty: &UncertaintyModel,
    sinr: &[f64],
    rf: &[f64],
    opts: &RobustOptions,
) -> Result<BeamformingSolution> {
    let factors: Vec<CMatrix> = sdp
        .matrices
        .iter()
        .map(|w| {
            let e = hermitian_eigen(w);
            let mut f = e.vectors.clone();
            for (i, &l) in e.values.iter().enumerate() {
                let s = C64::new(l.max(0.0).sqrt(), 0.0);
                f.column_mut(i).iter_mut().for_each(|z| *z *= s);
            }
            f
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let nt = scenario.num_antennas;
    let mut best: Option<(f64, BeamformingSolution)> = None;
    let mut best_gap = f64::INFINITY;

    for draw in 0..=opts.draws {
        let beams: Vec<CVector> = if draw == 0 {
            sdp.matrices.iter().map(principal_component).collect()
        } else {
            factors
                .iter()
                .map(|f| {
                    let z = CVector::from_fn(nt, |_, _| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
                    });
                    f * z
                })
                .collect()
        };
        let cand = BeamformingSolution::new(beams, sdp.splits.clone(), "robust");
        let margins = worst_case_margins(&cand, scenario, channels, uncertainty, sinr, rf);
        let (sn, en) = requirements(&cand, scenario, sinr, rf);
        // margin + need is the worst-case signal-side value, linear in the scale
        let mut alpha: f64 = 0.0;
        let mut ok = true;
        for k in 0..scenario.num_users {
            for (m, need) in [(margins.sinr[k], sn[k]), (margins.eh[k], en[k])] {
                let value = m + need;
                if need <= 0.0 {
                    continue;
                }
                if value <= 0.0 {
                    ok = false;
                    best_gap = best_gap.min(need - value);
                } else {
                    alpha = alpha.max(need / value);
                }
            }
        }
        if !ok || alpha == 0.0 {
            continue;
        }
        let scaled = cand.scaled(alpha.sqrt() * (1.0 + 1e-9));
        let sar_ok = scaled.beamformers.is_empty()
            || worst_case_margins(&scaled, scenario, channels, uncertainty, sinr, rf)
                .sar
                .iter()
                .zip(&scenario.sar_limits)
                .all(|(m, p)| *m >= -1e-9 * p);
        if !sar_ok {
            let worst = worst_case_margins(&scaled, scenario, channels, uncertainty, sinr, rf)
                .sar
                .iter()
                .fold(0.0f64, |a, m| a.max(-m));
            best_gap = best_gap.min(worst);
            continue;
        }
        let power = scaled.transmit_power();
        if best.as_ref().is_none_or(|(p, _)| power < *p) {
            best = Some((power, scaled));
        }
    }
    best.map(|(_, s)| s).ok_or(Error::RandomizationFailed { best_gap })
}

/// Uniform draw on the sphere `||dh|| = radius`.
pub fn sample_channel_error(rng: &mut impl rand::Rng, n: usize, radius: f64) -> CVector {
    let v = CVector::from_fn(n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let norm = norm_sq(&v).sqrt();
    v * C64::new(radius / norm, 0.0)
}

/// Random Hermitian `dA` with `||dA||_F = tau`.
pub fn sample_sar_error(rng: &mut impl rand::Rng, n: usize, tau: f64) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let h = (&g + g.adjoint()) * C64::new(0.5, 0.0);
    let f = frobenius(&h);
    h * C64::new(tau / f, 0.0)
}

/// Robust max power design at fixed targets: solve the relaxation and
/// recover beamformers.
pub fn robust_design(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    uncertainty: &UncertaintyModel,
    sinr: &[f64],
    rf: &[f64],
    opts: &RobustOptions,
) -> Result<(RobustSdpSolution, BeamformingSolution)> {
    let sdp = solve_p13(scenario, channels, uncertainty, sinr, rf, opts)?;
    let sol = robust_beamformers(&sdp, scenario, channels, uncertainty, sinr, rf, opts)?;
    Ok((sdp, sol))
}

/// Max-min ratio whose every probe is a worst-case robust design.
pub fn maximize_ratio_robust(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    uncertainty: &UncertaintyModel,
    eh: &dyn HarvestCurve,
    opts: &RobustOptions,
) -> Result<MaxMinResult> {
    uncertainty.check_dims(scenario)?;
    bisect_max_min(scenario, channels, eh, BisectionOptions::default(), |tg| {
        robust_design(scenario, channels, uncertainty, &tg.sinr, &tg.rf, opts).map(|(_, sol)| sol)
    })
}
