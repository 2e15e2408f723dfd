//! Evaluation of candidate solutions: SINR, harvested power, SAR exposure,
//! transmit power, feasibility and the achieved max-min ratio `t`.

use crate::eh::HarvestCurve;
use crate::linalg::{inner, norm_sq, quad_form, CMatrix, CVector};
use crate::model::{ChannelSet, SystemScenario};

pub const RHO_MIN: f64 = 1e-6;
pub const RHO_MAX: f64 = 1.0 - 1e-6;

/// Default relative feasibility tolerance and absolute floor (W).
pub const FEAS_REL_TOL: f64 = 1e-6;
pub const FEAS_ABS_FLOOR: f64 = 1e-12;

/// Per-user beamformers (amplitude in sqrt(W)) and power-splitting ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingSolution {
    pub beamformers: Vec<CVector>,
    pub splits: Vec<f64>,
    pub producer: String,
}

impl BeamformingSolution {
    pub fn new(beamformers: Vec<CVector>, splits: Vec<f64>, producer: impl Into<String>) -> Self {
        assert_eq!(beamformers.len(), splits.len(), "one split per beamformer");
        Self {
            beamformers,
            splits: splits.into_iter().map(clamp_split).collect(),
            producer: producer.into(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.beamformers.len()
    }

    pub fn transmit_power(&self) -> f64 {
        self.beamformers.iter().map(norm_sq).sum()
    }

    /// Scale every beamformer amplitude by `alpha` (powers by `alpha^2`).
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            beamformers: self.beamformers.iter().map(|w| w.map(|z| z * alpha)).collect(),
            splits: self.splits.clone(),
            producer: self.producer.clone(),
        }
    }

    pub fn with_producer(mut self, producer: impl Into<String>) -> Self {
        self.producer = producer.into();
        self
    }
}

pub fn clamp_split(rho: f64) -> f64 {
    if rho.is_nan() {
        0.5
    } else {
        rho.clamp(RHO_MIN, RHO_MAX)
    }
}

/// `sum_j |h_k† w_j|^2 + N0`.
pub fn received_power(k: usize, sol: &BeamformingSolution, channels: &ChannelSet, noise_antenna: f64) -> f64 {
    let h = channels.h(k);
    sol.beamformers.iter().map(|w| inner(h, w).norm_sqr()).sum::<f64>() + noise_antenna
}

fn interference(k: usize, sol: &BeamformingSolution, h: &CVector) -> f64 {
    sol.beamformers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, w)| inner(h, w).norm_sqr())
        .sum()
}

/// `rho |h_k† w_k|^2 / (rho (N0 + interference) + NC)`.
pub fn sinr(k: usize, sol: &BeamformingSolution, channels: &ChannelSet, noise_antenna: f64, noise_circuit: f64) -> f64 {
    sinr_at(k, sol, channels, noise_antenna, noise_circuit, sol.splits[k])
}

fn sinr_at(k: usize, sol: &BeamformingSolution, channels: &ChannelSet, n0: f64, nc: f64, rho: f64) -> f64 {
    let h = channels.h(k);
    let signal = inner(h, &sol.beamformers[k]).norm_sqr();
    rho * signal / (rho * (n0 + interference(k, sol, h)) + nc)
}

/// `F((1 - rho_k) P^r_k)`.
pub fn harvested_power(
    k: usize,
    sol: &BeamformingSolution,
    channels: &ChannelSet,
    noise_antenna: f64,
    eh: &dyn HarvestCurve,
) -> f64 {
    let rf = (1.0 - sol.splits[k]) * received_power(k, sol, channels, noise_antenna);
    eh.forward(rf.max(0.0)).expect("nonnegative input")
}

/// `sum_k w_k† A_l w_k`.
pub fn sar_exposure_with(a: &CMatrix, sol: &BeamformingSolution) -> f64 {
    sol.beamformers.iter().map(|w| quad_form(a, w)).sum()
}

pub fn sar_exposure(l: usize, sol: &BeamformingSolution, sar_matrices: &[CMatrix]) -> f64 {
    sar_exposure_with(&sar_matrices[l], sol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Sinr,
    Harvest,
    Split,
    Sar,
    PowerBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCheck {
    pub kind: ConstraintKind,
    pub index: usize,
    pub value: f64,
    pub limit: f64,
    /// Positive when satisfied with margin (value - limit for lower bounds,
    /// limit - value for upper bounds).
    pub slack: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub checks: Vec<ConstraintCheck>,
}

impl FeasibilityReport {
    pub fn all_satisfied(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn kind_satisfied(&self, kind: ConstraintKind) -> bool {
        self.checks.iter().filter(|c| c.kind == kind).all(|c| c.satisfied)
    }

    pub fn violations(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.satisfied)
    }
}

fn lower_check(kind: ConstraintKind, index: usize, value: f64, limit: f64, tol: f64) -> ConstraintCheck {
    let slack = value - limit;
    ConstraintCheck {
        kind,
        index,
        value,
        limit,
        slack,
        satisfied: value >= limit - tol * limit.abs() - FEAS_ABS_FLOOR,
    }
}

fn upper_check(kind: ConstraintKind, index: usize, value: f64, limit: f64, tol: f64) -> ConstraintCheck {
    let slack = limit - value;
    ConstraintCheck {
        kind,
        index,
        value,
        limit,
        slack,
        satisfied: value <= limit + tol * limit.abs() + FEAS_ABS_FLOOR,
    }
}

/// Check every constraint of the power-minimization problem at the scenario's
/// own targets with relative tolerance `tol`.
pub fn check_feasibility(
    sol: &BeamformingSolution,
    scenario: &SystemScenario,
    channels: &ChannelSet,
    eh: &dyn HarvestCurve,
    tol: f64,
) -> FeasibilityReport {
    check_feasibility_at_ratio(sol, scenario, channels, eh, 1.0, tol)
}

/// Same as [`check_feasibility`] with targets scaled by `t`.
pub fn check_feasibility_at_ratio(
    sol: &BeamformingSolution,
    scenario: &SystemScenario,
    channels: &ChannelSet,
    eh: &dyn HarvestCurve,
    t: f64,
    tol: f64,
) -> FeasibilityReport {
    let (n0, nc) = (scenario.noise_antenna, scenario.noise_circuit);
    let mut checks = Vec::new();
    for k in 0..scenario.num_users {
        checks.push(lower_check(
            ConstraintKind::Sinr,
            k,
            sinr(k, sol, channels, n0, nc),
            t * scenario.sinr_targets[k],
            tol,
        ));
        checks.push(lower_check(
            ConstraintKind::Harvest,
            k,
            harvested_power(k, sol, channels, n0, eh),
            t * scenario.eh_targets[k],
            tol,
        ));
        let rho = sol.splits[k];
        checks.push(ConstraintCheck {
            kind: ConstraintKind::Split,
            index: k,
            value: rho,
            limit: 1.0,
            slack: rho.min(1.0 - rho),
            satisfied: (0.0..=1.0).contains(&rho),
        });
    }
    for (l, (a, &limit)) in scenario.sar_matrices.iter().zip(&scenario.sar_limits).enumerate() {
        checks.push(upper_check(ConstraintKind::Sar, l, sar_exposure_with(a, sol), limit, tol));
    }
    checks.push(upper_check(
        ConstraintKind::PowerBudget,
        0,
        sol.transmit_power(),
        scenario.power_budget,
        tol,
    ));
    FeasibilityReport { checks }
}

/// Achieved SINR/EH values for one solution.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceReport {
    pub sinr: Vec<f64>,
    pub harvested: Vec<f64>,
    pub sar: Vec<f64>,
    pub transmit_power: f64,
    /// `min_k min(SINR_k / target_k, EH_k / target_k)`.
    pub ratio: f64,
}

impl PerformanceReport {
    /// Column order: `transmit_power_w, ratio, sinr_0.., harvested_w_0..,
    /// sar_0..`.
    pub fn csv_header(num_users: usize, num_sar: usize) -> String {
        let mut cols = vec!["transmit_power_w".to_string(), "ratio".to_string()];
        cols.extend((0..num_users).map(|k| format!("sinr_{k}")));
        cols.extend((0..num_users).map(|k| format!("harvested_w_{k}")));
        cols.extend((0..num_sar).map(|l| format!("sar_{l}")));
        cols.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![format!("{:.12e}", self.transmit_power), format!("{:.12e}", self.ratio)];
        cols.extend(self.sinr.iter().map(|v| format!("{v:.12e}")));
        cols.extend(self.harvested.iter().map(|v| format!("{v:.12e}")));
        cols.extend(self.sar.iter().map(|v| format!("{v:.12e}")));
        cols.join(",")
    }
}

pub fn evaluate(
    sol: &BeamformingSolution,
    scenario: &SystemScenario,
    channels: &ChannelSet,
    eh: &dyn HarvestCurve,
) -> PerformanceReport {
    let (n0, nc) = (scenario.noise_antenna, scenario.noise_circuit);
    let sinr_v: Vec<f64> = (0..scenario.num_users).map(|k| sinr(k, sol, channels, n0, nc)).collect();
    let harvested: Vec<f64> = (0..scenario.num_users)
        .map(|k| harvested_power(k, sol, channels, n0, eh))
        .collect();
    let ratio = (0..scenario.num_users)
        .map(|k| (sinr_v[k] / scenario.sinr_targets[k]).min(harvested[k] / scenario.eh_targets[k]))
        .fold(f64::INFINITY, f64::min);
    PerformanceReport {
        sar: scenario.sar_matrices.iter().map(|a| sar_exposure_with(a, sol)).collect(),
        transmit_power: sol.transmit_power(),
        sinr: sinr_v,
        harvested,
        ratio,
    }
}

/// Re-choose each `rho_k` for fixed beamformers to maximize user `k`'s
/// `min(SINR/target, EH/target)`. SINR increases and EH decreases in `rho`, so
/// the objective is unimodal; golden-section search over `(0, 1)`.
pub fn optimize_splits(
    sol: &BeamformingSolution,
    scenario: &SystemScenario,
    channels: &ChannelSet,
    eh: &dyn HarvestCurve,
) -> BeamformingSolution {
    let (n0, nc) = (scenario.noise_antenna, scenario.noise_circuit);
    let mut out = sol.clone();
    for k in 0..scenario.num_users {
        let pr = received_power(k, sol, channels, n0);
        let score = |rho: f64| {
            let s = sinr_at(k, sol, channels, n0, nc, rho) / scenario.sinr_targets[k];
            let e = eh.forward(((1.0 - rho) * pr).max(0.0)).expect("nonnegative") / scenario.eh_targets[k];
            s.min(e)
        };
        out.splits[k] = clamp_split(golden_section_max(score, RHO_MIN, RHO_MAX, 1e-13));
    }
    out
}

pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 > f2 {
        x1
    } else {
        x2
    }
}

/// Achieved ratio `t`, optionally after per-user split re-optimization.
pub fn achieved_ratio(
    sol: &BeamformingSolution,
    scenario: &SystemScenario,
    channels: &ChannelSet,
    eh: &dyn HarvestCurve,
    reoptimize_splits: bool,
) -> f64 {
    if reoptimize_splits {
        evaluate(&optimize_splits(sol, scenario, channels, eh), scenario, channels, eh).ratio
    } else {
        evaluate(sol, scenario, channels, eh).ratio
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eh::EhModel;
    use crate::linalg::{c, C64};
    use crate::model::default_sar_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CVector {
        CVector::from_fn(n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale)
    }

    fn random_instance(seed: u64, k: usize, n: usize) -> (ChannelSet, BeamformingSolution) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = ChannelSet::from_vectors((0..k).map(|_| random_vec(&mut rng, n, 0.1)).collect()).unwrap();
        let w = (0..k).map(|_| random_vec(&mut rng, n, 0.5)).collect();
        let rho = (0..k).map(|_| rng.gen_range(0.05..0.95)).collect();
        (ch, BeamformingSolution::new(w, rho, "test"))
    }

    #[test]
    fn received_power_examples() {
        let (ch, sol) = random_instance(1, 3, 4);
        let zero = BeamformingSolution::new(vec![CVector::zeros(4); 3], vec![0.5; 3], "zero");
        assert_eq!(received_power(0, &zero, &ch, 1e-10), 1e-10);

        // brute-force re-summation
        for k in 0..3 {
            let mut acc = 1e-10;
            for j in 0..3 {
                let mut z = C64::new(0.0, 0.0);
                for m in 0..4 {
                    z += ch.h(k)[m].conj() * sol.beamformers[j][m];
                }
                acc += z.re * z.re + z.im * z.im;
            }
            assert!((received_power(k, &sol, &ch, 1e-10) - acc).abs() < 1e-14);
        }

        let h = ch.h(0).clone();
        let p: f64 = 0.7;
        let w = &h * C64::new(p.sqrt() / norm_sq(&h).sqrt(), 0.0);
        let single = ChannelSet::from_vectors(vec![h.clone()]).unwrap();
        let s = BeamformingSolution::new(vec![w], vec![0.5], "mrt");
        assert!((received_power(0, &s, &single, 1e-10) - (p * norm_sq(&h) + 1e-10)).abs() < 1e-14);
    }

    #[test]
    fn sinr_examples() {
        let (ch, sol) = random_instance(2, 1, 4);
        let (n0, nc) = (1e-3, 2e-3);
        let g = inner(ch.h(0), &sol.beamformers[0]).norm_sqr();
        let rho = sol.splits[0];
        let expected = g / (n0 + nc / rho);
        assert!((sinr(0, &sol, &ch, n0, nc) - expected).abs() < 1e-12 * expected);

        let (ch, mut sol) = random_instance(3, 3, 4);
        let a = sinr(1, &sol, &ch, n0, 0.0);
        sol.splits[1] = 0.1;
        let b = sinr(1, &sol, &ch, n0, 0.0);
        assert!((a - b).abs() < 1e-12 * a);
    }

    #[test]
    fn harvested_examples() {
        let eh = EhModel::default();
        let (ch, mut sol) = random_instance(4, 2, 4);
        sol.splits[0] = RHO_MAX;
        assert!(harvested_power(0, &sol, &ch, 1e-10, &eh) < 1e-6 * eh.ceiling());

        // rho = 0.5, received power 2c -> F(c)
        let h = CVector::from_vec(vec![c(1.0, 0.0)]);
        let n0 = 1e-3;
        let pw = 2.0 * eh.c - n0;
        let s = BeamformingSolution::new(vec![CVector::from_vec(vec![c(pw.sqrt(), 0.0)])], vec![0.5], "x");
        let ch1 = ChannelSet::from_vectors(vec![h]).unwrap();
        let got = harvested_power(0, &s, &ch1, n0, &eh);
        assert!((got - eh.forward(eh.c).unwrap()).abs() < 1e-12);

        // zero beams, tiny noise: small-signal slope
        let n0 = 1e-10;
        let z = BeamformingSolution::new(vec![CVector::zeros(1)], vec![0.3], "z");
        let got = harvested_power(0, &z, &ch1, n0, &eh);
        let approx = eh.small_signal_slope() * 0.7 * n0;
        assert!((got - approx).abs() < 1e-8 * approx);
    }

    #[test]
    fn sar_examples() {
        let a = default_sar_matrix();
        let zero = BeamformingSolution::new(vec![CVector::zeros(4)], vec![0.5], "z");
        assert_eq!(sar_exposure(0, &zero, std::slice::from_ref(&a)), 0.0);
        let mut e1 = CVector::zeros(4);
        e1[0] = c(1.0, 0.0);
        let s = BeamformingSolution::new(vec![e1], vec![0.5], "e1");
        assert!((sar_exposure(0, &s, std::slice::from_ref(&a)) - 1.6).abs() < 1e-15);
        let (_, sol) = random_instance(5, 3, 4);
        let id = CMatrix::identity(4, 4);
        assert!((sar_exposure_with(&id, &sol) - sol.transmit_power()).abs() < 1e-12);
    }

    #[test]
    fn sar_phase_and_scale_properties() {
        let a = default_sar_matrix();
        let (_, sol) = random_instance(6, 3, 4);
        let base = sar_exposure_with(&a, &sol);
        let mut rotated = sol.clone();
        for (k, w) in rotated.beamformers.iter_mut().enumerate() {
            *w *= C64::from_polar(1.0, 0.7 * k as f64 + 0.3);
        }
        assert!((sar_exposure_with(&a, &rotated) - base).abs() < 1e-12);
        let scaled = sol.scaled(1.7);
        assert!((sar_exposure_with(&a, &scaled) - 1.7f64.powi(2) * base).abs() < 1e-12);
        assert!((scaled.transmit_power() - 1.7f64.powi(2) * sol.transmit_power()).abs() < 1e-12);
    }

    #[test]
    fn sinr_and_eh_monotone_in_split() {
        let eh = EhModel::default();
        let (ch, sol) = random_instance(7, 3, 4);
        let mut prev = (0.0, f64::INFINITY);
        for i in 1..100 {
            let mut s = sol.clone();
            s.splits[2] = i as f64 / 100.0;
            let g = sinr(2, &s, &ch, 1e-3, 1e-3);
            let e = harvested_power(2, &s, &ch, 1e-3, &eh);
            assert!(g > prev.0 && e < prev.1);
            prev = (g, e);
        }
    }

    #[test]
    fn feasibility_report_flags_violations() {
        let eh = EhModel::default();
        let scenario = SystemScenario::default_for(4, 2).unwrap();
        let (ch, sol) = random_instance(8, 2, 4);
        // huge beams: SINR/EH fine, SAR and budget violated
        let big = sol.scaled(10.0);
        let rep = check_feasibility(&big, &scenario, &ch, &eh, FEAS_REL_TOL);
        assert!(!rep.kind_satisfied(ConstraintKind::Sar));
        assert!(!rep.kind_satisfied(ConstraintKind::PowerBudget));
        assert!(rep.kind_satisfied(ConstraintKind::Split));
        // zero beams meet SAR and budget only
        let zero = BeamformingSolution::new(vec![CVector::zeros(4); 2], vec![0.5; 2], "z");
        let rep = check_feasibility(&zero, &scenario, &ch, &eh, FEAS_REL_TOL);
        assert!(rep.kind_satisfied(ConstraintKind::Sar));
        assert!(!rep.kind_satisfied(ConstraintKind::Sinr));
    }

    #[test]
    fn split_reoptimization_balances() {
        let eh = EhModel::default();
        let mut scenario = SystemScenario::default_for(4, 2).unwrap();
        scenario.noise_antenna = 1e-4;
        scenario.noise_circuit = 1e-3;
        let (ch, sol) = random_instance(9, 2, 4);
        let opt = optimize_splits(&sol, &scenario, &ch, &eh);
        let r = evaluate(&opt, &scenario, &ch, &eh);
        for k in 0..2 {
            let s = r.sinr[k] / scenario.sinr_targets[k];
            let e = r.harvested[k] / scenario.eh_targets[k];
            assert!((s - e).abs() < 1e-8 * s.max(e), "user {k}: {s} vs {e}");
        }
        assert!(r.ratio >= evaluate(&sol, &scenario, &ch, &eh).ratio - 1e-12);
    }

    #[test]
    fn csv_row_shape() {
        let eh = EhModel::default();
        let scenario = SystemScenario::default_for(4, 2).unwrap();
        let (ch, sol) = random_instance(10, 2, 4);
        let rep = evaluate(&sol, &scenario, &ch, &eh);
        let header = PerformanceReport::csv_header(2, 1);
        assert_eq!(header, "transmit_power_w,ratio,sinr_0,sinr_1,harvested_w_0,harvested_w_1,sar_0");
        assert_eq!(rep.to_csv_row().split(',').count(), header.split(',').count());
    }
}
