//! Fast solver for one user and (at most) one SAR constraint.
//!
//! At the optimum both the SINR and the EH constraints are tight, which fixes
//! the split `rho` and the required signal power `c = gamma (N0 + NC / rho)`
//! independently of the beamformer. What remains is
//! `min ||w||^2  s.t.  |h^H w|^2 >= c,  w^H A w <= P`.
//! Case I: `w` along `h` already meets the SAR limit. Case II: the SAR
//! constraint binds and `w = a (I + b A)^{-1} h` with `b` the root of a
//! non-increasing scalar function.

use crate::eh::HarvestCurve;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, norm_sq, quad_form, CMatrix, CVector, C64};
use crate::metrics::{clamp_split, BeamformingSolution};
use crate::model::{ChannelSet, SystemScenario};
use crate::optimal::{bisect_max_min, BisectionOptions, MaxMinResult};

/// Largest `b` tried before declaring the SAR limit unreachable.
pub const B_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SingleUserInstance {
    pub h: CVector,
    /// SAR matrix and limit; `None` means no SAR constraint.
    pub sar: Option<(CMatrix, f64)>,
    pub gamma: f64,
    /// EH target at the rectifier input (W).
    pub lambda: f64,
    pub noise_antenna: f64,
    pub noise_circuit: f64,
}

impl SingleUserInstance {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Domain("SINR target must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Domain("EH target must be nonnegative".into()));
        }
        if !(self.noise_antenna > 0.0 && self.noise_circuit >= 0.0) {
            return Err(Error::Domain("noise powers must be positive".into()));
        }
        if norm_sq(&self.h) == 0.0 {
            return Err(Error::DegenerateChannel { user: 0 });
        }
        if let Some((a, p)) = &self.sar {
            crate::model::check_hermitian_psd(a).map_err(Error::Domain)?;
            if a.nrows() != self.h.len() || !(*p > 0.0) {
                return Err(Error::Domain("SAR matrix size or limit invalid".into()));
            }
        }
        Ok(())
    }

    /// Instance for a one-user scenario with at most one SAR constraint.
    pub fn from_scenario(scenario: &SystemScenario, channels: &ChannelSet, gamma: f64, lambda: f64) -> Result<Self> {
        if scenario.num_users != 1 || channels.num_users() != 1 || scenario.num_sar() > 1 {
            return Err(Error::Domain("fast solver needs one user and at most one SAR constraint".into()));
        }
        let inst = Self {
            h: channels.h(0).clone(),
            sar: scenario
                .sar_matrices
                .first()
                .map(|a| (a.clone(), scenario.sar_limits[0])),
            gamma,
            lambda,
            noise_antenna: scenario.noise_antenna,
            noise_circuit: scenario.noise_circuit,
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Split at which SINR and EH are both tight: the positive root of
/// `(g+1) N0 rho^2 - ((g+1) N0 - g NC - lambda) rho - g NC = 0`.
pub fn case1_rho(gamma: f64, lambda: f64, n0: f64, nc: f64) -> f64 {
    let a = (gamma + 1.0) * n0;
    let b = a - gamma * nc - lambda;
    let delta = (b * b + 4.0 * gamma * (1.0 + gamma) * n0 * nc).sqrt();
    // pick the cancellation-free form of the same root
    if b >= 0.0 {
        (b + delta) / (2.0 * a)
    } else {
        2.0 * gamma * nc / (delta - b)
    }
}

/// Required `|h^H w|^2` at split `rho`.
pub fn required_signal(gamma: f64, n0: f64, nc: f64, rho: f64) -> f64 {
    gamma * (n0 + nc / rho)
}

/// `w = sqrt(c) h / ||h||^2`, so that `|h^H w|^2 = c` with `c` the required
/// signal power.
pub fn case1_beamformer(h: &CVector, gamma: f64, n0: f64, nc: f64, rho: f64) -> CVector {
    let c = required_signal(gamma, n0, nc, rho);
    h.map(|z| z * (c.sqrt() / norm_sq(h)))
}

/// `f(b)` with the eigendecomposition `A = U D U^H` cached.
#[derive(Debug, Clone)]
pub struct SarFunction {
    /// Eigenvalues of `A` (clamped at zero).
    pub d: Vec<f64>,
    /// `|(U^H h)_i|^2`.
    pub weights: Vec<f64>,
    pub rotated: CVector,
    pub basis: CMatrix,
    pub required: f64,
    pub limit: f64,
}

impl SarFunction {
    pub fn new(h: &CVector, a: &CMatrix, required: f64, limit: f64) -> Self {
        let e = hermitian_eigen(a);
        let rotated = e.vectors.adjoint() * h;
        Self::from_eigen(e.values.iter().map(|&v| v.max(0.0)).collect(), rotated, e.vectors, required, limit)
    }

    /// From `D` and `h~ = U^H h` directly.
    pub fn from_eigen(d: Vec<f64>, rotated: CVector, basis: CMatrix, required: f64, limit: f64) -> Self {
        let weights = rotated.iter().map(|z| z.norm_sqr()).collect();
        Self { d, weights, rotated, basis, required, limit }
    }

    /// `c h~^H (I + bD)^{-1} D (I + bD)^{-1} h~ / (h~^H (I + bD)^{-1} h~)^2 - P`.
    pub fn eval(&self, b: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (&d, &w) in self.d.iter().zip(&self.weights) {
            let s = 1.0 / (1.0 + b * d);
            num += w * d * s * s;
            den += w * s;
        }
        self.required * num / (den * den) - self.limit
    }

    /// `w = a U (I + bD)^{-1} h~` with `a` making `|h^H w|^2 = c`.
    pub fn beamformer(&self, b: f64) -> (CVector, f64) {
        let scaled = CVector::from_iterator(
            self.d.len(),
            self.rotated.iter().zip(&self.d).map(|(z, &d)| z / (1.0 + b * d)),
        );
        let den: f64 = self.weights.iter().zip(&self.d).map(|(w, &d)| w / (1.0 + b * d)).sum();
        let a = self.required.sqrt() / den;
        (&self.basis * scaled.map(|z| z * C64::new(a, 0.0)), a)
    }
}

/// Result of the SAR-binding case.
#[derive(Debug, Clone, PartialEq)]
pub struct Case2Solution {
    pub w: CVector,
    pub a: f64,
    pub b: f64,
}

/// Bisection for the root of `f`. Requires `f(0) >= 0`.
pub fn case2_solve(f: &SarFunction) -> Result<Case2Solution> {
    let f0 = f.eval(0.0);
    if f0 < 0.0 {
        return Err(Error::Domain("SAR constraint inactive along h; the closed form applies".into()));
    }
    let finish = |b: f64| {
        let (w, a) = f.beamformer(b);
        Ok(Case2Solution { w, a, b })
    };
    if f0 == 0.0 {
        return finish(0.0);
    }
    let tol = 1e-9 * f.limit;
    let mut hi = 1.0;
    let mut f_hi = f.eval(hi);
    while f_hi > 0.0 {
        if hi >= B_CAP {
            return Err(Error::SarInfeasible);
        }
        hi *= 2.0;
        f_hi = f.eval(hi);
    }
    let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    if f_hi.abs() <= tol {
        return finish(hi);
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let fm = f.eval(mid);
        if fm.abs() <= tol || mid <= lo || mid >= hi {
            return finish(mid);
        }
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    finish(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionCase {
    /// SAR inactive, `w` along `h`.
    Unconstrained,
    /// SAR binding.
    SarBinding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastSolution {
    pub solution: BeamformingSolution,
    pub case: SolutionCase,
    pub rho: f64,
    /// Multiplier of the SAR term (0 when unconstrained).
    pub b: f64,
}

pub fn solve_single_user(inst: &SingleUserInstance) -> Result<FastSolution> {
    inst.validate()?;
    let (n0, nc) = (inst.noise_antenna, inst.noise_circuit);
    let rho = clamp_split(case1_rho(inst.gamma, inst.lambda, n0, nc));
    let w = case1_beamformer(&inst.h, inst.gamma, n0, nc, rho);
    let make = |w: CVector, case, b| FastSolution {
        solution: BeamformingSolution::new(vec![w], vec![rho], "fast_su"),
        case,
        rho,
        b,
    };
    let Some((a, limit)) = &inst.sar else {
        return Ok(make(w, SolutionCase::Unconstrained, 0.0));
    };
    if quad_form(a, &w) < *limit {
        return Ok(make(w, SolutionCase::Unconstrained, 0.0));
    }
    let f = SarFunction::new(&inst.h, a, required_signal(inst.gamma, n0, nc, rho), *limit);
    let c2 = case2_solve(&f)?;
    Ok(make(c2.w, SolutionCase::SarBinding, c2.b))
}

/// Max-min ratio for a one-user scenario with the fast solver as the
/// feasibility engine.
pub fn maximize_ratio_single_user(
    scenario: &SystemScenario,
    channels: &ChannelSet,
    eh: &dyn HarvestCurve,
    opts: BisectionOptions,
) -> Result<MaxMinResult> {
    SingleUserInstance::from_scenario(scenario, channels, scenario.sinr_targets[0], 0.0)?;
    bisect_max_min(scenario, channels, eh, opts, |tg| {
        let inst = SingleUserInstance::from_scenario(scenario, channels, tg.sinr[0], tg.rf[0])?;
        solve_single_user(&inst).map(|r| r.solution)
    })
}
