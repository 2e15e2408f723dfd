//! Solver-agnostic description of the convex programs used by the schemes:
//! linear objective; linear, second-order-cone and Hermitian PSD constraints.
//!
//! Hermitian matrix variables are stored by their `n^2` real coordinates and
//! PSD constraints are passed to the backend through the real embedding
//! `[[Re H, -Im H], [Im H, Re H]]`, which is PSD iff `H` is. The backend is
//! Clarabel; nothing outside this module depends on it.

use std::collections::BTreeMap;
use std::fmt;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use crate::linalg::{real_matrix_min_eigenvalue, CMatrix, C64};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const RELAXED_TOLERANCE: f64 = 1e-6;

/// Sparse real affine function of the flat variable vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl Affine {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(idx: usize) -> Self {
        Self { terms: vec![(idx, 1.0)], constant: 0.0 }
    }

    pub fn term(idx: usize, coeff: f64) -> Self {
        Self { terms: vec![(idx, coeff)], constant: 0.0 }
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    pub fn add_term(&mut self, idx: usize, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((idx, coeff));
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn add_scaled(&mut self, other: &Affine, s: f64) {
        if s == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(i, c)| (i, c * s)));
        self.constant += other.constant * s;
    }

    pub fn plus(mut self, other: &Affine) -> Self {
        self.add_scaled(other, 1.0);
        self
    }

    pub fn minus(mut self, other: &Affine) -> Self {
        self.add_scaled(other, -1.0);
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.1 *= s);
        self.constant *= s;
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Merge duplicate indices and drop zeros.
    pub fn compact(&self) -> Self {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for &(i, c) in &self.terms {
            *map.entry(i).or_insert(0.0) += c;
        }
        Self {
            terms: map.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            constant: self.constant,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    fn max_abs(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.1.abs())
            .fold(self.constant.abs(), f64::max)
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }
}

/// Complex-valued affine expression `re + i im`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComplexAffine {
    pub re: Affine,
    pub im: Affine,
}

impl ComplexAffine {
    pub fn real(re: Affine) -> Self {
        Self { re, im: Affine::zero() }
    }

    pub fn constant(z: C64) -> Self {
        Self { re: Affine::constant(z.re), im: Affine::constant(z.im) }
    }

    pub fn conj(&self) -> Self {
        Self { re: self.re.clone(), im: self.im.clone().scaled(-1.0) }
    }

    /// `self += z * other`.
    pub fn add_mul(&mut self, other: &ComplexAffine, z: C64) {
        self.re.add_scaled(&other.re, z.re);
        self.re.add_scaled(&other.im, -z.im);
        self.im.add_scaled(&other.im, z.re);
        self.im.add_scaled(&other.re, z.im);
    }

    pub fn times(&self, z: C64) -> Self {
        let mut out = Self::default();
        out.add_mul(self, z);
        out
    }

    pub fn plus(&self, other: &ComplexAffine) -> Self {
        Self {
            re: self.re.clone().plus(&other.re),
            im: self.im.clone().plus(&other.im),
        }
    }
}

/// Handle to a Hermitian `n x n` matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatVar {
    pub n: usize,
    offset: usize,
}

impl MatVar {
    fn diag(&self, i: usize) -> usize {
        self.offset + i
    }

    /// Index of the pair `(i, j)`, `i < j`, in row-major order of the strict
    /// upper triangle.
    fn pair(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    fn re(&self, i: usize, j: usize) -> usize {
        self.offset + self.n + 2 * self.pair(i, j)
    }

    fn im(&self, i: usize, j: usize) -> usize {
        self.offset + self.n + 2 * self.pair(i, j) + 1
    }

    pub fn entry(&self, i: usize, j: usize) -> ComplexAffine {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => ComplexAffine::real(Affine::var(self.diag(i))),
            Less => ComplexAffine {
                re: Affine::var(self.re(i, j)),
                im: Affine::var(self.im(i, j)),
            },
            Greater => ComplexAffine {
                re: Affine::var(self.re(j, i)),
                im: Affine::term(self.im(j, i), -1.0),
            },
        }
    }

    pub fn expr(&self) -> HermExpr {
        HermExpr::from_fn(self.n, |i, j| self.entry(i, j))
    }

    pub fn trace(&self) -> Affine {
        let mut a = Affine::zero();
        for i in 0..self.n {
            a.add_term(self.diag(i), 1.0);
        }
        a
    }

    /// `trace(A W)` for Hermitian data `A`.
    pub fn trace_with(&self, a: &CMatrix) -> Affine {
        self.expr().trace_with(a)
    }

    /// Read the variable back from a primal point.
    pub fn value(&self, x: &[f64]) -> CMatrix {
        let mut m = CMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            m[(i, i)] = C64::new(x[self.diag(i)], 0.0);
            for j in i + 1..self.n {
                let z = C64::new(x[self.re(i, j)], x[self.im(i, j)]);
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }
}

/// Affine Hermitian matrix expression (all `n^2` entries stored).
#[derive(Debug, Clone, PartialEq)]
pub struct HermExpr {
    pub n: usize,
    entries: Vec<ComplexAffine>,
}

impl HermExpr {
    pub fn zeros(n: usize) -> Self {
        Self { n, entries: vec![ComplexAffine::default(); n * n] }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> ComplexAffine) -> Self {
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(f(i, j));
            }
        }
        Self { n, entries }
    }

    pub fn constant(m: &CMatrix) -> Self {
        Self::from_fn(m.nrows(), |i, j| ComplexAffine::constant(m[(i, j)]))
    }

    pub fn get(&self, i: usize, j: usize) -> &ComplexAffine {
        &self.entries[i * self.n + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut ComplexAffine {
        &mut self.entries[i * self.n + j]
    }

    /// `self += s * other` for real `s`.
    pub fn add_scaled(&mut self, other: &HermExpr, s: f64) {
        assert_eq!(self.n, other.n);
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            a.re.add_scaled(&b.re, s);
            a.im.add_scaled(&b.im, s);
        }
    }

    /// `self += s * I` where `s` is a real affine scalar.
    pub fn add_identity_times(&mut self, s: &Affine) {
        for i in 0..self.n {
            self.get_mut(i, i).re.add_scaled(s, 1.0);
        }
    }

    /// `H v` as a vector of complex affine expressions.
    pub fn mul_vec(&self, v: &[C64]) -> Vec<ComplexAffine> {
        (0..self.n)
            .map(|i| {
                let mut acc = ComplexAffine::default();
                for (j, &vj) in v.iter().enumerate() {
                    acc.add_mul(self.get(i, j), vj);
                }
                acc
            })
            .collect()
    }

    /// `Re(v† H v)`.
    pub fn quad_form(&self, v: &[C64]) -> Affine {
        let hv = self.mul_vec(v);
        let mut acc = ComplexAffine::default();
        for (i, e) in hv.iter().enumerate() {
            acc.add_mul(e, v[i].conj());
        }
        acc.re
    }

    /// `trace(A H)` for Hermitian data `A`; the imaginary part vanishes.
    pub fn trace_with(&self, a: &CMatrix) -> Affine {
        let mut acc = Affine::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                let z = a[(i, j)];
                let h = self.get(j, i);
                acc.add_scaled(&h.re, z.re);
                acc.add_scaled(&h.im, -z.im);
            }
        }
        acc
    }

    /// Entries whose Euclidean norm equals the Frobenius norm of `H`.
    pub fn frobenius_terms(&self) -> Vec<Affine> {
        let s2 = std::f64::consts::SQRT_2;
        let mut out = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            out.push(self.get(i, i).re.clone());
            for j in i + 1..self.n {
                out.push(self.get(i, j).re.clone().scaled(s2));
                out.push(self.get(i, j).im.clone().scaled(s2));
            }
        }
        out
    }

    /// Assemble `[[corner, row], [row†, block]]` where `row = column†`.
    pub fn bordered(corner: &Affine, column: &[ComplexAffine], block: &HermExpr) -> HermExpr {
        let n = block.n + 1;
        HermExpr::from_fn(n, |i, j| match (i, j) {
            (0, 0) => ComplexAffine::real(corner.clone()),
            (0, j) => column[j - 1].conj(),
            (i, 0) => column[i - 1].clone(),
            (i, j) => block.get(i - 1, j - 1).clone(),
        })
    }

    pub fn eval(&self, x: &[f64]) -> CMatrix {
        CMatrix::from_fn(self.n, self.n, |i, j| {
            let e = self.get(i, j);
            C64::new(e.re.eval(x), e.im.eval(x))
        })
    }

    /// Real embedding entries (row, col) of the `2n x 2n` symmetric matrix.
    fn embedded(&self, r: usize, c: usize) -> Affine {
        let n = self.n;
        let (bi, i) = (r / n, r % n);
        let (bj, j) = (c / n, c % n);
        let e = self.get(i, j);
        match (bi, bj) {
            (0, 0) | (1, 1) => e.re.clone(),
            (0, 1) => e.im.clone().scaled(-1.0),
            _ => e.im.clone(),
        }
    }
}

/// `[[Re H, -Im H], [Im H, Re H]]`.
pub fn hermitian_to_real_embedding(h: &CMatrix) -> DMatrix<f64> {
    let n = h.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = h[(r % n, c % n)];
        match (r / n, c / n) {
            (0, 0) | (1, 1) => z.re,
            (0, 1) => -z.im,
            _ => z.im,
        }
    })
}

/// Inverse of [`hermitian_to_real_embedding`], averaging the redundant blocks
/// and symmetrizing.
pub fn real_embedding_to_hermitian(m: &DMatrix<f64>) -> CMatrix {
    let n = m.nrows() / 2;
    let raw = CMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (m[(i, j)] + m[(n + i, n + j)]);
        let im = 0.5 * (m[(n + i, j)] - m[(i, n + j)]);
        C64::new(re, im)
    });
    crate::linalg::symmetrize(&raw)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `expr == 0`
    Zero(Affine),
    /// `expr >= 0`
    Nonneg(Affine),
    /// `items[0] >= ||items[1..]||`
    Soc(Vec<Affine>),
    /// Hermitian expression is PSD.
    Psd(HermExpr),
}

#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    num_vars: usize,
    names: Vec<(usize, String)>,
    objective: Affine,
    constraints: Vec<Constraint>,
    objective_magnitude: Option<f64>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// New scalar variable with optional bounds.
    pub fn scalar(&mut self, name: &str, lower: Option<f64>, upper: Option<f64>) -> Affine {
        let idx = self.num_vars;
        self.num_vars += 1;
        self.names.push((idx, name.to_string()));
        let v = Affine::var(idx);
        if let Some(lo) = lower {
            self.constraints.push(Constraint::Nonneg(v.clone().offset(-lo)));
        }
        if let Some(hi) = upper {
            self.constraints.push(Constraint::Nonneg(v.clone().scaled(-1.0).offset(hi)));
        }
        v
    }

    pub fn nonneg(&mut self, name: &str) -> Affine {
        self.scalar(name, Some(0.0), None)
    }

    /// New Hermitian `n x n` variable (unconstrained).
    pub fn hermitian(&mut self, name: &str, n: usize) -> MatVar {
        let v = MatVar { n, offset: self.num_vars };
        self.names.push((self.num_vars, name.to_string()));
        self.num_vars += n * n;
        v
    }

    /// New Hermitian variable constrained to be PSD.
    pub fn hermitian_psd(&mut self, name: &str, n: usize) -> MatVar {
        let v = self.hermitian(name, n);
        self.constraints.push(Constraint::Psd(v.expr()));
        v
    }

    pub fn minimize(&mut self, objective: Affine) {
        self.objective = objective;
    }

    pub fn objective(&self) -> &Affine {
        &self.objective
    }

    /// Rough size of the optimal objective value. The backend's duality-gap
    /// test is absolute for objectives below one, so small optima are solved
    /// with the objective rescaled by this amount.
    pub fn set_objective_magnitude(&mut self, magnitude: f64) {
        if magnitude.is_finite() && magnitude > 0.0 {
            self.objective_magnitude = Some(magnitude);
        }
    }

    pub fn add_ge_zero(&mut self, e: Affine) {
        self.constraints.push(Constraint::Nonneg(e));
    }

    /// `lhs >= rhs`.
    pub fn add_ge(&mut self, lhs: Affine, rhs: &Affine) {
        self.constraints.push(Constraint::Nonneg(lhs.minus(rhs)));
    }

    /// `lhs <= rhs`.
    pub fn add_le(&mut self, lhs: &Affine, rhs: Affine) {
        self.constraints.push(Constraint::Nonneg(rhs.minus(lhs)));
    }

    pub fn add_eq(&mut self, e: Affine) {
        self.constraints.push(Constraint::Zero(e));
    }

    /// `||rest|| <= head`.
    pub fn add_soc(&mut self, head: Affine, rest: Vec<Affine>) {
        let mut items = Vec::with_capacity(rest.len() + 1);
        items.push(head);
        items.extend(rest);
        self.constraints.push(Constraint::Soc(items));
    }

    /// `z^2 <= x y` with `x, y >= 0`, encoded as `||[2z; x - y]|| <= x + y`.
    pub fn add_rotated_cone(&mut self, x: &Affine, y: &Affine, z: &Affine) {
        self.add_soc(
            x.clone().plus(y),
            vec![z.clone().scaled(2.0), x.clone().minus(y)],
        );
    }

    /// Hyperbolic constraint `x y >= 1`, `x, y >= 0`.
    pub fn add_hyperbolic(&mut self, x: &Affine, y: &Affine) {
        self.add_rotated_cone(x, y, &Affine::constant(1.0));
    }

    pub fn add_psd(&mut self, h: HermExpr) {
        self.constraints.push(Constraint::Psd(h));
    }

    fn check_well_formed(&self) -> Result<(), String> {
        let check = |a: &Affine| match a.max_index() {
            Some(i) if i >= self.num_vars => Err(format!("reference to undeclared variable {i}")),
            _ => Ok(()),
        };
        check(&self.objective)?;
        for c in &self.constraints {
            match c {
                Constraint::Zero(a) | Constraint::Nonneg(a) => check(a)?,
                Constraint::Soc(items) => {
                    if items.len() < 2 {
                        return Err("second-order cone needs at least two entries".into());
                    }
                    items.iter().try_for_each(check)?
                }
                Constraint::Psd(h) => {
                    for e in &h.entries {
                        check(&e.re)?;
                        check(&e.im)?;
                    }
                    for i in 0..h.n {
                        for j in 0..h.n {
                            let (a, b) = (h.get(i, j), h.get(j, i));
                            if a.re.compact() != b.re.compact() || a.im.compact() != b.im.clone().scaled(-1.0).compact() {
                                return Err(format!("PSD expression is not Hermitian at ({i},{j})"));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint at `x`, each constraint normalized
    /// by its largest coefficient.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for c in &self.constraints {
            let v = match c {
                Constraint::Zero(a) => a.eval(x).abs() / a.max_abs().max(1e-300),
                Constraint::Nonneg(a) => (-a.eval(x)).max(0.0) / a.max_abs().max(1e-300),
                Constraint::Soc(items) => {
                    let scale = items.iter().map(Affine::max_abs).fold(1e-300, f64::max);
                    let head = items[0].eval(x);
                    let tail = items[1..].iter().map(|a| a.eval(x).powi(2)).sum::<f64>().sqrt();
                    (tail - head).max(0.0) / scale
                }
                Constraint::Psd(h) => {
                    let scale = h.entries.iter().map(|e| e.re.max_abs().max(e.im.max_abs())).fold(1e-300, f64::max);
                    let m = hermitian_to_real_embedding(&h.eval(x));
                    (-real_matrix_min_eigenvalue(&m)).max(0.0) / scale
                }
            };
            worst = worst.max(v);
        }
        worst
    }
}

impl fmt::Display for ConicProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name_of = |i: usize| {
            self.names
                .iter()
                .rev()
                .find(|(start, _)| *start <= i)
                .map(|(start, n)| if *start == i { n.clone() } else { format!("{n}[{}]", i - start) })
                .unwrap_or_else(|| format!("x{i}"))
        };
        let show = |a: &Affine| {
            let a = a.compact();
            let mut s: Vec<String> = a.terms.iter().map(|&(i, c)| format!("{c:+e}*{}", name_of(i))).collect();
            if a.constant != 0.0 || s.is_empty() {
                s.push(format!("{:+e}", a.constant));
            }
            s.join(" ")
        };
        writeln!(f, "minimize {}", show(&self.objective))?;
        for (k, c) in self.constraints.iter().enumerate() {
            match c {
                Constraint::Zero(a) => writeln!(f, "c{k}: {} == 0", show(a))?,
                Constraint::Nonneg(a) => writeln!(f, "c{k}: {} >= 0", show(a))?,
                Constraint::Soc(items) => {
                    let rest: Vec<String> = items[1..].iter().map(&show).collect();
                    writeln!(f, "c{k}: ||[{}]|| <= {}", rest.join("; "), show(&items[0]))?
                }
                Constraint::Psd(h) => writeln!(f, "c{k}: psd({0}x{0} Hermitian expression)", h.n)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Inaccurate,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Primal point (best iterate when not optimal).
    pub x: Vec<f64>,
    pub objective: f64,
    /// Normalized maximum constraint violation at `x`.
    pub residual: f64,
    pub iterations: u32,
    pub tolerance: f64,
    /// Backend status text, for diagnostics.
    pub detail: String,
}

impl SolveReport {
    pub fn value(&self, a: &Affine) -> f64 {
        a.eval(&self.x)
    }

    pub fn matrix(&self, m: &MatVar) -> CMatrix {
        m.value(&self.x)
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solve at `tolerance`. When the optimum turns out much smaller than the
/// objective scaling assumed, solve again with the scaling corrected.
pub fn solve(problem: &ConicProblem, tolerance: f64) -> Result<SolveReport, String> {
    let scale = problem.objective_magnitude.map_or(1.0, |m| 1.0 / m);
    let mut best: Option<SolveReport> = None;
    for variant in 0..TUNINGS {
        let mut report = solve_scaled(problem, tolerance, scale, variant)?;
        let magnitude = report.objective.abs();
        if report.status == SolveStatus::Optimal && magnitude > 0.0 && magnitude * scale < 0.1 {
            let second = solve_scaled(problem, tolerance, 1.0 / magnitude, variant)?;
            if second.status == SolveStatus::Optimal {
                report = second;
            }
        }
        if report.status != SolveStatus::Inaccurate {
            return Ok(report);
        }
        if best.as_ref().is_none_or(|b| report.residual < b.residual) {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one tuning"))
}

/// Number of backend setting variants tried before giving up on an
/// inaccurate solve.
const TUNINGS: usize = 3;

fn solve_scaled(problem: &ConicProblem, tolerance: f64, objective_scale: f64, variant: usize) -> Result<SolveReport, String> {
    problem.check_well_formed()?;
    let n = problem.num_vars;

    // Build rows grouped by cone type, each constraint normalized.
    let mut rows_a: Vec<Affine> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut push_group = |rows: Vec<Affine>, cone: SupportedConeT<f64>, rows_a: &mut Vec<Affine>| {
        rows_a.extend(rows);
        cones.push(cone);
    };

    let normalize = |rows: Vec<Affine>| -> Vec<Affine> {
        let scale = rows.iter().map(|a| a.compact().max_abs()).fold(0.0, f64::max);
        if scale > 0.0 {
            rows.into_iter().map(|a| a.scaled(1.0 / scale)).collect()
        } else {
            rows
        }
    };

    let zeros: Vec<Affine> = problem
        .constraints
        .iter()
        .filter_map(|c| if let Constraint::Zero(a) = c { Some(a.clone()) } else { None })
        .flat_map(|a| normalize(vec![a]))
        .collect();
    if !zeros.is_empty() {
        let k = zeros.len();
        push_group(zeros, SupportedConeT::ZeroConeT(k), &mut rows_a);
    }
    let nonneg: Vec<Affine> = problem
        .constraints
        .iter()
        .filter_map(|c| if let Constraint::Nonneg(a) = c { Some(a.clone()) } else { None })
        .flat_map(|a| normalize(vec![a]))
        .collect();
    if !nonneg.is_empty() {
        let k = nonneg.len();
        push_group(nonneg, SupportedConeT::NonnegativeConeT(k), &mut rows_a);
    }
    for c in &problem.constraints {
        match c {
            Constraint::Soc(items) => {
                let k = items.len();
                push_group(normalize(items.clone()), SupportedConeT::SecondOrderConeT(k), &mut rows_a);
            }
            Constraint::Psd(h) => {
                let dim = 2 * h.n;
                let s2 = std::f64::consts::SQRT_2;
                let mut rows = Vec::with_capacity(dim * (dim + 1) / 2);
                for col in 0..dim {
                    for row in 0..=col {
                        let e = h.embedded(row, col);
                        rows.push(if row == col { e } else { e.scaled(s2) });
                    }
                }
                push_group(normalize(rows), SupportedConeT::PSDTriangleConeT(dim), &mut rows_a);
            }
            _ => {}
        }
    }

    // s = b - A x with s = expr(x) means A = -coeffs, b = constant.
    let m = rows_a.len();
    let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
    let mut b = Vec::with_capacity(m);
    for (r, a) in rows_a.iter().enumerate() {
        let a = a.compact();
        for &(j, c) in &a.terms {
            ii.push(r);
            jj.push(j);
            vv.push(-c);
        }
        b.push(a.constant);
    }
    let a_mat = CscMatrix::new_from_triplets(m, n, ii, jj, vv);
    let p_mat = CscMatrix::<f64>::zeros((n, n));
    let obj = problem.objective.compact();
    let mut q = vec![0.0; n];
    for &(j, c) in &obj.terms {
        q[j] += c * objective_scale;
    }

    let mut builder = DefaultSettingsBuilder::default();
    builder
        .verbose(false)
        .tol_gap_abs(tolerance)
        .tol_gap_rel(tolerance)
        .tol_feas(tolerance)
        .max_iter(200);
    match variant {
        0 => {}
        1 => {
            builder.iterative_refinement_reltol(1e-16).iterative_refinement_abstol(1e-16);
        }
        _ => {
            builder.max_step_fraction(0.999).static_regularization_proportional(1e-20);
        }
    }
    let settings = builder
        .build()
        .map_err(|e| format!("solver settings: {e:?}"))?;
    let mut solver = DefaultSolver::new(&p_mat, &q, &a_mat, &b, &cones, settings)
        .map_err(|e| format!("solver setup: {e:?}"))?;
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::Inaccurate,
    };
    let x = sol.x.clone();
    let residual = if x.iter().all(|v| v.is_finite()) {
        problem.max_violation(&x)
    } else {
        f64::INFINITY
    };
    Ok(SolveReport {
        status,
        objective: obj.eval(&x),
        x,
        residual,
        iterations: sol.iterations,
        tolerance,
        detail: format!("{:?}", sol.status),
    })
}

/// Solve at the default tolerance; on an inaccurate result retry once at the
/// relaxed tolerance. An inaccurate point whose own residual is within the
/// relaxed tolerance is accepted as optimal.
pub fn solve_with_retry(problem: &ConicProblem) -> Result<SolveReport, String> {
    let first = solve(problem, DEFAULT_TOLERANCE)?;
    if first.status != SolveStatus::Inaccurate {
        return Ok(first);
    }
    let mut second = solve(problem, RELAXED_TOLERANCE)?;
    if second.status == SolveStatus::Inaccurate && second.residual <= RELAXED_TOLERANCE {
        second.status = SolveStatus::Optimal;
    }
    Ok(second)
}
