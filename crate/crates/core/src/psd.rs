//! Small barrier solver for concave maximization over the PSD cone.
//!
//! Maximizes `f(F)` subject to `F ⪰ 0`, affine trace inequalities, diagonal
//! caps and pinned diagonal entries. Each barrier subproblem
//! `f(F) + μ Σ log sⱼ(F) + μ log det F` is ascended along a Newton direction
//! computed in an orthonormal basis of Hermitian (or real symmetric)
//! matrices: the barrier curvature is exact and the objective contributes
//! whatever curvature it reports, so purely gradient-type objectives fall
//! back to a barrier-preconditioned gradient step. Pinned entries are left
//! out of the basis.

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_cholesky, hermitian_defect, hermitize, trace_product, HermitianEigen};
use crate::{CMatrix, C64};

/// Ridge added to starts near the PSD boundary.
pub const RIDGE: f64 = 1e-9;

/// Frobenius-nearest PSD matrix by eigenvalue clipping.
pub fn psd_project(s: &CMatrix) -> Result<CMatrix> {
    let scale = s.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let defect = hermitian_defect(s);
    if defect > 1e-10 * scale {
        return Err(Error::invalid(format!("matrix is not Hermitian (defect {defect:.3e})")));
    }
    Ok(HermitianEigen::new(s).map(|x| x.max(0.0)))
}

/// Smooth concave objective. Evaluation outside its domain returns
/// [`Error::Domain`], which the line search treats as an infeasible step.
pub trait ConeObjective {
    /// Value and Hermitian gradient.
    fn evaluate(&self, f: &CMatrix) -> Result<(f64, CMatrix)>;

    /// Optional curvature as `[(c, A)]` meaning a Hessian of
    /// `−Σ c vec(A) vec(A)ᵀ` with `c ≥ 0`.
    fn curvature(&self, _f: &CMatrix) -> Vec<(f64, CMatrix)> {
        Vec::new()
    }
}

impl<T: Fn(&CMatrix) -> Result<(f64, CMatrix)>> ConeObjective for T {
    fn evaluate(&self, f: &CMatrix) -> Result<(f64, CMatrix)> {
        self(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    AtMost,
    AtLeast,
}

/// `Re Tr(A F) ≤ b` or `≥ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceInequality {
    pub a: CMatrix,
    pub b: f64,
    pub sense: Sense,
}

impl TraceInequality {
    pub fn slack(&self, f: &CMatrix) -> f64 {
        let t = trace_product(&self.a, f);
        match self.sense {
            Sense::AtMost => self.b - t,
            Sense::AtLeast => t - self.b,
        }
    }
}

pub struct ConeProblem<'a> {
    pub dimension: usize,
    pub objective: &'a dyn ConeObjective,
    pub inequalities: Vec<TraceInequality>,
    /// `F_ii ≤ cap` where set.
    pub diag_cap: Vec<Option<f64>>,
    /// `F_ii = value`; must not also be capped.
    pub pinned: Vec<(usize, f64)>,
    /// Restrict F to real symmetric matrices.
    pub real: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings {
    pub max_steps: usize,
    pub mu_initial: f64,
    pub mu_final: f64,
    pub kkt_tolerance: f64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self { max_steps: 2000, mu_initial: 1.0, mu_final: 1e-6, kkt_tolerance: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    IterationCap,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub f_star: CMatrix,
    pub objective_value: f64,
    /// Newton decrement of the last barrier subproblem.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Largest constraint violation at `f_star`, 0 if none.
    pub max_violation: f64,
}

/// Orthonormal basis of the free Hermitian directions under `Re Tr(A B)`.
struct Basis {
    n: usize,
    elements: Vec<Vec<(usize, usize, C64)>>,
}

impl Basis {
    fn new(n: usize, real: bool, pinned: &[(usize, f64)]) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut elements = Vec::new();
        for i in 0..n {
            if !pinned.iter().any(|&(p, _)| p == i) {
                elements.push(vec![(i, i, C64::new(1.0, 0.0))]);
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                elements.push(vec![(i, j, C64::new(h, 0.0)), (j, i, C64::new(h, 0.0))]);
                if !real {
                    elements.push(vec![(i, j, C64::new(0.0, h)), (j, i, C64::new(0.0, -h))]);
                }
            }
        }
        Self { n, elements }
    }

    fn len(&self) -> usize {
        self.elements.len()
    }

    /// Coordinates `Re Tr(A B_b)`.
    fn coords(&self, a: &CMatrix) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.elements.iter().map(|e| e.iter().map(|&(r, c, w)| (a[(c, r)] * w).re).sum::<f64>()),
        )
    }

    fn matrix(&self, d: &DVector<f64>) -> CMatrix {
        let mut m = CMatrix::zeros(self.n, self.n);
        for (e, &x) in self.elements.iter().zip(d.iter()) {
            for &(r, c, w) in e {
                m[(r, c)] += w * x;
            }
        }
        m
    }

    /// `Re Tr(G B_a G B_b)` for Hermitian positive definite `G`.
    fn congruence_gram(&self, g: &CMatrix) -> DMatrix<f64> {
        let p = self.len();
        let mut k = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let mut acc = C64::new(0.0, 0.0);
                for &(r, c, wa) in &self.elements[a] {
                    for &(r2, c2, wb) in &self.elements[b] {
                        acc += wa * wb * g[(c2, r)] * g[(c, r2)];
                    }
                }
                k[(a, b)] = acc.re;
                k[(b, a)] = acc.re;
            }
        }
        k
    }
}

/// Internal row: normalized inequality or diagonal cap.
enum Row {
    Dense { a: CMatrix, b: f64, sense: Sense },
    Cap { index: usize, cap: f64 },
}

impl Row {
    fn slack(&self, f: &CMatrix) -> f64 {
        match self {
            Row::Dense { a, b, sense } => {
                let t = trace_product(a, f);
                match sense {
                    Sense::AtMost => b - t,
                    Sense::AtLeast => t - b,
                }
            }
            Row::Cap { index, cap } => cap - f[(*index, *index)].re,
        }
    }

    /// Gradient of the slack.
    fn slack_gradient(&self, n: usize) -> CMatrix {
        match self {
            Row::Dense { a, sense, .. } => match sense {
                Sense::AtMost => -a,
                Sense::AtLeast => a.clone(),
            },
            Row::Cap { index, .. } => {
                let mut g = CMatrix::zeros(n, n);
                g[(*index, *index)] = C64::new(-1.0, 0.0);
                g
            }
        }
    }
}

fn build_rows(problem: &ConeProblem) -> Vec<Row> {
    let mut rows = Vec::new();
    for ineq in &problem.inequalities {
        let norm = ineq.a.norm().max(f64::MIN_POSITIVE);
        rows.push(Row::Dense { a: &ineq.a / C64::new(norm, 0.0), b: ineq.b / norm, sense: ineq.sense });
    }
    for (index, cap) in problem.diag_cap.iter().enumerate() {
        if let Some(cap) = cap {
            rows.push(Row::Cap { index, cap: *cap });
        }
    }
    rows
}

struct Barrier<'a> {
    objective: &'a dyn ConeObjective,
    rows: &'a [Row],
    /// Slack gradients in basis coordinates.
    row_coords: Vec<DVector<f64>>,
    basis: &'a Basis,
}

struct Point {
    f: CMatrix,
    value: f64,
    objective: f64,
    gradient: DVector<f64>,
    slacks: Vec<f64>,
    inverse: CMatrix,
}

impl<'a> Barrier<'a> {
    fn new(objective: &'a dyn ConeObjective, rows: &'a [Row], basis: &'a Basis) -> Self {
        let row_coords = rows.iter().map(|r| basis.coords(&r.slack_gradient(basis.n))).collect();
        Self { objective, rows, row_coords, basis }
    }

    /// Barrier value and gradient at `f`, `None` outside the strict interior.
    fn evaluate(&self, f: &CMatrix, mu: f64) -> Option<Point> {
        let chol = hermitian_cholesky(f)?;
        let slacks: Vec<f64> = self.rows.iter().map(|r| r.slack(f)).collect();
        if slacks.iter().any(|s| !(*s > 0.0)) {
            return None;
        }
        let (objective, grad) = self.objective.evaluate(f).ok()?;
        if !objective.is_finite() {
            return None;
        }
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum();
        let inverse = hermitize(&chol.inverse());
        let mut gradient = self.basis.coords(&(grad + &inverse * C64::new(mu, 0.0)));
        for (coords, s) in self.row_coords.iter().zip(&slacks) {
            gradient.axpy(mu / s, coords, 1.0);
        }
        let value = objective + mu * (log_det + slacks.iter().map(|s| s.ln()).sum::<f64>());
        if !value.is_finite() {
            return None;
        }
        Some(Point { f: f.clone(), value, objective, gradient, slacks, inverse })
    }

    /// Newton direction (as a matrix) and decrement `gᵀ K⁻¹ g`.
    fn direction(&self, p: &Point, mu: f64) -> (CMatrix, f64) {
        let mut k = self.basis.congruence_gram(&p.inverse) * mu;
        for (coords, s) in self.row_coords.iter().zip(&p.slacks) {
            k.ger(mu / (s * s), coords, coords, 1.0);
        }
        for (c, a) in self.objective.curvature(&p.f) {
            let u = self.basis.coords(&a);
            k.ger(c, &u, &u, 1.0);
        }
        let d = match Cholesky::new(k.clone()) {
            Some(ch) => ch.solve(&p.gradient),
            None => {
                let ridge = 1e-12 * k.diagonal().amax().max(f64::MIN_POSITIVE);
                let shifted = k + DMatrix::identity(self.basis.len(), self.basis.len()) * ridge;
                match Cholesky::new(shifted) {
                    Some(ch) => ch.solve(&p.gradient),
                    None => p.gradient.clone(),
                }
            }
        };
        let decrement = p.gradient.dot(&d).max(0.0);
        (self.basis.matrix(&d), decrement)
    }
}

struct Centering {
    point: Point,
    steps: usize,
    residual: f64,
    centered: bool,
}

/// Ascends the barrier subproblem at fixed `mu`.
fn center(
    barrier: &Barrier,
    start: Point,
    mu: f64,
    tolerance: f64,
    budget: usize,
    mut stop: impl FnMut(&Point) -> bool,
) -> Centering {
    let mut point = start;
    let mut steps = 0;
    let mut residual = f64::INFINITY;
    while steps < budget {
        let (d, decrement) = barrier.direction(&point, mu);
        residual = decrement.sqrt();
        if residual <= tolerance || stop(&point) {
            return Centering { point, steps, residual, centered: true };
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-20 {
            let candidate = hermitize(&(&point.f + &d * C64::new(t, 0.0)));
            if let Some(next) = barrier.evaluate(&candidate, mu) {
                if next.value >= point.value + 1e-4 * t * decrement {
                    accepted = Some(next);
                    break;
                }
            }
            t *= 0.5;
        }
        steps += 1;
        match accepted {
            Some(next) => point = next,
            None => break,
        }
    }
    let centered = residual <= tolerance;
    Centering { point, steps, residual, centered }
}

/// Pulls `init` into the strict interior of the PSD cone, caps and pins.
fn interior_start(problem: &ConeProblem, init: &CMatrix) -> Result<CMatrix> {
    let n = problem.dimension;
    let mut center = CMatrix::identity(n, n);
    for (i, cap) in problem.diag_cap.iter().enumerate() {
        if let Some(c) = cap {
            if *c <= 0.0 {
                return Err(Error::invalid(format!("diagonal cap {c} at {i} leaves no interior")));
            }
            center[(i, i)] = C64::new(0.5 * c.min(2.0), 0.0);
        }
    }
    for &(i, v) in &problem.pinned {
        if v <= 0.0 {
            return Err(Error::invalid(format!("pinned diagonal {v} at {i} must be positive")));
        }
        center[(i, i)] = C64::new(v, 0.0);
    }
    let mut base = psd_project(&hermitize(init))? + CMatrix::identity(n, n) * C64::new(RIDGE, 0.0);
    if problem.real {
        base = base.map(|z| C64::new(z.re, 0.0));
    }
    for &(i, v) in &problem.pinned {
        base[(i, i)] = C64::new(v, 0.0);
    }
    let strict = |f: &CMatrix| {
        hermitian_cholesky(f).is_some()
            && problem.diag_cap.iter().enumerate().all(|(i, c)| c.is_none_or(|c| f[(i, i)].re < c))
    };
    let mut theta = 1e-6;
    while theta <= 1.0 {
        let f = &base * C64::new(1.0 - theta, 0.0) + &center * C64::new(theta, 0.0);
        if strict(&f) {
            return Ok(f);
        }
        theta *= 4.0;
    }
    Ok(center)
}

/// Soft minimum of the inequality slacks, used to find a strict interior.
struct SoftMin<'a> {
    rows: Vec<&'a Row>,
    n: usize,
    tau: f64,
}

impl ConeObjective for SoftMin<'_> {
    fn evaluate(&self, f: &CMatrix) -> Result<(f64, CMatrix)> {
        let s: Vec<f64> = self.rows.iter().map(|r| r.slack(f)).collect();
        let m = s.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = s.iter().map(|x| (-(x - m) / self.tau).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut g = CMatrix::zeros(self.n, self.n);
        for (row, wi) in self.rows.iter().zip(&w) {
            g += row.slack_gradient(self.n) * C64::new(wi / total, 0.0);
        }
        Ok((m - self.tau * total.ln(), g))
    }
}

/// Log-barrier solve from `init` (moved into the strict interior first).
pub fn solve(problem: &ConeProblem, init: &CMatrix, settings: &SolveSettings) -> Result<SolveReport> {
    let n = problem.dimension;
    if init.shape() != (n, n) {
        return Err(Error::invalid(format!("start is {:?}, expected {n}×{n}", init.shape())));
    }
    if problem.diag_cap.len() > n {
        return Err(Error::invalid("more diagonal caps than dimensions"));
    }
    for &(i, _) in &problem.pinned {
        if i >= n || problem.diag_cap.get(i).is_some_and(|c| c.is_some()) {
            return Err(Error::invalid(format!("pinned index {i} invalid or also capped")));
        }
    }
    let rows = build_rows(problem);
    let basis = Basis::new(n, problem.real, &problem.pinned);
    let mut f = interior_start(problem, init)?;
    let mut steps = 0;

    let min_slack = |f: &CMatrix| rows.iter().map(|r| r.slack(f)).fold(f64::INFINITY, f64::min);
    if !(min_slack(&f) > 0.0) {
        // Phase 1: ascend the soft-min slack under the cone, cap and pin
        // barriers until every inequality holds strictly.
        let softmin = SoftMin { rows: rows.iter().filter(|r| matches!(r, Row::Dense { .. })).collect(), n, tau: 1e-3 };
        let caps: Vec<Row> = rows
            .iter()
            .filter_map(|r| match r {
                Row::Cap { index, cap } => Some(Row::Cap { index: *index, cap: *cap }),
                Row::Dense { .. } => None,
            })
            .collect();
        let phase1 = Barrier::new(&softmin, &caps, &basis);
        let mut infeasible = true;
        let mut mu = 1e-2;
        for _ in 0..4 {
            let Some(start) = phase1.evaluate(&f, mu) else { break };
            let out = center(&phase1, start, mu, 0.0, settings.max_steps / 8, |p| min_slack(&p.f) > 0.0);
            steps += out.steps;
            f = out.point.f;
            if min_slack(&f) > 0.0 {
                infeasible = false;
                break;
            }
            mu /= 10.0;
        }
        if infeasible {
            let value = problem.objective.evaluate(&f).map(|(v, _)| v).unwrap_or(f64::NEG_INFINITY);
            return Ok(SolveReport {
                max_violation: violation(problem, &f),
                f_star: f,
                objective_value: value,
                kkt_residual: f64::INFINITY,
                iterations: steps,
                status: SolveStatus::Infeasible,
            });
        }
    }

    let barrier = Barrier::new(problem.objective, &rows, &basis);
    let mut mu = settings.mu_initial;
    let mut point = barrier
        .evaluate(&f, mu)
        .ok_or_else(|| Error::Domain("objective undefined at the interior start".into()))?;
    let (residual, centered) = loop {
        let tolerance = settings.kkt_tolerance.max(0.1 * mu);
        let out = center(&barrier, point, mu, tolerance, settings.max_steps.saturating_sub(steps), |_| false);
        steps += out.steps;
        point = out.point;
        if steps >= settings.max_steps || mu <= settings.mu_final {
            break (out.residual, out.centered);
        }
        mu = (mu / 10.0).max(settings.mu_final);
        match barrier.evaluate(&point.f, mu) {
            Some(p) => point = p,
            None => break (out.residual, false),
        }
    };
    let status = if centered && mu <= settings.mu_final { SolveStatus::Converged } else { SolveStatus::IterationCap };
    Ok(SolveReport {
        max_violation: violation(problem, &point.f),
        objective_value: point.objective,
        f_star: point.f,
        kkt_residual: residual,
        iterations: steps,
        status,
    })
}

/// Largest violation of inequalities, caps, pins and the cone.
pub fn violation(problem: &ConeProblem, f: &CMatrix) -> f64 {
    let mut v = 0.0f64;
    for ineq in &problem.inequalities {
        v = v.max(-ineq.slack(f));
    }
    for (i, cap) in problem.diag_cap.iter().enumerate() {
        if let Some(c) = cap {
            v = v.max(f[(i, i)].re - c);
        }
    }
    for &(i, value) in &problem.pinned {
        v = v.max((f[(i, i)].re - value).abs());
    }
    v.max(-HermitianEigen::new(f).min())
}
