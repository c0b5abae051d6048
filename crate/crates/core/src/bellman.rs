//! Row-decoupled Bellman problems `sup_P { -A(P) U + y(P) } = 0` and policy
//! iteration.

use crate::sparsela::{self, CsrBuilder, IterativeConfig, SolverError, SparseMatrix};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum BellmanError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("policy matrix is singular or not monotone; suspect rows {rows:?}")]
    SingularPolicy { rows: Vec<usize>, reason: String },
    #[error("no convergence after {iterations} policy iterations")]
    NotConverged { iterations: usize, last: Vec<f64> },
}

/// Scratch buffer for one sparse row.
pub type Row = Vec<(usize, f64)>;

/// A family of matrices and vectors whose row `i` depends only on the
/// control chosen for row `i`. Controls of row `i` are numbered
/// `0..control_count(i)`.
pub trait BellmanProblem {
    fn dim(&self) -> usize;

    fn control_count(&self, i: usize) -> usize;

    /// Writes row `i` of `A(P)` for control `p` into `row` and returns `y_i`.
    fn row(&self, i: usize, p: usize, row: &mut Row) -> f64;

    /// `[-A(P) U + y(P)]_i`.
    fn row_value(&self, i: usize, p: usize, u: &[f64], scratch: &mut Row) -> f64 {
        scratch.clear();
        let y = self.row(i, p, scratch);
        y - scratch.iter().map(|(j, a)| a * u[*j]).sum::<f64>()
    }

    /// Maximizing control and its value; the first maximizer wins ties.
    fn best_control(&self, i: usize, u: &[f64], scratch: &mut Row) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for p in 0..self.control_count(i) {
            let v = self.row_value(i, p, u, scratch);
            if v > best.1 {
                best = (p, v);
            }
        }
        best
    }
}

impl<T: BellmanProblem + ?Sized> BellmanProblem for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn control_count(&self, i: usize) -> usize {
        (**self).control_count(i)
    }
    fn row(&self, i: usize, p: usize, row: &mut Row) -> f64 {
        (**self).row(i, p, row)
    }
    fn row_value(&self, i: usize, p: usize, u: &[f64], scratch: &mut Row) -> f64 {
        (**self).row_value(i, p, u, scratch)
    }
    fn best_control(&self, i: usize, u: &[f64], scratch: &mut Row) -> (usize, f64) {
        (**self).best_control(i, u, scratch)
    }
}

/// One control index per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy(pub Vec<usize>);

/// Summable slack sequence for ε-policy iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsSequence {
    /// `1/k^2`
    InverseSquare,
    /// `c/k^p`, summable for `p > 1`
    Power { c: f64, p: f64 },
    /// `c r^k`, summable for `0 <= r < 1`
    Geometric { c: f64, r: f64 },
    /// `c` at every step; summable only when `c == 0`
    Constant(f64),
}

impl EpsSequence {
    pub fn at(&self, k: usize) -> f64 {
        let k = k.max(1) as f64;
        match *self {
            Self::InverseSquare => 1.0 / (k * k),
            Self::Power { c, p } => c / k.powf(p),
            Self::Geometric { c, r } => c * r.powf(k),
            Self::Constant(c) => c,
        }
    }

    pub fn validate(&self) -> Result<(), BellmanError> {
        let ok = match *self {
            Self::InverseSquare => true,
            Self::Power { c, p } => c >= 0.0 && p > 1.0,
            Self::Geometric { c, r } => c >= 0.0 && (0.0..1.0).contains(&r),
            Self::Constant(c) => c == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(BellmanError::InvalidArgument(format!("slack sequence {self:?} is not summable")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationConfig {
    pub tolerance: f64,
    pub scale: f64,
    pub max_iterations: usize,
    pub eps: EpsSequence,
    /// Verify every policy matrix is a nonsingular M-matrix before solving.
    pub check_m_matrix: bool,
    /// Stop as soon as the improved policy repeats the previous one.
    pub stop_on_stable_policy: bool,
    pub linear: IterativeConfig,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            scale: 1.0,
            max_iterations: 500,
            eps: EpsSequence::InverseSquare,
            check_m_matrix: false,
            stop_on_stable_policy: true,
            linear: IterativeConfig::default(),
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<(), BellmanError> {
        if !(self.tolerance > 0.0) || !(self.scale > 0.0) || self.max_iterations == 0 {
            return Err(BellmanError::InvalidArgument(format!(
                "tolerance {} and scale {} must be positive, max_iterations nonzero",
                self.tolerance, self.scale
            )));
        }
        self.eps.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Residual sup-norm of the iterate the step started from.
    pub residual_inf: f64,
    pub linear_iters: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub policy_iterations: usize,
    pub linear_iterations: Vec<usize>,
    pub residual_inf: f64,
    pub log: Vec<IterationRecord>,
}

impl SolveStats {
    pub fn total_linear_iterations(&self) -> usize {
        self.linear_iterations.iter().sum()
    }
}

/// Row-wise argmax of `-A(P) U + y(P)` together with the attained values.
pub fn improve_policy_with_values<P: BellmanProblem + ?Sized>(prob: &P, u: &[f64]) -> Result<(Policy, Vec<f64>), BellmanError> {
    let n = prob.dim();
    if u.len() != n {
        return Err(BellmanError::InvalidArgument(format!("U has {} entries, problem has {n} rows", u.len())));
    }
    let mut scratch = Row::new();
    let mut pol = Vec::with_capacity(n);
    let mut vals = Vec::with_capacity(n);
    for i in 0..n {
        if prob.control_count(i) == 0 {
            return Err(BellmanError::InvalidProblem(format!("row {i} has no controls")));
        }
        let (p, v) = prob.best_control(i, u, &mut scratch);
        pol.push(p);
        vals.push(v);
    }
    Ok((Policy(pol), vals))
}

pub fn improve_policy<P: BellmanProblem + ?Sized>(prob: &P, u: &[f64]) -> Result<Policy, BellmanError> {
    improve_policy_with_values(prob, u).map(|(p, _)| p)
}

/// `sup_P { -A(P) U + y(P) }` row by row.
pub fn residual<P: BellmanProblem + ?Sized>(prob: &P, u: &[f64]) -> Result<Vec<f64>, BellmanError> {
    improve_policy_with_values(prob, u).map(|(_, v)| v)
}

/// `A(P)` and `y(P)`.
pub fn assemble<P: BellmanProblem + ?Sized>(prob: &P, policy: &Policy) -> (SparseMatrix, Vec<f64>) {
    let n = prob.dim();
    let mut b = CsrBuilder::new(n);
    let mut y = Vec::with_capacity(n);
    let mut row = Row::new();
    for (i, &p) in policy.0.iter().enumerate() {
        row.clear();
        y.push(prob.row(i, p, &mut row));
        b.push_row(&mut row);
    }
    (b.finish(), y)
}

/// `max_i |U_new - U_old| / max(|U_new|, scale) < tolerance`.
pub fn check_convergence(u_new: &[f64], u_old: &[f64], cfg: &IterationConfig) -> bool {
    u_new
        .iter()
        .zip(u_old)
        .map(|(a, b)| (a - b).abs() / a.abs().max(cfg.scale))
        .fold(0.0, f64::max)
        < cfg.tolerance
}

fn singular(a: &SparseMatrix, reason: String) -> BellmanError {
    let d = sparsela::is_wcdd(a);
    let rows = if d.unreachable_rows.is_empty() {
        (0..a.dim()).filter(|&i| !d.sdd_rows.contains(&i)).collect()
    } else {
        d.unreachable_rows
    };
    BellmanError::SingularPolicy { rows, reason }
}

fn evaluate(a: &SparseMatrix, y: &[f64], guess: &[f64], cfg: &IterationConfig) -> Result<(Vec<f64>, usize), BellmanError> {
    if cfg.check_m_matrix {
        let v = sparsela::is_nonsingular_m_matrix(a);
        if !v.is_m_matrix {
            return Err(singular(a, format!("{:?}", v.reason)));
        }
    }
    sparsela::solve_iterative(a, y, guess, &cfg.linear).map_err(|e| match e {
        SolverError::Breakdown { .. } | SolverError::MaxIterations { .. } | SolverError::ZeroPivot(_) => {
            singular(a, e.to_string())
        }
        other => BellmanError::InvalidProblem(other.to_string()),
    })
}

/// Policy iteration from `u0`.
pub fn policy_iteration<P: BellmanProblem + ?Sized>(prob: &P, u0: &[f64], cfg: &IterationConfig) -> Result<(Vec<f64>, SolveStats), BellmanError> {
    cfg.validate()?;
    let mut u = u0.to_vec();
    let mut stats = SolveStats::default();
    let mut prev: Option<Policy> = None;
    for it in 1..=cfg.max_iterations {
        let (pol, vals) = improve_policy_with_values(prob, &u)?;
        let res_in = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if cfg.stop_on_stable_policy && prev.as_ref() == Some(&pol) {
            stats.residual_inf = res_in;
            return Ok((u, stats));
        }
        let (a, y) = assemble(prob, &pol);
        let (un, lin) = evaluate(&a, &y, &u, cfg)?;
        stats.policy_iterations += 1;
        stats.linear_iterations.push(lin);
        stats.log.push(IterationRecord { iter: it, residual_inf: res_in, linear_iters: lin });
        let done = check_convergence(&un, &u, cfg);
        u = un;
        prev = Some(pol);
        if done {
            stats.residual_inf = residual(prob, &u)?.iter().fold(0.0, |m, v| m.max(v.abs()));
            return Ok((u, stats));
        }
    }
    Err(BellmanError::NotConverged { iterations: cfg.max_iterations, last: u })
}

/// ε-policy iteration. `improver(prob, U, eps)` must return a policy whose
/// row values are within `eps` of the row suprema. A small increment ends
/// the iteration once `eps` is below the tolerance or the evaluated policy
/// is greedy to within it.
pub fn eps_policy_iteration<P, F>(prob: &P, u0: &[f64], cfg: &IterationConfig, mut improver: F) -> Result<(Vec<f64>, SolveStats), BellmanError>
where
    P: BellmanProblem + ?Sized,
    F: FnMut(&P, &[f64], f64) -> Policy,
{
    cfg.validate()?;
    let mut u = u0.to_vec();
    let mut stats = SolveStats::default();
    for it in 1..=cfg.max_iterations {
        let eps = cfg.eps.at(it);
        let pol = improver(prob, &u, eps);
        if pol.0.len() != prob.dim() || pol.0.iter().enumerate().any(|(i, p)| *p >= prob.control_count(i)) {
            return Err(BellmanError::InvalidProblem(format!("improver returned an invalid policy at step {it}")));
        }
        let (a, y) = assemble(prob, &pol);
        let (un, lin) = evaluate(&a, &y, &u, cfg)?;
        stats.policy_iterations += 1;
        stats.linear_iterations.push(lin);
        stats.log.push(IterationRecord { iter: it, residual_inf: f64::NAN, linear_iters: lin });
        let small = check_convergence(&un, &u, cfg);
        u = un;
        if small && (eps <= stop_slack(&u, cfg) || greedy_within(prob, &pol, &u, stop_slack(&u, cfg))?) {
            stats.residual_inf = residual(prob, &u)?.iter().fold(0.0, |m, v| m.max(v.abs()));
            return Ok((u, stats));
        }
    }
    Err(BellmanError::NotConverged { iterations: cfg.max_iterations, last: u })
}

fn stop_slack(u: &[f64], cfg: &IterationConfig) -> f64 {
    cfg.tolerance * u.iter().fold(cfg.scale, |m, v| m.max(v.abs()))
}

/// Whether every row of `pol` is within `slack` of the row supremum at `u`,
/// measured in units of `U` (divided by the diagonal). A lazy improver can
/// repeat a suboptimal policy, which stalls the increment test while the
/// slack is still large.
fn greedy_within<P: BellmanProblem + ?Sized>(prob: &P, pol: &Policy, u: &[f64], slack: f64) -> Result<bool, BellmanError> {
    let (_, best) = improve_policy_with_values(prob, u)?;
    let mut row = Row::new();
    Ok(pol.0.iter().enumerate().all(|(i, &p)| {
        row.clear();
        let y = prob.row(i, p, &mut row);
        let diag: f64 = row.iter().filter(|(j, _)| *j == i).map(|(_, a)| a).sum();
        let value = y - row.iter().map(|(j, a)| a * u[*j]).sum::<f64>();
        best[i] - value <= slack * diag.abs().max(f64::MIN_POSITIVE)
    }))
}

/// Exact improvement, usable as an ε-improver.
pub fn exact_improver<P: BellmanProblem + ?Sized>(prob: &P, u: &[f64], _eps: f64) -> Policy {
    improve_policy(prob, u).expect("nonempty control sets")
}

/// Rows and right-hand sides multiplied by positive weights `s(i, p)`.
pub struct ScaledProblem<P, S> {
    inner: P,
    weight: S,
}

/// Wraps `prob` so that row `i` under control `p` is multiplied by
/// `weight(i, p)`. The solution set is unchanged.
pub fn scale_problem<P, S>(prob: P, weight: S) -> Result<ScaledProblem<P, S>, BellmanError>
where
    P: BellmanProblem,
    S: Fn(usize, usize) -> f64,
{
    for i in 0..prob.dim() {
        for p in 0..prob.control_count(i) {
            let w = weight(i, p);
            if !(w > 0.0) || !w.is_finite() {
                return Err(BellmanError::InvalidArgument(format!("weight {w} at row {i}, control {p}")));
            }
        }
    }
    Ok(ScaledProblem { inner: prob, weight })
}

impl<P: BellmanProblem, S: Fn(usize, usize) -> f64> BellmanProblem for ScaledProblem<P, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn control_count(&self, i: usize) -> usize {
        self.inner.control_count(i)
    }
    fn row(&self, i: usize, p: usize, row: &mut Row) -> f64 {
        let start = row.len();
        let y = self.inner.row(i, p, row);
        let s = (self.weight)(i, p);
        row[start..].iter_mut().for_each(|e| e.1 *= s);
        s * y
    }
    fn row_value(&self, i: usize, p: usize, u: &[f64], scratch: &mut Row) -> f64 {
        (self.weight)(i, p) * self.inner.row_value(i, p, u, scratch)
    }
}

/// The same rows over a per-row subset of controls.
pub struct RestrictedProblem<P> {
    inner: P,
    allowed: Vec<Vec<usize>>,
}

impl<P> RestrictedProblem<P> {
    /// Original control index of restricted control `p` in row `i`.
    pub fn original(&self, i: usize, p: usize) -> usize {
        self.allowed[i][p]
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

/// Keeps control `p` of row `i` iff `keep(i, p)`.
pub fn restrict_controls<P, K>(prob: P, keep: K) -> Result<RestrictedProblem<P>, BellmanError>
where
    P: BellmanProblem,
    K: Fn(usize, usize) -> bool,
{
    let mut allowed = Vec::with_capacity(prob.dim());
    for i in 0..prob.dim() {
        let row: Vec<usize> = (0..prob.control_count(i)).filter(|&p| keep(i, p)).collect();
        if row.is_empty() {
            return Err(BellmanError::InvalidArgument(format!("restriction leaves row {i} without controls")));
        }
        allowed.push(row);
    }
    Ok(RestrictedProblem { inner: prob, allowed })
}

impl<P: BellmanProblem> BellmanProblem for RestrictedProblem<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn control_count(&self, i: usize) -> usize {
        self.allowed[i].len()
    }
    fn row(&self, i: usize, p: usize, row: &mut Row) -> f64 {
        self.inner.row(i, self.allowed[i][p], row)
    }
    fn row_value(&self, i: usize, p: usize, u: &[f64], scratch: &mut Row) -> f64 {
        self.inner.row_value(i, self.allowed[i][p], u, scratch)
    }
}

/// Small dense problem, convenient for tests and examples.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBellman {
    /// `rows[i][p] = (row of A, y_i)`
    pub rows: Vec<Vec<(Vec<f64>, f64)>>,
}

impl BellmanProblem for DenseBellman {
    fn dim(&self) -> usize {
        self.rows.len()
    }
    fn control_count(&self, i: usize) -> usize {
        self.rows[i].len()
    }
    fn row(&self, i: usize, p: usize, row: &mut Row) -> f64 {
        let (a, y) = &self.rows[i][p];
        row.extend(a.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)));
        *y
    }
}
