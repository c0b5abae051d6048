//! Impulse-control HJB quasi-variational inequalities on truncated 1D/2D
//! domains and the direct control, penalty and explicit-impulse schemes.

use crate::bellman::{self, BellmanError, BellmanProblem, IterationConfig, Policy, Row, SolveStats};
use crate::grid::{second_difference_coeffs, upwind_coeffs, DiscreteControlSet, GridError, GridFunction, Mesh, Stencil, TimeGrid};
use crate::sparsela::{self, CsrBuilder, Ilut, SolverError, SparseMatrix, Tridiagonal, TridiagonalFactor};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum HjbError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("scheme not applicable: {0}")]
    SchemeInapplicable(String),
    #[error("stability bound violated at layer {layer}: |V| = {norm} > {bound}")]
    Stability { layer: usize, norm: f64, bound: f64 },
    #[error(transparent)]
    Bellman(#[from] BellmanError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("export failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("export failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coefficients of `min{ -V_t - sup_w { L^w V + f }, V - M V } = 0` on a
/// truncated domain, with `M V = sup_z { V(Gamma(t, x, z)) + K(t, x, z) }`.
///
/// Points are `[f64; 2]`; 1D problems ignore the second entry. Times are
/// calendar times; stationary problems are evaluated at `t = 0`.
pub trait ImpulseProblem: Sync {
    fn mesh(&self) -> &Mesh;

    /// `T`, or `f64::INFINITY` for a stationary problem.
    fn horizon(&self) -> f64;

    fn discount(&self) -> f64;

    /// `W^h`
    fn controls(&self) -> &DiscreteControlSet;

    fn drift(&self, t: f64, x: [f64; 2], w: f64) -> [f64; 2];

    /// `b` per axis.
    fn volatility(&self, t: f64, x: [f64; 2], w: f64) -> [f64; 2];

    fn reward(&self, t: f64, x: [f64; 2], w: f64) -> f64;

    fn terminal(&self, x: [f64; 2]) -> f64;

    /// `Z^h(t, x_node)`; empty where no impulse is admissible.
    fn impulse_controls(&self, t: f64, node: usize) -> Vec<f64>;

    fn destination(&self, t: f64, x: [f64; 2], z: f64) -> [f64; 2];

    fn cost(&self, t: f64, x: [f64; 2], z: f64) -> f64;

    /// Controls kept when the direct control scheme restricts the impulse set.
    fn direct_control_allows(&self, _node: usize, _z: f64) -> bool {
        true
    }

    /// Appends `(column, coefficient)` pairs of `(L^w U)_node`.
    fn generator(&self, t: f64, node: usize, w: f64, row: &mut Row) {
        standard_generator(self, t, node, w, [false, false], row);
    }

    /// `interp(V_prev, x + a dt)` for the explicit-impulse scheme.
    fn explicit_continuation(&self, t: f64, node: usize, w: f64, dt: f64, v_prev: &[f64]) -> f64 {
        standard_foot_value(self, t, node, w, dt, [false, false], v_prev)
    }

    /// Bound on `|V|` given `sup |f|` and `sup |g|`, if one is known.
    fn stability_bound(&self, f_sup: f64, g_sup: f64) -> Option<f64> {
        let t = self.horizon();
        if t.is_finite() {
            Some(f_sup * t + g_sup)
        } else if self.discount() > 0.0 {
            Some(f_sup / self.discount())
        } else {
            None
        }
    }
}

/// Per-axis centred diffusion and upwind drift at interior nodes. Boundary
/// nodes drop both terms, except that `outflow[k]` keeps a one-sided drift
/// on axis `k` when it points into the domain.
pub fn standard_generator<P: ImpulseProblem + ?Sized>(prob: &P, t: f64, node: usize, w: f64, outflow: [bool; 2], row: &mut Row) {
    let mesh = prob.mesh();
    let x = mesh.coords(node);
    let idx = mesh.unflatten(node);
    let a = prob.drift(t, x, w);
    let b = prob.volatility(t, x, w);
    for k in 0..mesh.dim() {
        let g = mesh.axis(k);
        let st = mesh.stride(k);
        let i = idx[k];
        let pts = g.points();
        if !g.is_boundary(i) {
            let (cm, cc, cp) = second_difference_coeffs(g, i);
            let d = 0.5 * b[k] * b[k];
            let (um, uc, up) = upwind_coeffs(g, i, a[k]);
            row.push((node - st, d * cm + um));
            row.push((node, d * cc + uc));
            row.push((node + st, d * cp + up));
        } else if outflow[k] {
            if i == g.last() && a[k] < 0.0 && i > 0 {
                let c = a[k] / (pts[i] - pts[i - 1]);
                row.push((node - st, -c));
                row.push((node, c));
            } else if i == 0 && a[k] > 0.0 && g.len() > 1 {
                let c = a[k] / (pts[1] - pts[0]);
                row.push((node, -c));
                row.push((node + st, c));
            }
        }
    }
}

/// Foot of the characteristic `x + a dt`, with the drift dropped on axes
/// where the node is on the boundary (unless `outflow[k]` and the foot stays
/// inside), interpolated in `v_prev`.
pub fn standard_foot_value<P: ImpulseProblem + ?Sized>(prob: &P, t: f64, node: usize, w: f64, dt: f64, outflow: [bool; 2], v_prev: &[f64]) -> f64 {
    let mesh = prob.mesh();
    let mut x = mesh.coords(node);
    let idx = mesh.unflatten(node);
    let a = prob.drift(t, x, w);
    for k in 0..mesh.dim() {
        let g = mesh.axis(k);
        let y = x[k] + a[k] * dt;
        if !g.is_boundary(idx[k]) || (outflow[k] && y >= g.lo() && y <= g.hi()) {
            x[k] = y;
        }
    }
    mesh.interpolate(v_prev, &x[..mesh.dim()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    DirectControl,
    Penalty,
    ExplicitImpulse,
}

impl std::str::FromStr for SchemeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "direct" | "direct-control" => Ok(Self::DirectControl),
            "penalty" => Ok(Self::Penalty),
            "explicit" | "explicit-impulse" => Ok(Self::ExplicitImpulse),
            _ => Err(format!("unknown scheme {s:?}")),
        }
    }
}

/// Penalty parameter: `Relative(c)` means `eps = c * dt` (with `dt = 1` for
/// stationary problems), `Absolute(e)` means `eps = e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PenaltyParameter {
    Relative(f64),
    Absolute(f64),
}

impl PenaltyParameter {
    pub fn value(&self, dt: f64) -> f64 {
        match *self {
            Self::Relative(c) => c * dt,
            Self::Absolute(e) => e,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub scheme: SchemeKind,
    pub penalty: PenaltyParameter,
    /// Direct control row weights `1 + d / (delta dt)`.
    pub delta: f64,
    /// Subtracted from every discretized intervention value.
    pub relaxation: f64,
    pub iteration: IterationConfig,
    /// Turn stability and terminal-condition warnings into errors.
    pub strict: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::Penalty,
            penalty: PenaltyParameter::Relative(1e-2),
            delta: 1e-2,
            relaxation: 0.0,
            iteration: IterationConfig::default(),
            strict: false,
        }
    }
}

impl SchemeConfig {
    pub fn new(scheme: SchemeKind) -> Self {
        Self { scheme, ..Self::default() }
    }

    fn validate(&self, dt: f64) -> Result<(), HjbError> {
        let eps = self.penalty.value(dt);
        if !(eps > 0.0) || !(self.delta > 0.0) || !(self.relaxation >= 0.0) {
            return Err(HjbError::InvalidProblem(format!(
                "penalty {eps}, delta {} must be positive and relaxation {} nonnegative",
                self.delta, self.relaxation
            )));
        }
        Ok(())
    }
}

/// Optimal control at one node. `z` is the best impulse (if any exists),
/// whether or not it is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeControl {
    pub w: f64,
    pub impulse: bool,
    pub z: Option<f64>,
}

/// One discretized impulse from a node.
#[derive(Debug, Clone, Copy)]
pub struct Impulse {
    pub z: f64,
    pub stencil: Stencil,
    pub cost: f64,
}

/// Impulse options at `node`, with costs reduced by `relaxation`.
pub fn impulse_options<P: ImpulseProblem + ?Sized>(prob: &P, t: f64, node: usize, relaxation: f64) -> Result<Vec<Impulse>, HjbError> {
    let mesh = prob.mesh();
    let x = mesh.coords(node);
    prob.impulse_controls(t, node)
        .into_iter()
        .map(|z| {
            let y = prob.destination(t, x, z);
            for k in 0..mesh.dim() {
                let g = mesh.axis(k);
                let tol = 1e-9 * (g.hi() - g.lo());
                if y[k] < g.lo() - tol || y[k] > g.hi() + tol {
                    return Err(HjbError::InvalidProblem(format!(
                        "impulse z = {z} from {x:?} lands at {y:?}, outside the domain"
                    )));
                }
            }
            Ok(Impulse { z, stencil: mesh.weights(&y[..mesh.dim()]), cost: prob.cost(t, x, z) - relaxation })
        })
        .collect()
}

/// `(M U)_node` and its first maximizing `z`.
pub fn apply_intervention<P: ImpulseProblem + ?Sized>(prob: &P, u: &[f64], t: f64, node: usize) -> Result<(f64, f64), HjbError> {
    let opts = impulse_options(prob, t, node, 0.0)?;
    best_impulse(&opts, u).ok_or_else(|| HjbError::InvalidProblem(format!("no admissible impulse at node {node}")))
}

fn best_impulse(opts: &[Impulse], u: &[f64]) -> Option<(f64, f64)> {
    opts.iter().fold(None, |best: Option<(f64, f64)>, o| {
        let v = o.stencil.apply(u) + o.cost;
        match best {
            Some((bv, _)) if bv >= v => best,
            _ => Some((v, o.z)),
        }
    })
}

/// `g` on the mesh, plus the nodes where `M g > g + 1e-9`.
pub fn terminal_layer<P: ImpulseProblem + ?Sized>(prob: &P) -> Result<(GridFunction, Vec<usize>), HjbError> {
    let mesh = prob.mesh();
    let g: Vec<f64> = (0..mesh.len()).map(|i| prob.terminal(mesh.coords(i))).collect();
    let t = if prob.horizon().is_finite() { prob.horizon() } else { 0.0 };
    let mut bad = Vec::new();
    for i in 0..mesh.len() {
        let opts = impulse_options(prob, t, i, 0.0)?;
        if let Some((mg, _)) = best_impulse(&opts, &g) {
            if mg > g[i] + 1e-9 {
                bad.push(i);
            }
        }
    }
    Ok((GridFunction(g), bad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StepKind {
    Penalty { eps: f64 },
    Direct,
}

/// One timestep (or the stationary problem) of the direct control or
/// penalty scheme as a Bellman problem.
///
/// Continuation rows are `c U_i - (L^w U)_i = r_i + f_i(w)` with
/// `c = 1/dt, r = V_prev/dt` (or `c = beta, r = 0`). Impulse rows are
/// `U_i - interp(U, Gamma) = K`.
#[derive(Debug, Clone)]
pub struct SchemeStep {
    kind: StepKind,
    w: Vec<f64>,
    diag: f64,
    rhs: Vec<f64>,
    gen_off: Vec<usize>,
    gen: Vec<(usize, f64)>,
    f: Vec<f64>,
    imp_off: Vec<usize>,
    imp: Vec<Impulse>,
}

impl SchemeStep {
    fn build<P: ImpulseProblem + ?Sized>(prob: &P, t: f64, step: Step<'_>, kind: StepKind, relaxation: f64) -> Result<Self, HjbError> {
        let mesh = prob.mesh();
        let n = mesh.len();
        let w = prob.controls().elements().to_vec();
        let (diag, rhs) = match step {
            Step::Timestep { dt, v_prev } => {
                if v_prev.len() != n {
                    return Err(HjbError::InvalidProblem(format!("previous layer has {} values, mesh {n}", v_prev.len())));
                }
                (1.0 / dt, v_prev.iter().map(|v| v / dt).collect())
            }
            Step::Stationary => (prob.discount(), vec![0.0; n]),
        };
        let mut gen_off = Vec::with_capacity(n * w.len() + 1);
        gen_off.push(0);
        let mut gen = Vec::new();
        let mut f = Vec::with_capacity(n * w.len());
        let mut imp_off = Vec::with_capacity(n + 1);
        imp_off.push(0);
        let mut imp = Vec::new();
        for i in 0..n {
            let x = mesh.coords(i);
            for &wj in &w {
                prob.generator(t, i, wj, &mut gen);
                gen_off.push(gen.len());
                f.push(prob.reward(t, x, wj));
            }
            imp.extend(impulse_options(prob, t, i, relaxation)?);
            imp_off.push(imp.len());
        }
        Ok(Self { kind, w, diag, rhs, gen_off, gen, f, imp_off, imp })
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn nw(&self) -> usize {
        self.w.len()
    }

    pub fn impulses(&self, i: usize) -> &[Impulse] {
        &self.imp[self.imp_off[i]..self.imp_off[i + 1]]
    }

    fn cont_value(&self, i: usize, j: usize, u: &[f64]) -> f64 {
        let k = i * self.nw() + j;
        let lu: f64 = self.gen[self.gen_off[k]..self.gen_off[k + 1]].iter().map(|(c, v)| v * u[*c]).sum();
        self.rhs[i] + self.f[k] - self.diag * u[i] + lu
    }

    fn cont_row(&self, i: usize, j: usize, row: &mut Row) -> f64 {
        let k = i * self.nw() + j;
        row.push((i, self.diag));
        row.extend(self.gen[self.gen_off[k]..self.gen_off[k + 1]].iter().map(|(c, v)| (*c, -v)));
        self.rhs[i] + self.f[k]
    }

    fn imp_value(&self, i: usize, k: usize, u: &[f64]) -> f64 {
        let o = &self.impulses(i)[k];
        o.stencil.apply(u) + o.cost - u[i]
    }

    fn imp_row(&self, i: usize, k: usize, scale: f64, row: &mut Row) -> f64 {
        let o = &self.impulses(i)[k];
        row.push((i, scale));
        row.extend(o.stencil.iter().map(|(c, v)| (c, -scale * v)));
        scale * o.cost
    }

    fn best_cont(&self, i: usize, u: &[f64]) -> (usize, f64) {
        (0..self.nw()).fold((0, f64::NEG_INFINITY), |b, j| {
            let v = self.cont_value(i, j, u);
            if v > b.1 {
                (j, v)
            } else {
                b
            }
        })
    }

    fn best_imp(&self, i: usize, u: &[f64]) -> Option<(usize, f64)> {
        (0..self.impulses(i).len()).fold(None, |b, k| {
            let v = self.imp_value(i, k, u);
            match b {
                Some((_, bv)) if bv >= v => b,
                _ => Some((k, v)),
            }
        })
    }

    /// Meaning of control index `p` in row `i`.
    pub fn decode(&self, i: usize, p: usize) -> NodeControl {
        let imps = self.impulses(i);
        match self.kind {
            StepKind::Penalty { .. } => {
                let per = imps.len() + 1;
                let (j, r) = (p / per, p % per);
                NodeControl { w: self.w[j], impulse: r > 0, z: (r > 0).then(|| imps[r - 1].z) }
            }
            StepKind::Direct => {
                if p < self.nw() {
                    NodeControl { w: self.w[p], impulse: false, z: None }
                } else {
                    NodeControl { w: f64::NAN, impulse: true, z: Some(imps[p - self.nw()].z) }
                }
            }
        }
    }
}

impl BellmanProblem for SchemeStep {
    fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn control_count(&self, i: usize) -> usize {
        let nz = self.impulses(i).len();
        match self.kind {
            StepKind::Penalty { .. } => self.nw() * (nz + 1),
            StepKind::Direct => self.nw() + nz,
        }
    }

    fn row(&self, i: usize, p: usize, row: &mut Row) -> f64 {
        match self.kind {
            StepKind::Penalty { eps } => {
                let per = self.impulses(i).len() + 1;
                let y = self.cont_row(i, p / per, row);
                match p % per {
                    0 => y,
                    r => y + self.imp_row(i, r - 1, 1.0 / eps, row),
                }
            }
            StepKind::Direct => {
                if p < self.nw() {
                    self.cont_row(i, p, row)
                } else {
                    self.imp_row(i, p - self.nw(), 1.0, row)
                }
            }
        }
    }

    fn row_value(&self, i: usize, p: usize, u: &[f64], _scratch: &mut Row) -> f64 {
        match self.kind {
            StepKind::Penalty { eps } => {
                let per = self.impulses(i).len() + 1;
                let c = self.cont_value(i, p / per, u);
                match p % per {
                    0 => c,
                    r => c + self.imp_value(i, r - 1, u) / eps,
                }
            }
            StepKind::Direct => {
                if p < self.nw() {
                    self.cont_value(i, p, u)
                } else {
                    self.imp_value(i, p - self.nw(), u)
                }
            }
        }
    }

    fn best_control(&self, i: usize, u: &[f64], _scratch: &mut Row) -> (usize, f64) {
        let (j, c) = self.best_cont(i, u);
        let imp = self.best_imp(i, u);
        match self.kind {
            StepKind::Penalty { eps } => {
                let per = self.impulses(i).len() + 1;
                match imp {
                    Some((k, v)) if v / eps > 0.0 => (j * per + k + 1, c + v / eps),
                    _ => (j * per, c),
                }
            }
            StepKind::Direct => match imp {
                Some((k, v)) if v > c => (self.nw() + k, v),
                _ => (j, c),
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Step<'a> {
    Timestep { dt: f64, v_prev: &'a [f64] },
    Stationary,
}

/// Penalty scheme at time `t` with previous layer `v_prev`.
pub fn assemble_penalty<P: ImpulseProblem + ?Sized>(prob: &P, v_prev: &[f64], t: f64, dt: f64, eps: f64) -> Result<SchemeStep, HjbError> {
    if !(eps > 0.0) {
        return Err(HjbError::InvalidProblem(format!("penalty parameter {eps} must be positive")));
    }
    SchemeStep::build(prob, t, Step::Timestep { dt, v_prev }, StepKind::Penalty { eps }, 0.0)
}

/// Direct control scheme at time `t` with previous layer `v_prev`
/// (unscaled, unrestricted).
pub fn assemble_direct_control<P: ImpulseProblem + ?Sized>(prob: &P, v_prev: &[f64], t: f64, dt: f64) -> Result<SchemeStep, HjbError> {
    SchemeStep::build(prob, t, Step::Timestep { dt, v_prev }, StepKind::Direct, 0.0)
}

/// Stationary scheme: `beta V` in place of the time difference.
pub fn assemble_stationary<P: ImpulseProblem + ?Sized>(prob: &P, cfg: &SchemeConfig) -> Result<SchemeStep, HjbError> {
    let kind = match cfg.scheme {
        SchemeKind::Penalty => StepKind::Penalty { eps: cfg.penalty.value(1.0) },
        SchemeKind::DirectControl => StepKind::Direct,
        SchemeKind::ExplicitImpulse => {
            return Err(HjbError::SchemeInapplicable("the explicit-impulse scheme needs a finite horizon".into()))
        }
    };
    SchemeStep::build(prob, 0.0, Step::Stationary, kind, cfg.relaxation)
}

fn step_problem<P: ImpulseProblem + ?Sized>(prob: &P, cfg: &SchemeConfig, t: f64, dt: f64, v_prev: &[f64]) -> Result<SchemeStep, HjbError> {
    let kind = match cfg.scheme {
        SchemeKind::Penalty => StepKind::Penalty { eps: cfg.penalty.value(dt) },
        _ => StepKind::Direct,
    };
    SchemeStep::build(prob, t, Step::Timestep { dt, v_prev }, kind, cfg.relaxation)
}

/// Solves one direct control step with row weights `1 + d / (delta dt)` and
/// the problem's impulse restriction; returns the solution and the controls.
fn solve_direct<P: ImpulseProblem + ?Sized>(prob: &P, step: &SchemeStep, dt: f64, cfg: &SchemeConfig, guess: &[f64]) -> Result<(Vec<f64>, SolveStats, Policy), HjbError> {
    let nw = step.nw();
    let scale = 1.0 / (cfg.delta * dt);
    let scaled = bellman::scale_problem(step, |_, p| if p < nw { 1.0 } else { scale })?;
    let keep = |i: usize, p: usize| p < nw || prob.direct_control_allows(i, step.impulses(i)[p - nw].z);
    let restricted = bellman::restrict_controls(scaled, keep)?;
    let (u, stats) = bellman::policy_iteration(&restricted, guess, &cfg.iteration)?;
    let pol = bellman::improve_policy(&restricted, &u)?;
    let orig = Policy(pol.0.iter().enumerate().map(|(i, &p)| restricted.original(i, p)).collect());
    Ok((u, stats, orig))
}

fn solve_step<P: ImpulseProblem + ?Sized>(prob: &P, step: &SchemeStep, dt: f64, cfg: &SchemeConfig, guess: &[f64]) -> Result<(Vec<f64>, SolveStats, Policy), HjbError> {
    match step.kind {
        StepKind::Direct => solve_direct(prob, step, dt, cfg, guess),
        StepKind::Penalty { .. } => {
            let (u, stats) = bellman::policy_iteration(step, guess, &cfg.iteration)?;
            let pol = bellman::improve_policy(step, &u)?;
            Ok((u, stats, pol))
        }
    }
}

/// `I - (dt/2) diag(b^2) D_2`, per axis, with boundary rows left as identity.
pub fn explicit_matrix<P: ImpulseProblem + ?Sized>(prob: &P, t: f64, dt: f64) -> Result<SparseMatrix, HjbError> {
    let mesh = prob.mesh();
    let ws = prob.controls().elements();
    let mut b = CsrBuilder::new(mesh.len());
    let mut row = Row::new();
    for node in 0..mesh.len() {
        let x = mesh.coords(node);
        let b0 = prob.volatility(t, x, ws[0]);
        for &w in &ws[1..] {
            let bw = prob.volatility(t, x, w);
            if (0..mesh.dim()).any(|k| (bw[k] - b0[k]).abs() > 1e-14 * b0[k].abs().max(1.0)) {
                return Err(HjbError::SchemeInapplicable(format!(
                    "diffusion depends on the control at {x:?}; the explicit-impulse scheme needs it control-free"
                )));
            }
        }
        row.clear();
        row.push((node, 1.0));
        let idx = mesh.unflatten(node);
        for k in 0..mesh.dim() {
            let g = mesh.axis(k);
            if g.is_boundary(idx[k]) {
                continue;
            }
            let st = mesh.stride(k);
            let (cm, cc, cp) = second_difference_coeffs(g, idx[k]);
            let d = 0.5 * dt * b0[k] * b0[k];
            row.push((node - st, -d * cm));
            row.push((node, -d * cc));
            row.push((node + st, -d * cp));
        }
        b.push_row(&mut row);
    }
    Ok(b.finish())
}

enum Factor {
    Tri(TridiagonalFactor),
    Ilu(Ilut),
}

/// Reuses the factorization of the explicit-impulse matrix while it does not
/// change between steps.
#[derive(Default)]
pub struct ExplicitCache {
    cached: Option<(SparseMatrix, Factor)>,
    pub refactorizations: usize,
}

impl ExplicitCache {
    fn solve(&mut self, a: SparseMatrix, y: &[f64], guess: &[f64], cfg: &IterationConfig) -> Result<(Vec<f64>, usize), HjbError> {
        if self.cached.as_ref().is_none_or(|(m, _)| *m != a) {
            let factor = match Tridiagonal::from_sparse(&a) {
                Ok(t) => Factor::Tri(t.factor()?),
                Err(_) => Factor::Ilu(Ilut::new(&a, cfg.linear.ilut)?),
            };
            self.cached = Some((a, factor));
            self.refactorizations += 1;
        }
        let (a, f) = self.cached.as_ref().unwrap();
        match f {
            Factor::Tri(t) => Ok((t.solve(y)?, 1)),
            Factor::Ilu(p) => Ok(sparsela::bicgstab(a, y, guess, &cfg.linear, p)?),
        }
    }
}

/// Right-hand side of the explicit-impulse scheme and the controls that
/// attain it.
pub fn explicit_rhs<P: ImpulseProblem + ?Sized>(prob: &P, v_prev: &[f64], t: f64, dt: f64, relaxation: f64) -> Result<(Vec<f64>, Vec<NodeControl>), HjbError> {
    let mesh = prob.mesh();
    let ws = prob.controls().elements();
    let mut y = Vec::with_capacity(mesh.len());
    let mut ctl = Vec::with_capacity(mesh.len());
    for node in 0..mesh.len() {
        let x = mesh.coords(node);
        let (w, c) = ws.iter().fold((ws[0], f64::NEG_INFINITY), |b, &w| {
            let v = prob.explicit_continuation(t, node, w, dt, v_prev) + prob.reward(t, x, w) * dt;
            if v > b.1 {
                (w, v)
            } else {
                b
            }
        });
        let imp = best_impulse(&impulse_options(prob, t, node, relaxation)?, v_prev);
        match imp {
            Some((m, z)) if m > c => {
                y.push(m);
                ctl.push(NodeControl { w, impulse: true, z: Some(z) });
            }
            _ => {
                y.push(c);
                ctl.push(NodeControl { w, impulse: false, z: imp.map(|p| p.1) });
            }
        }
    }
    Ok((y, ctl))
}

/// One explicit-impulse step from `v_prev` to time `t`.
pub fn explicit_impulse_step<P: ImpulseProblem + ?Sized>(prob: &P, v_prev: &[f64], t: f64, dt: f64, cfg: &SchemeConfig, cache: &mut ExplicitCache) -> Result<(GridFunction, SolveStats), HjbError> {
    if !prob.horizon().is_finite() {
        return Err(HjbError::SchemeInapplicable("the explicit-impulse scheme needs a finite horizon".into()));
    }
    let (y, _) = explicit_rhs(prob, v_prev, t, dt, cfg.relaxation)?;
    let a = explicit_matrix(prob, t, dt)?;
    let (v, lin) = cache.solve(a, &y, v_prev, &cfg.iteration)?;
    let stats = SolveStats { policy_iterations: 0, linear_iterations: vec![lin], residual_inf: 0.0, log: Vec::new() };
    Ok((GridFunction(v), stats))
}

/// Numerical solution. For finite horizons `layers[n]` approximates
/// `V(T - n dt)`, so the last layer is `t = 0`; stationary solutions have a
/// single layer.
#[derive(Debug, Clone)]
pub struct Solution {
    pub scheme: SchemeKind,
    pub times: Vec<f64>,
    pub layers: Vec<GridFunction>,
    pub stats: Vec<SolveStats>,
    /// Controls at the last layer.
    pub controls: Vec<NodeControl>,
    pub warnings: Vec<String>,
    pub stationary: bool,
}

impl Solution {
    pub fn last(&self) -> &GridFunction {
        self.layers.last().expect("at least one layer")
    }

    /// Value of the last layer interpolated at `x`.
    pub fn value_at(&self, mesh: &Mesh, x: &[f64]) -> f64 {
        mesh.interpolate(self.last(), x)
    }

    pub fn total_policy_iterations(&self) -> usize {
        self.stats.iter().map(|s| s.policy_iterations).sum()
    }

    pub fn total_linear_iterations(&self) -> usize {
        self.stats.iter().map(SolveStats::total_linear_iterations).sum()
    }

    pub fn avg_policy_iterations(&self) -> f64 {
        self.total_policy_iterations() as f64 / self.stats.len().max(1) as f64
    }

    pub fn avg_linear_iterations(&self) -> f64 {
        self.total_linear_iterations() as f64 / self.stats.len().max(1) as f64
    }
}

fn sup_f<P: ImpulseProblem + ?Sized>(prob: &P, times: &[f64]) -> f64 {
    let mesh = prob.mesh();
    let ws = prob.controls().elements();
    times
        .iter()
        .flat_map(|&t| (0..mesh.len()).flat_map(move |i| ws.iter().map(move |&w| prob.reward(t, mesh.coords(i), w).abs())))
        .fold(0.0, f64::max)
}

fn check_layer(layer: usize, v: &[f64], bound: Option<f64>, strict: bool, warnings: &mut Vec<String>) -> Result<(), HjbError> {
    if let Some(bound) = bound {
        let norm = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if norm > bound + 1e-8 {
            if strict {
                return Err(HjbError::Stability { layer, norm, bound });
            }
            warnings.push(format!("layer {layer}: |V| = {norm} exceeds stability bound {bound}"));
        }
    }
    Ok(())
}

/// Marches from the terminal layer back to `t = 0`.
pub fn solve_finite_horizon<P: ImpulseProblem + ?Sized>(prob: &P, time: &TimeGrid, cfg: &SchemeConfig) -> Result<Solution, HjbError> {
    if !prob.horizon().is_finite() {
        return Err(HjbError::InvalidProblem("finite-horizon solve of a stationary problem".into()));
    }
    let dt = time.dt();
    cfg.validate(dt)?;
    let mut warnings = Vec::new();
    let (v0, bad) = terminal_layer(prob)?;
    if !bad.is_empty() {
        let msg = format!("M g > g at {} nodes (first {}); V(T) = g is not the implicit terminal condition", bad.len(), bad[0]);
        if cfg.strict {
            return Err(HjbError::InvalidProblem(msg));
        }
        warnings.push(msg);
    }
    let times: Vec<f64> = (0..=time.steps()).map(|n| time.tau(n)).collect();
    let g_sup = v0.sup_norm();
    let bound = prob.stability_bound(sup_f(prob, &times[1..]), g_sup);
    let mut layers = vec![v0];
    let mut stats = Vec::with_capacity(time.steps());
    let mut controls = Vec::new();
    let mut cache = ExplicitCache::default();
    for n in 1..=time.steps() {
        let t = times[n];
        let prev = &layers[n - 1];
        let (v, st) = match cfg.scheme {
            SchemeKind::ExplicitImpulse => {
                let (v, st) = explicit_impulse_step(prob, prev, t, dt, cfg, &mut cache)?;
                if n == time.steps() {
                    controls = explicit_rhs(prob, prev, t, dt, cfg.relaxation)?.1;
                }
                (v, st)
            }
            _ => {
                let step = step_problem(prob, cfg, t, dt, prev)?;
                let (u, st, pol) = solve_step(prob, &step, dt, cfg, prev)?;
                if n == time.steps() {
                    controls = decode_policy(&step, &pol, &u);
                }
                (GridFunction(u), st)
            }
        };
        check_layer(n, &v, bound, cfg.strict, &mut warnings)?;
        layers.push(v);
        stats.push(st);
    }
    Ok(Solution { scheme: cfg.scheme, times, layers, stats, controls, warnings, stationary: false })
}

fn decode_policy(step: &SchemeStep, pol: &Policy, u: &[f64]) -> Vec<NodeControl> {
    pol.0
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut c = step.decode(i, p);
            if c.z.is_none() {
                c.z = step.best_imp(i, u).map(|(k, _)| step.impulses(i)[k].z);
            }
            if c.w.is_nan() {
                c.w = step.w[step.best_cont(i, u).0];
            }
            c
        })
        .collect()
}

/// Single Bellman solve of the stationary scheme.
pub fn solve_infinite_horizon<P: ImpulseProblem + ?Sized>(prob: &P, cfg: &SchemeConfig) -> Result<Solution, HjbError> {
    if !(prob.discount() > 0.0) {
        return Err(HjbError::InvalidProblem(format!("stationary problems need beta > 0, got {}", prob.discount())));
    }
    cfg.validate(1.0)?;
    let step = assemble_stationary(prob, cfg)?;
    let guess = vec![0.0; step.dim()];
    let (u, st, pol) = match step.kind {
        StepKind::Direct => {
            let nw = step.nw();
            let scale = 1.0 / cfg.delta;
            let scaled = bellman::scale_problem(&step, |_, p| if p < nw { 1.0 } else { scale })?;
            let restricted =
                bellman::restrict_controls(scaled, |i, p| p < nw || prob.direct_control_allows(i, step.impulses(i)[p - nw].z))?;
            let (u, st) = bellman::policy_iteration(&restricted, &guess, &cfg.iteration)?;
            let pol = bellman::improve_policy(&restricted, &u)?;
            let orig = Policy(pol.0.iter().enumerate().map(|(i, &p)| restricted.original(i, p)).collect());
            (u, st, orig)
        }
        StepKind::Penalty { .. } => {
            let (u, st) = bellman::policy_iteration(&step, &guess, &cfg.iteration)?;
            let pol = bellman::improve_policy(&step, &u)?;
            (u, st, pol)
        }
    };
    let mut warnings = Vec::new();
    let (g, _) = terminal_layer(prob)?;
    let bound = prob.stability_bound(sup_f(prob, &[0.0]), g.sup_norm());
    check_layer(0, &u, bound, cfg.strict, &mut warnings)?;
    let controls = decode_policy(&step, &pol, &u);
    Ok(Solution { scheme: cfg.scheme, times: vec![0.0], layers: vec![GridFunction(u)], stats: vec![st], controls, warnings, stationary: true })
}

/// Re-runs the row argmax of the scheme at layer `n` of `sol`.
pub fn recover_controls<P: ImpulseProblem + ?Sized>(prob: &P, sol: &Solution, n: usize, cfg: &SchemeConfig) -> Result<Vec<NodeControl>, HjbError> {
    if n >= sol.layers.len() {
        return Err(HjbError::InvalidProblem(format!("layer {n} of {}", sol.layers.len())));
    }
    let u = &sol.layers[n];
    if sol.stationary {
        let step = assemble_stationary(prob, cfg)?;
        return Ok(decode_policy(&step, &bellman::improve_policy(&step, u)?, u));
    }
    let t = sol.times[n];
    if n == 0 {
        let ws = prob.controls().elements();
        return (0..u.len())
            .map(|i| {
                let opts = impulse_options(prob, t, i, cfg.relaxation)?;
                let best = best_impulse(&opts, u);
                Ok(NodeControl { w: ws[0], impulse: best.is_some_and(|(m, _)| m > u[i]), z: best.map(|b| b.1) })
            })
            .collect();
    }
    let dt = sol.times[n - 1] - t;
    let prev = &sol.layers[n - 1];
    match cfg.scheme {
        SchemeKind::ExplicitImpulse => Ok(explicit_rhs(prob, prev, t, dt, cfg.relaxation)?.1),
        SchemeKind::Penalty => {
            let step = step_problem(prob, cfg, t, dt, prev)?;
            Ok(decode_policy(&step, &bellman::improve_policy(&step, u)?, u))
        }
        SchemeKind::DirectControl => {
            let step = step_problem(prob, cfg, t, dt, prev)?;
            let nw = step.nw();
            let scale = 1.0 / (cfg.delta * dt);
            let scaled = bellman::scale_problem(&step, |_, p| if p < nw { 1.0 } else { scale })?;
            let restricted =
                bellman::restrict_controls(scaled, |i, p| p < nw || prob.direct_control_allows(i, step.impulses(i)[p - nw].z))?;
            let pol = bellman::improve_policy(&restricted, u)?;
            let orig = Policy(pol.0.iter().enumerate().map(|(i, &p)| restricted.original(i, p)).collect());
            Ok(decode_policy(&step, &orig, u))
        }
    }
}

/// One exported node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub x: Vec<f64>,
    pub value: f64,
    pub w: f64,
    pub d: u8,
    pub z: Option<f64>,
}

pub fn layer_records(mesh: &Mesh, values: &[f64], controls: &[NodeControl]) -> Vec<NodeRecord> {
    values
        .iter()
        .zip(controls)
        .enumerate()
        .map(|(i, (&value, c))| NodeRecord {
            x: mesh.coords(i)[..mesh.dim()].to_vec(),
            value,
            w: c.w,
            d: c.impulse as u8,
            z: c.z,
        })
        .collect()
}

/// CSV with columns `x0[,x1],value,w,d,z` (`z` blank where no impulse exists).
pub fn write_records_csv<W: Write>(records: &[NodeRecord], dim: usize, out: W) -> Result<(), HjbError> {
    let mut wr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
    header.extend(["value", "w", "d", "z"].map(String::from));
    wr.write_record(&header)?;
    for r in records {
        let mut rec: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
        rec.push(r.value.to_string());
        rec.push(r.w.to_string());
        rec.push(r.d.to_string());
        rec.push(r.z.map(|z| z.to_string()).unwrap_or_default());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Writes a layer as CSV, or JSON when the extension is `.json`.
pub fn export_layer(mesh: &Mesh, values: &[f64], controls: &[NodeControl], path: &Path) -> Result<(), HjbError> {
    if values.is_empty() || values.len() != controls.len() {
        return Err(HjbError::InvalidProblem(format!("{} values but {} controls", values.len(), controls.len())));
    }
    let records = layer_records(mesh, values, controls);
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::to_writer_pretty(file, &records)?;
        Ok(())
    } else {
        write_records_csv(&records, mesh.dim(), file)
    }
}
