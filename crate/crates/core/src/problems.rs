//! Benchmarks: FEX rate control, optimal consumption (finite and infinite
//! horizon), GMWB pricing, and finite Markov decision processes.

use crate::bellman::{BellmanProblem, Row};
use crate::grid::{build_uniform_grid, discretize_interval, DiscreteControlSet, GridError, Mesh, SpaceGrid, TimeGrid};
use crate::hjbqvi::{standard_foot_value, standard_generator, ImpulseProblem};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid MDP: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), ProblemError> {
    if ok {
        Ok(())
    } else {
        Err(ProblemError::InvalidParams(msg()))
    }
}

/// Grid sizes at `h = 1`; level `k` (`h = 2^-k`) multiplies each by `2^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCounts {
    pub steps: usize,
    /// Intervals per space axis.
    pub space: [usize; 2],
    pub w_points: usize,
    pub z_points: usize,
    /// Keep `w_points` fixed across levels.
    #[serde(default)]
    pub fixed_w: bool,
}

impl GridCounts {
    pub fn at_level(&self, level: u32) -> Self {
        let f = 1usize << level;
        Self {
            steps: self.steps * f,
            space: [self.space[0] * f, self.space[1] * f],
            w_points: if self.fixed_w { self.w_points } else { self.w_points * f },
            z_points: self.z_points * f,
            fixed_w: self.fixed_w,
        }
    }
}

/// A built benchmark: the problem, its time grid (if finite) and the probe.
#[derive(Debug, Clone)]
pub struct Benchmark<P> {
    pub problem: P,
    pub time: Option<TimeGrid>,
    pub probe: Vec<f64>,
    pub counts: GridCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FexParams {
    pub w_max: f64,
    pub mu: f64,
    pub sigma: f64,
    pub m: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub c: f64,
    pub beta: f64,
    pub horizon: f64,
    pub radius: f64,
    pub grid: GridCounts,
}

impl Default for FexParams {
    fn default() -> Self {
        Self {
            w_max: 0.07,
            mu: 0.25,
            sigma: 0.3,
            m: 0.0,
            gamma: 3.0,
            kappa: 1.0,
            c: 0.1,
            beta: 0.02,
            horizon: 10.0,
            radius: 2.0,
            grid: GridCounts { steps: 16, space: [32, 0], w_points: 8, z_points: 16, fixed_w: false },
        }
    }
}

impl FexParams {
    pub fn validate(&self) -> Result<(), ProblemError> {
        check(self.c > 0.0, || format!("fixed cost c = {} must be positive", self.c))?;
        check(self.kappa >= 0.0 && self.gamma >= 0.0 && self.beta >= 0.0, || "kappa, gamma, beta must be nonnegative".into())?;
        check(self.w_max >= 0.0 && self.sigma >= 0.0 && self.horizon > 0.0 && self.radius > 0.0, || {
            "w_max, sigma >= 0 and T, R > 0 required".into()
        })?;
        check(self.m.abs() < self.radius, || format!("target m = {} outside [-R, R]", self.m))
    }
}

/// `dX = -mu w dt + sigma dW`, running cost `(x - m)^2 + gamma w^2`,
/// impulses `x -> x + z` at cost `kappa |z| + c`, all discounted at `beta`.
/// Impulses jump to grid nodes.
#[derive(Debug, Clone)]
pub struct Fex {
    pub params: FexParams,
    mesh: Mesh,
    w: DiscreteControlSet,
}

impl Fex {
    pub fn grid(&self) -> &SpaceGrid {
        self.mesh.axis(0)
    }
}

impl ImpulseProblem for Fex {
    fn mesh(&self) -> &Mesh {
        &self.mesh
    }
    fn horizon(&self) -> f64 {
        self.params.horizon
    }
    fn discount(&self) -> f64 {
        self.params.beta
    }
    fn controls(&self) -> &DiscreteControlSet {
        &self.w
    }
    fn drift(&self, _t: f64, _x: [f64; 2], w: f64) -> [f64; 2] {
        [-self.params.mu * w, 0.0]
    }
    fn volatility(&self, _t: f64, _x: [f64; 2], _w: f64) -> [f64; 2] {
        [self.params.sigma, 0.0]
    }
    fn reward(&self, t: f64, x: [f64; 2], w: f64) -> f64 {
        let p = &self.params;
        -(-p.beta * t).exp() * ((x[0] - p.m).powi(2) + p.gamma * w * w)
    }
    fn terminal(&self, _x: [f64; 2]) -> f64 {
        0.0
    }
    fn impulse_controls(&self, _t: f64, node: usize) -> Vec<f64> {
        let x = self.grid().points();
        x.iter().map(|xj| xj - x[node]).collect()
    }
    fn destination(&self, _t: f64, x: [f64; 2], z: f64) -> [f64; 2] {
        [x[0] + z, 0.0]
    }
    fn cost(&self, t: f64, _x: [f64; 2], z: f64) -> f64 {
        let p = &self.params;
        -(-p.beta * t).exp() * (p.kappa * z.abs() + p.c)
    }
    /// Impulses move strictly towards `m` without passing it; none from `m`
    /// itself. Overshooting would allow two-node cycles of impulse rows,
    /// which make the policy matrix singular.
    fn direct_control_allows(&self, node: usize, z: f64) -> bool {
        let x = self.grid().points()[node];
        let m = self.params.m;
        (x < m && z > 0.0 && x + z <= m) || (x > m && z < 0.0 && x + z >= m)
    }
}

pub fn build_fex(params: &FexParams, level: u32) -> Result<Benchmark<Fex>, ProblemError> {
    params.validate()?;
    let counts = params.grid.at_level(level);
    let grid = build_uniform_grid(params.radius, counts.space[0])?;
    let w = discretize_interval(-params.w_max, params.w_max, counts.w_points)?;
    Ok(Benchmark {
        problem: Fex { params: params.clone(), mesh: Mesh::line(grid), w },
        time: Some(TimeGrid::new(params.horizon, counts.steps)?),
        probe: vec![params.m],
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsumptionParams {
    pub w_max: f64,
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
    pub kappa: f64,
    pub c: f64,
    pub gamma: f64,
    pub beta: f64,
    pub horizon: f64,
    pub s0: f64,
    pub q0: f64,
    pub r_s: f64,
    pub r_q: f64,
    pub grid: GridCounts,
}

impl Default for ConsumptionParams {
    fn default() -> Self {
        Self {
            w_max: 100.0,
            mu: 0.11,
            sigma: 0.3,
            r: 0.07,
            kappa: 0.1,
            c: 0.05,
            gamma: 0.3,
            beta: 0.1,
            horizon: 40.0,
            s0: 45.2,
            q0: 45.2,
            r_s: 200.0,
            r_q: 200.0,
            grid: GridCounts { steps: 32, space: [20, 20], w_points: 15, z_points: 15, fixed_w: false },
        }
    }
}

impl ConsumptionParams {
    pub fn validate(&self) -> Result<(), ProblemError> {
        check(self.gamma > 0.0 && self.gamma <= 1.0, || format!("gamma = {} not in (0, 1]", self.gamma))?;
        check(self.c > 0.0 && (0.0..=1.0).contains(&self.kappa), || "need c > 0 and 0 <= kappa <= 1".into())?;
        check(self.w_max >= 0.0 && self.sigma >= 0.0 && self.beta >= 0.0, || "w_max, sigma, beta must be nonnegative".into())?;
        check(self.r_s > 0.0 && self.r_q > 0.0, || "truncation bounds must be positive".into())?;
        check((0.0..=self.r_s).contains(&self.s0) && (0.0..=self.r_q).contains(&self.q0), || "probe outside the domain".into())
    }

    /// `Z_R(s, q)` as an interval, or `None` when empty.
    pub fn feasible_impulses(&self, s: f64, q: f64) -> Option<(f64, f64)> {
        // phi(z) = q - c - z - kappa |z| is decreasing; solve phi = level
        let inv = |level: f64| {
            let y = q - self.c - level;
            if y >= 0.0 {
                y / (1.0 + self.kappa)
            } else {
                y / (1.0 - self.kappa)
            }
        };
        let lo = (-s).max(inv(self.r_q));
        let hi = (self.r_s - s).min(inv(0.0));
        (lo <= hi).then_some((lo, hi))
    }
}

/// Investor with a risky asset `s` and a bank account `q`, consuming at rate
/// `w` from `q` and rebalancing by impulses.
#[derive(Debug, Clone)]
pub struct Consumption {
    pub params: ConsumptionParams,
    mesh: Mesh,
    w: DiscreteControlSet,
    z_points: usize,
    stationary: bool,
}

impl ImpulseProblem for Consumption {
    fn mesh(&self) -> &Mesh {
        &self.mesh
    }
    fn horizon(&self) -> f64 {
        if self.stationary {
            f64::INFINITY
        } else {
            self.params.horizon
        }
    }
    fn discount(&self) -> f64 {
        self.params.beta
    }
    fn controls(&self) -> &DiscreteControlSet {
        &self.w
    }
    fn drift(&self, _t: f64, x: [f64; 2], w: f64) -> [f64; 2] {
        let p = &self.params;
        let consume = if x[1] > 0.0 { w } else { 0.0 };
        [p.mu * x[0], p.r * x[1] - consume]
    }
    fn volatility(&self, _t: f64, x: [f64; 2], _w: f64) -> [f64; 2] {
        [self.params.sigma * x[0], 0.0]
    }
    fn reward(&self, t: f64, x: [f64; 2], w: f64) -> f64 {
        let p = &self.params;
        if x[1] > 0.0 {
            (-p.beta * t).exp() * w.powf(p.gamma) / p.gamma
        } else {
            0.0
        }
    }
    fn terminal(&self, x: [f64; 2]) -> f64 {
        let p = &self.params;
        (-p.beta * p.horizon).exp() * (x[1] + (1.0 - p.kappa) * x[0] - p.c).max(0.0).powf(p.gamma) / p.gamma
    }
    fn impulse_controls(&self, _t: f64, node: usize) -> Vec<f64> {
        let x = self.mesh.coords(node);
        match self.params.feasible_impulses(x[0], x[1]) {
            Some((lo, hi)) => discretize_interval(lo, hi, self.z_points).map(|d| d.elements().to_vec()).unwrap_or_default(),
            None => Vec::new(),
        }
    }
    fn destination(&self, _t: f64, x: [f64; 2], z: f64) -> [f64; 2] {
        let p = &self.params;
        let s = (x[0] + z).clamp(0.0, p.r_s);
        let q = (x[1] - z - p.kappa * z.abs() - p.c).clamp(0.0, p.r_q);
        [s, q]
    }
    fn cost(&self, _t: f64, _x: [f64; 2], _z: f64) -> f64 {
        0.0
    }
    fn generator(&self, t: f64, node: usize, w: f64, row: &mut Row) {
        standard_generator(self, t, node, w, [false, true], row)
    }
    fn explicit_continuation(&self, t: f64, node: usize, w: f64, dt: f64, v_prev: &[f64]) -> f64 {
        standard_foot_value(self, t, node, w, dt, [false, true], v_prev)
    }
}

fn consumption(params: &ConsumptionParams, level: u32, stationary: bool) -> Result<Benchmark<Consumption>, ProblemError> {
    params.validate()?;
    let counts = params.grid.at_level(level);
    let mesh = Mesh::plane(
        SpaceGrid::linspace(0.0, params.r_s, counts.space[0] + 1)?,
        SpaceGrid::linspace(0.0, params.r_q, counts.space[1] + 1)?,
    );
    let w = discretize_interval(0.0, params.w_max, counts.w_points)?;
    let time = if stationary { None } else { Some(TimeGrid::new(params.horizon, counts.steps)?) };
    Ok(Benchmark {
        problem: Consumption { params: params.clone(), mesh, w, z_points: counts.z_points, stationary },
        time,
        probe: vec![params.s0, params.q0],
        counts,
    })
}

pub fn build_consumption(params: &ConsumptionParams, level: u32) -> Result<Benchmark<Consumption>, ProblemError> {
    consumption(params, level, false)
}

/// The same problem with `T = infinity`; the reward is `w^gamma / gamma`.
pub fn build_infinite_consumption(params: &ConsumptionParams, level: u32) -> Result<Benchmark<Consumption>, ProblemError> {
    check(params.beta > 0.0, || format!("stationary problem needs beta > 0, got {}", params.beta))?;
    consumption(params, level, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmwbParams {
    pub w_max: f64,
    pub r: f64,
    pub eta: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub c: f64,
    pub horizon: f64,
    pub r_s: f64,
    pub r_q: f64,
    pub s0: f64,
    pub q0: f64,
    pub grid: GridCounts,
}

impl Default for GmwbParams {
    fn default() -> Self {
        Self {
            w_max: 10.0,
            r: 0.05,
            eta: 0.0,
            sigma: 0.3,
            kappa: 0.1,
            c: 1e-6,
            horizon: 10.0,
            r_s: 1000.0,
            r_q: 100.0,
            s0: 100.0,
            q0: 100.0,
            grid: GridCounts { steps: 32, space: [64, 50], w_points: 2, z_points: 2, fixed_w: true },
        }
    }
}

impl GmwbParams {
    pub fn validate(&self) -> Result<(), ProblemError> {
        check(self.eta <= self.r, || format!("fee eta = {} exceeds r = {}", self.eta, self.r))?;
        check(self.c > 0.0 && (0.0..=1.0).contains(&self.kappa), || "need c > 0 and 0 <= kappa <= 1".into())?;
        check(self.w_max >= 0.0 && self.sigma >= 0.0 && self.horizon > 0.0, || "w_max, sigma >= 0, T > 0 required".into())?;
        check(self.r_s > 0.0 && self.r_q > 0.0, || "truncation bounds must be positive".into())?;
        check(self.grid.w_points >= 1, || "need at least one withdrawal rate".into())
    }
}

/// Variable annuity with a withdrawal guarantee: risky account `s`,
/// guarantee account `q`, continuous withdrawals at rate `w` and lump-sum
/// withdrawals `z` with a penalty.
#[derive(Debug, Clone)]
pub struct Gmwb {
    pub params: GmwbParams,
    mesh: Mesh,
    w: DiscreteControlSet,
    z_points: usize,
}

impl Gmwb {
    fn s_drift(&self, x: [f64; 2], w: f64) -> f64 {
        let withdraw = if x[0] > 0.0 && x[1] > 0.0 { w } else { 0.0 };
        (self.params.r - self.params.eta) * x[0] - withdraw
    }

    fn at_s_edge(&self, node: usize) -> bool {
        self.mesh.unflatten(node)[0] == self.mesh.axis(0).last()
    }
}

impl ImpulseProblem for Gmwb {
    fn mesh(&self) -> &Mesh {
        &self.mesh
    }
    fn horizon(&self) -> f64 {
        self.params.horizon
    }
    fn discount(&self) -> f64 {
        self.params.r
    }
    fn controls(&self) -> &DiscreteControlSet {
        &self.w
    }
    fn drift(&self, _t: f64, x: [f64; 2], w: f64) -> [f64; 2] {
        [self.s_drift(x, w), if x[1] > 0.0 { -w } else { 0.0 }]
    }
    fn volatility(&self, _t: f64, x: [f64; 2], _w: f64) -> [f64; 2] {
        [self.params.sigma * x[0], 0.0]
    }
    fn reward(&self, t: f64, x: [f64; 2], w: f64) -> f64 {
        if x[1] > 0.0 {
            (-self.params.r * t).exp() * w
        } else {
            0.0
        }
    }
    fn terminal(&self, x: [f64; 2]) -> f64 {
        let p = &self.params;
        (-p.r * p.horizon).exp() * x[0].max((1.0 - p.kappa) * x[1] - p.c)
    }
    fn impulse_controls(&self, _t: f64, node: usize) -> Vec<f64> {
        let q = self.mesh.coords(node)[1];
        discretize_interval(0.0, q, self.z_points).map(|d| d.elements().to_vec()).unwrap_or_default()
    }
    fn destination(&self, _t: f64, x: [f64; 2], z: f64) -> [f64; 2] {
        [(x[0] - z).max(0.0), x[1] - z]
    }
    fn cost(&self, t: f64, _x: [f64; 2], z: f64) -> f64 {
        let p = &self.params;
        (-p.r * t).exp() * ((1.0 - p.kappa) * z - p.c)
    }
    fn direct_control_allows(&self, _node: usize, z: f64) -> bool {
        z > 0.0
    }
    /// Outgoing upwind drift at `q = R_q`; `V ~ A(q) s` at `s = R_s`.
    fn generator(&self, t: f64, node: usize, w: f64, row: &mut Row) {
        if self.at_s_edge(node) {
            let x = self.mesh.coords(node);
            row.push((node, self.s_drift(x, w) / x[0]));
        }
        standard_generator(self, t, node, w, [false, true], row);
    }
    fn explicit_continuation(&self, t: f64, node: usize, w: f64, dt: f64, v_prev: &[f64]) -> f64 {
        let v = standard_foot_value(self, t, node, w, dt, [false, true], v_prev);
        if self.at_s_edge(node) {
            let x = self.mesh.coords(node);
            v * (1.0 + self.s_drift(x, w) * dt / x[0])
        } else {
            v
        }
    }
    fn stability_bound(&self, _f_sup: f64, _g_sup: f64) -> Option<f64> {
        // the account value itself is not discounted along paths, so bound by R_s
        let p = &self.params;
        Some(p.r_s + p.w_max * p.horizon + p.r_q)
    }
}

pub fn build_gmwb(params: &GmwbParams, level: u32) -> Result<Benchmark<Gmwb>, ProblemError> {
    params.validate()?;
    let counts = params.grid.at_level(level);
    let mesh = Mesh::plane(
        SpaceGrid::linspace(0.0, params.r_s, counts.space[0] + 1)?,
        SpaceGrid::linspace(0.0, params.r_q, counts.space[1] + 1)?,
    );
    let w = if counts.w_points == 2 {
        DiscreteControlSet::new(vec![0.0, params.w_max])?
    } else {
        discretize_interval(0.0, params.w_max, counts.w_points)?
    };
    Ok(Benchmark {
        problem: Gmwb { params: params.clone(), mesh, w, z_points: counts.z_points },
        time: Some(TimeGrid::new(params.horizon, counts.steps)?),
        probe: vec![params.s0, params.q0],
        counts,
    })
}

/// Finite MDP: `transition[i][p][j]`, `reward[i][p]`, `discount[i][p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub discount: Vec<Vec<f64>>,
}

impl MdpSpec {
    pub fn states(&self) -> usize {
        self.transition.len()
    }

    /// Random MDP with `controls` actions per state and discounts in
    /// `[0, max_discount]`.
    pub fn random<R: Rng + ?Sized>(states: usize, controls: usize, max_discount: f64, rng: &mut R) -> Self {
        let mut transition = Vec::with_capacity(states);
        let mut reward = Vec::with_capacity(states);
        let mut discount = Vec::with_capacity(states);
        for _ in 0..states {
            let mut ts = Vec::with_capacity(controls);
            for _ in 0..controls {
                let raw: Vec<f64> = (0..states).map(|_| rng.gen::<f64>()).collect();
                let sum: f64 = raw.iter().sum();
                ts.push(raw.into_iter().map(|v| v / sum).collect());
            }
            transition.push(ts);
            reward.push((0..controls).map(|_| rng.gen_range(-1.0..1.0)).collect());
            discount.push((0..controls).map(|_| rng.gen_range(0.0..=max_discount)).collect());
        }
        Self { transition, reward, discount }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let n = self.states();
        if n == 0 || self.reward.len() != n || self.discount.len() != n {
            return Err(ProblemError::InvalidSpec("state counts disagree".into()));
        }
        for i in 0..n {
            let k = self.transition[i].len();
            if k == 0 || self.reward[i].len() != k || self.discount[i].len() != k {
                return Err(ProblemError::InvalidSpec(format!("state {i}: control counts disagree or are zero")));
            }
            for p in 0..k {
                let row = &self.transition[i][p];
                if row.len() != n || row.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(ProblemError::InvalidSpec(format!("state {i}, control {p}: bad transition row")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(ProblemError::InvalidSpec(format!("state {i}, control {p}: row sums to {sum}")));
                }
                if !(0.0..=1.0).contains(&self.discount[i][p]) {
                    return Err(ProblemError::InvalidSpec(format!("state {i}, control {p}: discount outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

/// Bellman form of an MDP: `A_ij = delta_ij - T(i, j, p) D(i, p)`,
/// `y_i = R(i, p)`.
#[derive(Debug, Clone)]
pub struct Mdp {
    spec: MdpSpec,
}

impl Mdp {
    pub fn spec(&self) -> &MdpSpec {
        &self.spec
    }
}

pub fn build_mdp(spec: MdpSpec) -> Result<Mdp, ProblemError> {
    spec.validate()?;
    Ok(Mdp { spec })
}

impl BellmanProblem for Mdp {
    fn dim(&self) -> usize {
        self.spec.states()
    }
    fn control_count(&self, i: usize) -> usize {
        self.spec.transition[i].len()
    }
    fn row(&self, i: usize, p: usize, row: &mut Row) -> f64 {
        let d = self.spec.discount[i][p];
        for (j, t) in self.spec.transition[i][p].iter().enumerate() {
            let v = if i == j { 1.0 - t * d } else { -t * d };
            if v != 0.0 {
                row.push((j, v));
            }
        }
        self.spec.reward[i][p]
    }
}
