//! Space and time grids, monotone linear interpolation, finite-difference
//! stencils and discretized control sets.

use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GridError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index {index} out of range for grid with {len} points")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Strictly increasing set of nodes along one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    points: Vec<f64>,
    #[serde(skip)]
    uniform: bool,
}

impl SpaceGrid {
    pub fn new(points: Vec<f64>) -> Result<Self, GridError> {
        if points.len() < 2 {
            return Err(GridError::InvalidArgument("a grid needs at least 2 points".into()));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(GridError::InvalidArgument("grid points must be finite".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GridError::InvalidArgument("grid points must be strictly increasing".into()));
        }
        let dx = (points[points.len() - 1] - points[0]) / (points.len() - 1) as f64;
        let uniform = points
            .windows(2)
            .all(|w| (w[1] - w[0] - dx).abs() <= 1e-12 * dx);
        Ok(Self { points, uniform })
    }

    /// `n` equally spaced nodes on `[lo, hi]`.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Self, GridError> {
        if n < 2 || hi <= lo {
            return Err(GridError::InvalidArgument(format!("cannot build {n} nodes on [{lo}, {hi}]")));
        }
        let dx = (hi - lo) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|i| lo + i as f64 * dx).collect();
        points[n - 1] = hi;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the last node, `M`.
    pub fn last(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Spacing of a uniform grid.
    pub fn dx(&self) -> Option<f64> {
        self.uniform
            .then(|| (self.points[self.last()] - self.points[0]) / self.last() as f64)
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        self.points[self.last()]
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        i == 0 || i == self.last()
    }

    fn check(&self, i: usize) -> Result<(), GridError> {
        if i >= self.points.len() {
            return Err(GridError::IndexOutOfRange { index: i, len: self.points.len() });
        }
        Ok(())
    }

    /// Cell `k` and weight `alpha` with `x_k <= x < x_{k+1}` and
    /// `x = (1 - alpha) x_k + alpha x_{k+1}`. Queries outside the grid clamp.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let m = self.last();
        if x <= self.points[0] {
            return (0, 0.0);
        }
        if x >= self.points[m] {
            return (m, 0.0);
        }
        // first index with point > x, minus one
        let k = self.points.partition_point(|&p| p <= x) - 1;
        let alpha = (x - self.points[k]) / (self.points[k + 1] - self.points[k]);
        (k, alpha)
    }

    /// Interpolation stencil: at most two `(node, weight)` pairs with
    /// nonnegative weights summing to one.
    pub fn weights(&self, x: f64) -> Stencil1 {
        let (k, alpha) = self.locate(x);
        if alpha == 0.0 {
            Stencil1 { nodes: [(k, 1.0), (k, 0.0)], len: 1 }
        } else {
            Stencil1 { nodes: [(k, 1.0 - alpha), (k + 1, alpha)], len: 2 }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Stencil1 {
    nodes: [(usize, f64); 2],
    len: usize,
}

impl Stencil1 {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes[..self.len].iter().copied()
    }
}

/// Uniform grid on `[-R, R]` with `M + 1` nodes, `x_{M/2} = 0`.
pub fn build_uniform_grid(radius: f64, m: usize) -> Result<SpaceGrid, GridError> {
    if !(radius > 0.0) {
        return Err(GridError::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    if m == 0 || !m.is_multiple_of(2) {
        return Err(GridError::InvalidArgument(format!("M must be even and positive, got {m}")));
    }
    let dx = 2.0 * radius / m as f64;
    let half = (m / 2) as f64;
    let points = (0..=m).map(|i| (i as f64 - half) * dx).collect();
    SpaceGrid::new(points)
}

/// Grid on `[-R, R]` whose first and last gaps equal `boundary_gap` and whose
/// interior is uniform.
pub fn build_boundary_refined_grid(radius: f64, m: usize, boundary_gap: f64) -> Result<SpaceGrid, GridError> {
    if !(radius > 0.0) || m < 4 {
        return Err(GridError::InvalidArgument(format!("need R > 0 and M >= 4, got R={radius}, M={m}")));
    }
    if !(boundary_gap > 0.0 && boundary_gap < radius) {
        return Err(GridError::InvalidArgument(format!("boundary gap {boundary_gap} not in (0, {radius})")));
    }
    let inner = (2.0 * radius - 2.0 * boundary_gap) / (m - 2) as f64;
    let mut points = Vec::with_capacity(m + 1);
    points.push(-radius);
    let start = -radius + boundary_gap;
    for k in 0..=(m - 2) {
        points.push(start + k as f64 * inner);
    }
    points.push(radius);
    // pin the inner endpoint exactly so the last gap equals the first
    points[m - 1] = radius - boundary_gap;
    SpaceGrid::new(points)
}

/// Backward time levels `tau^n = T - n dt`, `n = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, GridError> {
        if !(horizon >= 0.0) || !horizon.is_finite() || steps == 0 {
            return Err(GridError::InvalidArgument(format!("bad time grid T={horizon}, N={steps}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn tau(&self, n: usize) -> f64 {
        if n >= self.steps {
            0.0
        } else {
            self.horizon - n as f64 * self.dt()
        }
    }
}

/// Values on the nodes of a mesh, flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction(pub Vec<f64>);

impl GridFunction {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Deref for GridFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GridFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for GridFunction {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Tensor product of one or two axes. The last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    axes: Vec<SpaceGrid>,
}

impl Mesh {
    pub fn new(axes: Vec<SpaceGrid>) -> Result<Self, GridError> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(GridError::InvalidArgument(format!("meshes have 1 or 2 axes, got {}", axes.len())));
        }
        Ok(Self { axes })
    }

    pub fn line(axis: SpaceGrid) -> Self {
        Self { axes: vec![axis] }
    }

    pub fn plane(first: SpaceGrid, second: SpaceGrid) -> Self {
        Self { axes: vec![first, second] }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &SpaceGrid {
        &self.axes[k]
    }

    pub fn axes(&self) -> &[SpaceGrid] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(SpaceGrid::len).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stride of axis `k` in the flattened layout.
    pub fn stride(&self, k: usize) -> usize {
        self.axes[k + 1..].iter().map(SpaceGrid::len).product()
    }

    /// Per-axis indices of flat node `node`.
    pub fn unflatten(&self, node: usize) -> [usize; 2] {
        match self.axes.len() {
            1 => [node, 0],
            _ => {
                let n1 = self.axes[1].len();
                [node / n1, node % n1]
            }
        }
    }

    pub fn flatten(&self, idx: [usize; 2]) -> usize {
        match self.axes.len() {
            1 => idx[0],
            _ => idx[0] * self.axes[1].len() + idx[1],
        }
    }

    /// Coordinates of flat node `node` (unused trailing entries are 0).
    pub fn coords(&self, node: usize) -> [f64; 2] {
        let idx = self.unflatten(node);
        let mut x = [0.0; 2];
        for (k, axis) in self.axes.iter().enumerate() {
            x[k] = axis.points()[idx[k]];
        }
        x
    }

    /// Multilinear interpolation stencil at `x` (clamped per axis).
    pub fn weights(&self, x: &[f64]) -> Stencil {
        let mut st = Stencil::default();
        match self.axes.len() {
            1 => {
                for (k, w) in self.axes[0].weights(x[0]).iter() {
                    st.push(k, w);
                }
            }
            _ => {
                let n1 = self.axes[1].len();
                let a = self.axes[0].weights(x[0]);
                let b = self.axes[1].weights(x[1]);
                for (i, wi) in a.iter() {
                    for (j, wj) in b.iter() {
                        st.push(i * n1 + j, wi * wj);
                    }
                }
            }
        }
        st
    }

    pub fn interpolate(&self, u: &[f64], x: &[f64]) -> f64 {
        self.weights(x).iter().map(|(k, w)| w * u[k]).sum()
    }
}

/// Up to four `(node, weight)` pairs of a multilinear interpolant.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stencil {
    nodes: [(usize, f64); 4],
    len: usize,
}

impl Stencil {
    fn push(&mut self, node: usize, w: f64) {
        if w != 0.0 {
            self.nodes[self.len] = (node, w);
            self.len += 1;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes[..self.len].iter().copied()
    }

    pub fn apply(&self, u: &[f64]) -> f64 {
        self.iter().map(|(k, w)| w * u[k]).sum()
    }
}

/// Coefficients `(c_minus, c_centre, c_plus)` of the second difference at an
/// interior node; zero at the boundary.
pub fn second_difference_coeffs(g: &SpaceGrid, i: usize) -> (f64, f64, f64) {
    if g.is_boundary(i) {
        return (0.0, 0.0, 0.0);
    }
    let x = g.points();
    let dp = x[i + 1] - x[i];
    let dm = x[i] - x[i - 1];
    let s = dp + dm;
    let cp = 2.0 / (dp * s);
    let cm = 2.0 / (dm * s);
    (cm, -(cp + cm), cp)
}

/// `(D_2 U)_i`, zero at boundary nodes.
pub fn second_difference(u: &[f64], g: &SpaceGrid, i: usize) -> Result<f64, GridError> {
    g.check(i)?;
    if g.is_boundary(i) {
        return Ok(0.0);
    }
    let (cm, cc, cp) = second_difference_coeffs(g, i);
    Ok(cm * u[i - 1] + cc * u[i] + cp * u[i + 1])
}

/// Coefficients `(c_minus, c_centre, c_plus)` of `coeff * (D U)_i` with
/// upwinding; zero at the boundary or when `coeff == 0`.
pub fn upwind_coeffs(g: &SpaceGrid, i: usize, coeff: f64) -> (f64, f64, f64) {
    if g.is_boundary(i) || coeff == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let x = g.points();
    if coeff > 0.0 {
        let c = coeff / (x[i + 1] - x[i]);
        (0.0, -c, c)
    } else {
        let c = coeff / (x[i] - x[i - 1]);
        (-c, c, 0.0)
    }
}

/// `coeff * (D_+ U)_i` if `coeff > 0`, else `coeff * (D_- U)_i`.
pub fn first_difference_upwind(u: &[f64], g: &SpaceGrid, i: usize, coeff: f64) -> Result<f64, GridError> {
    g.check(i)?;
    if g.is_boundary(i) || coeff == 0.0 {
        return Ok(0.0);
    }
    let (cm, cc, cp) = upwind_coeffs(g, i, coeff);
    Ok(cm * u[i - 1] + cc * u[i] + cp * u[i + 1])
}

/// Monotone linear interpolation; clamps outside `[x_0, x_M]`.
pub fn interpolate(u: &[f64], g: &SpaceGrid, x: f64) -> f64 {
    g.weights(x).iter().map(|(k, w)| w * u[k]).sum()
}

/// A finite, nonempty set of scalar controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteControlSet {
    elements: Vec<f64>,
}

impl DiscreteControlSet {
    pub fn new(elements: Vec<f64>) -> Result<Self, GridError> {
        if elements.is_empty() {
            return Err(GridError::InvalidArgument("control set is empty".into()));
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[f64] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// `n` equally spaced points of `[lo, hi]` including both endpoints.
pub fn discretize_interval(lo: f64, hi: f64, n: usize) -> Result<DiscreteControlSet, GridError> {
    if lo > hi {
        return Err(GridError::InvalidArgument(format!("empty interval [{lo}, {hi}]")));
    }
    if n == 0 {
        return Err(GridError::InvalidArgument("need at least one point".into()));
    }
    if n == 1 || lo == hi {
        return DiscreteControlSet::new(vec![0.5 * (lo + hi)]);
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|k| lo + k as f64 * step).collect();
    v[n - 1] = hi;
    DiscreteControlSet::new(v)
}

/// Either a closed interval or a finite set.
#[derive(Debug, Clone, Copy)]
pub enum ControlRegion<'a> {
    Interval(f64, f64),
    Finite(&'a [f64]),
}

fn dist_to(region: ControlRegion<'_>, y: f64) -> f64 {
    match region {
        ControlRegion::Interval(lo, hi) => (lo - y).max(y - hi).max(0.0),
        ControlRegion::Finite(pts) => pts.iter().map(|p| (p - y).abs()).fold(f64::INFINITY, f64::min),
    }
}

/// Hausdorff distance between a finite set and an interval or finite set.
pub fn hausdorff_distance(a: &DiscreteControlSet, b: ControlRegion<'_>) -> Result<f64, GridError> {
    let a_pts = a.elements();
    if a_pts.is_empty() {
        return Err(GridError::InvalidArgument("empty set".into()));
    }
    let from_a = a_pts.iter().map(|&x| dist_to(b, x)).fold(0.0, f64::max);
    let from_b = match b {
        ControlRegion::Finite(pts) => {
            if pts.is_empty() {
                return Err(GridError::InvalidArgument("empty set".into()));
            }
            pts.iter().map(|&y| dist_to(ControlRegion::Finite(a_pts), y)).fold(0.0, f64::max)
        }
        ControlRegion::Interval(lo, hi) => {
            if lo > hi {
                return Err(GridError::InvalidArgument("empty interval".into()));
            }
            // sup over the interval is attained at an endpoint or at a midpoint
            // between consecutive sorted elements
            let mut sorted: Vec<f64> = a_pts.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mut cands = vec![lo, hi];
            cands.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).filter(|m| *m >= lo && *m <= hi));
            cands.into_iter().map(|y| dist_to(ControlRegion::Finite(&sorted), y)).fold(0.0, f64::max)
        }
    };
    Ok(from_a.max(from_b))
}
