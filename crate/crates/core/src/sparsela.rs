//! Compressed-row matrices, diagonal dominance and weak chaining, and the
//! linear solvers used by the schemes.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("matrix is not tridiagonal (row {0})")]
    NotTridiagonal(usize),
    #[error("zero pivot at row {0}")]
    ZeroPivot(usize),
    #[error("dimension mismatch: matrix is {n}x{n}, vector has {len} entries")]
    Dimension { n: usize, len: usize },
    #[error("BiCGSTAB breakdown after {iterations} iterations (relative residual {residual:e})")]
    Breakdown { iterations: usize, residual: f64, best: Vec<f64> },
    #[error("BiCGSTAB did not reach tolerance in {iterations} iterations (relative residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64, best: Vec<f64> },
    #[error("malformed matrix text: {0}")]
    Parse(String),
}

/// Square matrix in compressed-row form. Column indices are sorted and unique
/// within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Row-by-row construction of a [`SparseMatrix`]; duplicate columns are
/// summed.
#[derive(Debug, Clone)]
pub struct CsrBuilder {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrBuilder {
    pub fn new(n: usize) -> Self {
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        Self { n, offsets, cols: Vec::new(), vals: Vec::new() }
    }

    /// Appends the next row. `entries` is sorted in place.
    pub fn push_row(&mut self, entries: &mut [(usize, f64)]) {
        entries.sort_unstable_by_key(|e| e.0);
        let start = self.cols.len();
        for &(j, v) in entries.iter() {
            assert!(j < self.n, "column {j} out of range");
            if self.cols.len() > start && *self.cols.last().unwrap() == j {
                *self.vals.last_mut().unwrap() += v;
            } else {
                self.cols.push(j);
                self.vals.push(v);
            }
        }
        self.offsets.push(self.cols.len());
    }

    pub fn finish(self) -> SparseMatrix {
        assert_eq!(self.offsets.len(), self.n + 1, "expected {} rows", self.n);
        SparseMatrix { n: self.n, offsets: self.offsets, cols: self.cols, vals: self.vals }
    }
}

impl SparseMatrix {
    pub fn from_triplets(n: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in triplets {
            rows[i].push((j, v));
        }
        let mut b = CsrBuilder::new(n);
        for r in rows.iter_mut() {
            b.push_row(r);
        }
        b.finish()
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        Self::from_triplets(
            n,
            rows.iter().enumerate().flat_map(|(i, r)| {
                r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, v)| (i, j, *v))
            }),
        )
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map(|k| v[k]).unwrap_or(0.0)
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(j, a)| a * x[*j]).sum();
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                row[*j] = *a;
            }
        }
        d
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Coordinate text: a header line `n nnz` followed by `i j value` lines,
    /// 0-based.
    pub fn to_triplet_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.nnz());
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                writeln!(s, "{i} {j} {a:e}").unwrap();
            }
        }
        s
    }

    pub fn from_triplet_text(text: &str) -> Result<Self, SolverError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('%'));
        let header = lines.next().ok_or_else(|| SolverError::Parse("missing header".into()))?;
        let mut h = header.split_whitespace().map(str::parse::<usize>);
        let (n, nnz) = match (h.next(), h.next()) {
            (Some(Ok(n)), Some(Ok(nnz))) => (n, nnz),
            _ => return Err(SolverError::Parse(format!("bad header {header:?}"))),
        };
        let mut trips = Vec::with_capacity(nnz);
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(SolverError::Parse(format!("bad entry {line:?}")));
            }
            let parse_idx = |s: &str| s.parse::<usize>().map_err(|e| SolverError::Parse(e.to_string()));
            let i = parse_idx(f[0])?;
            let j = parse_idx(f[1])?;
            let v = f[2].parse::<f64>().map_err(|e| SolverError::Parse(e.to_string()))?;
            if i >= n || j >= n {
                return Err(SolverError::Parse(format!("entry ({i}, {j}) outside {n}x{n}")));
            }
            trips.push((i, j, v));
        }
        if trips.len() != nnz {
            return Err(SolverError::Parse(format!("expected {nnz} entries, found {}", trips.len())));
        }
        Ok(Self::from_triplets(n, trips))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowClass {
    Sdd,
    WddNotSdd,
    NotWdd,
}

fn row_class(a: &SparseMatrix, i: usize) -> RowClass {
    let (c, v) = a.row(i);
    let mut d = 0.0;
    let mut off = 0.0;
    for (j, x) in c.iter().zip(v) {
        if *j == i {
            d = x.abs();
        } else {
            off += x.abs();
        }
    }
    // rows assembled from probabilities or interpolation weights only cancel
    // up to rounding
    let tol = 1e-12 * (d + off);
    if d - off > tol {
        RowClass::Sdd
    } else if d - off >= -tol {
        RowClass::WddNotSdd
    } else {
        RowClass::NotWdd
    }
}

pub fn classify_rows(a: &SparseMatrix) -> Vec<RowClass> {
    (0..a.dim()).map(|i| row_class(a, i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDiagnosis {
    pub is_z: bool,
    pub nonneg_diag: bool,
    pub is_wdd: bool,
    pub is_sdd: bool,
    pub is_wcdd: bool,
    pub sdd_rows: Vec<usize>,
    /// Rows with no walk to an SDD row.
    pub unreachable_rows: Vec<usize>,
}

/// Weak chained diagonal dominance via one reverse breadth-first search
/// from the SDD rows over the graph with edges `i -> j` iff `a_ij != 0`.
pub fn is_wcdd(a: &SparseMatrix) -> MatrixDiagnosis {
    let n = a.dim();
    let classes = classify_rows(a);
    let is_wdd = classes.iter().all(|c| *c != RowClass::NotWdd);
    let sdd_rows: Vec<usize> = (0..n).filter(|&i| classes[i] == RowClass::Sdd).collect();
    let mut is_z = true;
    let mut nonneg_diag = true;
    // reverse adjacency: j -> list of i with a_ij != 0
    let mut rev_off = vec![0usize; n + 1];
    for i in 0..n {
        let (c, v) = a.row(i);
        for (j, x) in c.iter().zip(v) {
            if *j == i {
                nonneg_diag &= *x >= 0.0;
            } else if *x != 0.0 {
                is_z &= *x < 0.0;
                rev_off[*j + 1] += 1;
            }
        }
    }
    for j in 0..n {
        rev_off[j + 1] += rev_off[j];
    }
    let mut fill = rev_off.clone();
    let mut rev = vec![0usize; rev_off[n]];
    for i in 0..n {
        let (c, v) = a.row(i);
        for (j, x) in c.iter().zip(v) {
            if *j != i && *x != 0.0 {
                rev[fill[*j]] = i;
                fill[*j] += 1;
            }
        }
    }
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = sdd_rows.iter().copied().collect();
    for &i in &sdd_rows {
        seen[i] = true;
    }
    while let Some(j) = queue.pop_front() {
        for &i in &rev[rev_off[j]..rev_off[j + 1]] {
            if !seen[i] {
                seen[i] = true;
                queue.push_back(i);
            }
        }
    }
    let unreachable_rows: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
    MatrixDiagnosis {
        is_z,
        nonneg_diag,
        is_wdd,
        is_sdd: sdd_rows.len() == n,
        is_wcdd: is_wdd && unreachable_rows.is_empty(),
        sdd_rows,
        unreachable_rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MMatrixReason {
    NotZMatrix,
    NegativeDiagonal,
    NotWdd,
    NotWcdd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MMatrixVerdict {
    pub is_m_matrix: bool,
    /// Why the answer is negative; `NotZMatrix`, `NegativeDiagonal` and
    /// `NotWdd` mean the characterization does not apply.
    pub reason: Option<MMatrixReason>,
    pub diagnosis: MatrixDiagnosis,
}

/// For a WDD Z-matrix with nonnegative diagonal: nonsingular M-matrix iff WCDD.
pub fn is_nonsingular_m_matrix(a: &SparseMatrix) -> MMatrixVerdict {
    let diagnosis = is_wcdd(a);
    let reason = if !diagnosis.is_z {
        Some(MMatrixReason::NotZMatrix)
    } else if !diagnosis.nonneg_diag {
        Some(MMatrixReason::NegativeDiagonal)
    } else if !diagnosis.is_wdd {
        Some(MMatrixReason::NotWdd)
    } else if !diagnosis.is_wcdd {
        Some(MMatrixReason::NotWcdd)
    } else {
        None
    };
    MMatrixVerdict { is_m_matrix: reason.is_none(), reason, diagnosis }
}

/// Sub-, main and super-diagonals of a tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    main: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn from_sparse(a: &SparseMatrix) -> Result<Self, SolverError> {
        let n = a.dim();
        let mut t = Self { lower: vec![0.0; n], main: vec![0.0; n], upper: vec![0.0; n] };
        for i in 0..n {
            let (c, v) = a.row(i);
            for (j, x) in c.iter().zip(v) {
                match *j as isize - i as isize {
                    -1 => t.lower[i] = *x,
                    0 => t.main[i] = *x,
                    1 => t.upper[i] = *x,
                    _ if *x == 0.0 => {}
                    _ => return Err(SolverError::NotTridiagonal(i)),
                }
            }
        }
        Ok(t)
    }

    /// Precomputes the elimination so repeated right-hand sides cost O(n).
    pub fn factor(&self) -> Result<TridiagonalFactor, SolverError> {
        let n = self.main.len();
        let mut cp = vec![0.0; n];
        let mut denom = vec![0.0; n];
        for i in 0..n {
            let d = self.main[i] - if i > 0 { self.lower[i] * cp[i - 1] } else { 0.0 };
            let scale = self.main[i].abs() + self.lower[i].abs() + self.upper[i].abs();
            if d.abs() <= 1e-14 * scale || d == 0.0 {
                return Err(SolverError::ZeroPivot(i));
            }
            denom[i] = d;
            cp[i] = self.upper[i] / d;
        }
        Ok(TridiagonalFactor { lower: self.lower.clone(), cp, denom })
    }
}

#[derive(Debug, Clone)]
pub struct TridiagonalFactor {
    lower: Vec<f64>,
    cp: Vec<f64>,
    denom: Vec<f64>,
}

impl TridiagonalFactor {
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        let n = self.denom.len();
        if b.len() != n {
            return Err(SolverError::Dimension { n, len: b.len() });
        }
        let mut x = vec![0.0; n];
        for i in 0..n {
            let prev = if i > 0 { self.lower[i] * x[i - 1] } else { 0.0 };
            x[i] = (b[i] - prev) / self.denom[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.cp[i] * x[i + 1];
        }
        Ok(x)
    }
}

/// Thomas elimination for a tridiagonal system.
pub fn solve_tridiagonal(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError> {
    if b.len() != a.dim() {
        return Err(SolverError::Dimension { n: a.dim(), len: b.len() });
    }
    Tridiagonal::from_sparse(a)?.factor()?.solve(b)
}

/// Incomplete LU factorization with threshold dropping and a per-row fill
/// limit.
#[derive(Debug, Clone)]
pub struct Ilut {
    n: usize,
    l: SparseMatrix,
    // strictly upper part in `u`, diagonal stored separately
    u: SparseMatrix,
    diag: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlutParams {
    pub drop_tol: f64,
    pub fill_factor: f64,
}

impl Default for IlutParams {
    fn default() -> Self {
        Self { drop_tol: 1e-4, fill_factor: 10.0 }
    }
}

impl Ilut {
    pub fn new(a: &SparseMatrix, params: IlutParams) -> Result<Self, SolverError> {
        let n = a.dim();
        let avg = a.nnz() as f64 / n.max(1) as f64;
        let lfil = ((params.fill_factor * avg / 2.0).ceil() as usize).max(1);
        let mut lb = CsrBuilder::new(n);
        let mut ub = CsrBuilder::new(n);
        let mut diag = vec![0.0; n];
        // dense work row
        let mut w = vec![0.0; n];
        let mut used = vec![false; n];
        let mut nz: Vec<usize> = Vec::new();
        let mut upper_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for i in 0..n {
            let (c, v) = a.row(i);
            let norm = (v.iter().map(|x| x * x).sum::<f64>()).sqrt();
            if norm == 0.0 {
                return Err(SolverError::ZeroPivot(i));
            }
            let tol = params.drop_tol * norm / (c.len().max(1) as f64).sqrt();
            let mut heap = BinaryHeap::new();
            for (j, x) in c.iter().zip(v) {
                w[*j] = *x;
                used[*j] = true;
                nz.push(*j);
                if *j < i {
                    heap.push(Reverse(*j));
                }
            }
            if !used[i] {
                used[i] = true;
                nz.push(i);
            }
            let mut lrow: Vec<(usize, f64)> = Vec::new();
            while let Some(Reverse(k)) = heap.pop() {
                let mult = w[k] / diag[k];
                w[k] = 0.0;
                if mult.abs() < tol {
                    continue;
                }
                lrow.push((k, mult));
                for &(j, ukj) in &upper_rows[k] {
                    if !used[j] {
                        used[j] = true;
                        nz.push(j);
                        if j < i {
                            heap.push(Reverse(j));
                        }
                    }
                    w[j] -= mult * ukj;
                }
            }
            let mut urow: Vec<(usize, f64)> = nz
                .iter()
                .filter(|&&j| j > i && w[j].abs() >= tol)
                .map(|&j| (j, w[j]))
                .collect();
            let mut d = w[i];
            if d == 0.0 {
                d = tol.max(1e-8 * norm);
            }
            diag[i] = d;
            keep_largest(&mut lrow, lfil);
            keep_largest(&mut urow, lfil);
            for &j in &nz {
                w[j] = 0.0;
                used[j] = false;
            }
            nz.clear();
            lb.push_row(&mut lrow);
            urow.sort_unstable_by_key(|e| e.0);
            ub.push_row(&mut urow.clone());
            upper_rows.push(urow);
        }
        Ok(Self { n, l: lb.finish(), u: ub.finish(), diag })
    }

    /// Applies `(LU)^{-1}` to `r` in place.
    pub fn apply(&self, r: &mut [f64]) {
        for i in 0..self.n {
            let (c, v) = self.l.row(i);
            let s: f64 = c.iter().zip(v).map(|(j, x)| x * r[*j]).sum();
            r[i] -= s;
        }
        for i in (0..self.n).rev() {
            let (c, v) = self.u.row(i);
            let s: f64 = c.iter().zip(v).map(|(j, x)| x * r[*j]).sum();
            r[i] = (r[i] - s) / self.diag[i];
        }
    }
}

fn keep_largest(row: &mut Vec<(usize, f64)>, p: usize) {
    if row.len() > p {
        row.sort_unstable_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        row.truncate(p);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeConfig {
    pub rtol: f64,
    pub max_iterations: Option<usize>,
    pub ilut: IlutParams,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        Self { rtol: 1e-10, max_iterations: None, ilut: IlutParams::default() }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned BiCGSTAB. Returns the solution and the iteration count.
pub fn solve_iterative(a: &SparseMatrix, b: &[f64], x0: &[f64], cfg: &IterativeConfig) -> Result<(Vec<f64>, usize), SolverError> {
    let n = a.dim();
    if b.len() != n || x0.len() != n {
        return Err(SolverError::Dimension { n, len: b.len().min(x0.len()) });
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let pre = Ilut::new(a, cfg.ilut).map_err(|_| SolverError::Breakdown {
        iterations: 0,
        residual: f64::INFINITY,
        best: x0.to_vec(),
    })?;
    bicgstab(a, b, x0, cfg, &pre)
}

/// BiCGSTAB with a prebuilt preconditioner.
pub fn bicgstab(a: &SparseMatrix, b: &[f64], x0: &[f64], cfg: &IterativeConfig, pre: &Ilut) -> Result<(Vec<f64>, usize), SolverError> {
    let n = a.dim();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let max_it = cfg.max_iterations.unwrap_or((2 * n).max(50));
    let tol = cfg.rtol * bnorm;
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    a.mul_vec_into(&x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut rnorm = norm2(&r);
    if rnorm <= tol {
        return Ok((x, 0));
    }
    let mut best = (rnorm, x.clone());
    let mut r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut restarts = 0;
    let eps = f64::EPSILON;
    let mut it = 0;
    while it < max_it {
        it += 1;
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < eps * eps * dot(&r0, &r0) {
            // lost orthogonality: restart from the current residual
            if restarts > 10 {
                return Err(SolverError::Breakdown { iterations: it, residual: best.0 / bnorm, best: best.1 });
            }
            restarts += 1;
            r0.copy_from_slice(&r);
            rho = dot(&r, &r);
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            it -= 1;
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        y.copy_from_slice(&p);
        pre.apply(&mut y);
        a.mul_vec_into(&y, &mut v);
        let r0v = dot(&r0, &v);
        if r0v == 0.0 {
            return Err(SolverError::Breakdown { iterations: it, residual: best.0 / bnorm, best: best.1 });
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok((x, it));
        }
        z.copy_from_slice(&s);
        pre.apply(&mut z);
        a.mul_vec_into(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        rnorm = norm2(&r);
        if !rnorm.is_finite() {
            return Err(SolverError::Breakdown { iterations: it, residual: best.0 / bnorm, best: best.1 });
        }
        if rnorm < best.0 {
            best = (rnorm, x.clone());
        }
        if rnorm <= tol {
            // confirm with the true residual
            a.mul_vec_into(&x, &mut t);
            let true_r: f64 = norm2(&t.iter().zip(b).map(|(ax, bi)| bi - ax).collect::<Vec<_>>());
            if true_r <= tol * 10.0 {
                return Ok((x, it));
            }
            r.iter_mut().zip(t.iter().zip(b)).for_each(|(ri, (ax, bi))| *ri = bi - ax);
        }
        if omega == 0.0 {
            return Err(SolverError::Breakdown { iterations: it, residual: best.0 / bnorm, best: best.1 });
        }
    }
    Err(SolverError::MaxIterations { iterations: it, residual: best.0 / bnorm, best: best.1 })
}
