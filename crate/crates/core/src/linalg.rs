//! Compressed-sparse-row matrices and the linear solvers used by the time
//! stepper: a sparse direct LU (backed by `faer`), restarted GMRES with an
//! ILU(0) preconditioner, the bordered solve for one scalar constraint, and a
//! power-iteration condition estimate.

use std::fmt::Write as _;

use faer::linalg::solvers::{Solve, SolveCore};
use faer::sparse::{SparseColMat, Triplet};
use faer::Col;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("solve residual {residual:e} exceeds tolerance {tol:e}")]
    Inaccurate { residual: f64, tol: f64 },
    #[error("iterative solver stopped after {iterations} iterations with relative residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("constraint vector is (numerically) zero")]
    DegenerateConstraint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SparseMatrix {
            n_rows: d.len(),
            n_cols: d.len(),
            row_ptr: (0..=d.len()).collect(),
            col_idx: (0..d.len()).collect(),
            values: d.to_vec(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed in input order after a stable sort by position, so the result
    /// depends only on the triplet sequence.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            assert!(
                r < n_rows && c < n_cols,
                "triplet ({r}, {c}) outside {n_rows}x{n_cols}"
            );
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let trip = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(j, &v)| (i, j, v))
            })
            .collect();
        Self::from_triplets(rows.len(), n_cols, trip)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, j, v) in self.triplets() {
            d[i][j] += v;
        }
        d
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        Self::from_triplets(
            self.n_cols,
            self.n_rows,
            self.triplets().map(|(i, j, v)| (j, i, v)).collect(),
        )
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n_rows)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>())
            .sum()
    }

    /// `sum_k s_k A_k` over matrices of equal shape.
    pub fn linear_combination(terms: &[(&SparseMatrix, f64)]) -> SparseMatrix {
        let (n, m) = terms.first().map_or((0, 0), |(a, _)| (a.n_rows, a.n_cols));
        let mut trip = Vec::with_capacity(terms.iter().map(|(a, _)| a.nnz()).sum());
        for (a, s) in terms {
            assert_eq!(
                (a.n_rows, a.n_cols),
                (n, m),
                "shape mismatch in linear combination"
            );
            trip.extend(a.triplets().map(|(i, j, v)| (i, j, s * v)));
        }
        Self::from_triplets(n, m, trip)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    /// `[[A, c], [c^T, 0]]`.
    pub fn bordered(&self, c: &[f64]) -> SparseMatrix {
        let n = self.n_rows;
        assert_eq!(c.len(), n);
        let mut trip: Vec<_> = self.triplets().collect();
        for (i, &ci) in c.iter().enumerate() {
            if ci != 0.0 {
                trip.push((i, n, ci));
                trip.push((n, i, ci));
            }
        }
        Self::from_triplets(n + 1, n + 1, trip)
    }

    /// MatrixMarket coordinate format.
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.n_rows, self.n_cols, self.nnz());
        for (i, j, v) in self.triplets() {
            let _ = writeln!(s, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        s
    }

    fn to_faer(&self) -> SparseColMat<usize, f64> {
        let trip: Vec<_> = self
            .triplets()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.n_rows, self.n_cols, &trip)
            .expect("valid sparse structure")
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = a.matvec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

/// Sparse LU factorization with partial pivoting.
pub struct LuFactor {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl LuFactor {
    pub fn new(a: &SparseMatrix) -> Result<Self, LinalgError> {
        if a.n_rows != a.n_cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} is not square",
                a.n_rows, a.n_cols
            )));
        }
        let lu = a.to_faer().sp_lu().map_err(|_| LinalgError::Singular)?;
        Ok(LuFactor { n: a.n_rows, lu })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let x = self.lu.solve(Col::<f64>::from_fn(self.n, |i| b[i]));
        let x: Vec<f64> = (0..self.n).map(|i| x[i]).collect();
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(LinalgError::Singular)
        }
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut y = Col::<f64>::from_fn(self.n, |i| b[i]);
        self.lu
            .solve_transpose_in_place_with_conj(faer::Conj::No, y.as_mat_mut());
        let y: Vec<f64> = (0..self.n).map(|i| y[i]).collect();
        if y.iter().all(|v| v.is_finite()) {
            Ok(y)
        } else {
            Err(LinalgError::Singular)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Sparse LU with partial pivoting.
    Direct,
    /// Restarted GMRES, right-preconditioned with ILU(0).
    Gmres { restart: usize, max_iter: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub method: Method,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            method: Method::Direct,
        }
    }
}

/// Solves `A x = b` by sparse LU with up to three steps of iterative
/// refinement; fails if the relative residual stays above `tol`.
pub fn solve(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>, LinalgError> {
    solve_with(
        a,
        b,
        &SolveOptions {
            tol,
            method: Method::Direct,
        },
    )
}

pub fn solve_with(
    a: &SparseMatrix,
    b: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<f64>, LinalgError> {
    if a.n_rows != a.n_cols || a.n_rows != b.len() {
        return Err(LinalgError::DimensionMismatch(format!(
            "matrix {}x{}, rhs {}",
            a.n_rows,
            a.n_cols,
            b.len()
        )));
    }
    if b.is_empty() {
        return Ok(Vec::new());
    }
    match opts.method {
        Method::Direct => {
            let lu = LuFactor::new(a)?;
            let mut x = lu.solve(b)?;
            let target = opts.tol * norm2(b);
            let mut r = residual(a, &x, b);
            for _ in 0..3 {
                if norm2(&r) <= target {
                    break;
                }
                let dx = lu.solve(&r)?;
                x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
                r = residual(a, &x, b);
            }
            let res = norm2(&r);
            if res <= target {
                Ok(x)
            } else {
                Err(LinalgError::Inaccurate {
                    residual: res / norm2(b),
                    tol: opts.tol,
                })
            }
        }
        Method::Gmres { restart, max_iter } => gmres(a, b, opts.tol, restart, max_iter),
    }
}

/// Solves `[[A, c], [c^T, 0]] [x; l] = [b; g]` monolithically.
pub fn solve_bordered(
    a: &SparseMatrix,
    c: &[f64],
    b: &[f64],
    g: f64,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, f64), LinalgError> {
    if c.len() != a.n_rows || b.len() != a.n_rows {
        return Err(LinalgError::DimensionMismatch("bordered system".into()));
    }
    if norm2(c) < 1e-14 {
        return Err(LinalgError::DegenerateConstraint);
    }
    let big = a.bordered(c);
    let mut rhs = b.to_vec();
    rhs.push(g);
    let mut y = solve_with(&big, &rhs, opts)?;
    let lambda = y.pop().unwrap();
    let violation = (dot(c, &y) - g).abs();
    if violation > opts.tol * (1.0 + g.abs()) * 10.0 {
        return Err(LinalgError::Inaccurate {
            residual: violation,
            tol: opts.tol,
        });
    }
    Ok((y, lambda))
}

type Operator<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>, LinalgError> + 'a;

/// Estimates the 2-norm condition number `sigma_max / sigma_min` by 50 power
/// iterations on `A^T A` and 50 on its inverse (via LU solves).
pub fn estimate_condition(a: &SparseMatrix) -> Result<f64, LinalgError> {
    let n = a.n_rows;
    if n == 0 {
        return Ok(1.0);
    }
    let lu = LuFactor::new(a)?;
    let at = a.transpose();
    let start = |n: usize| -> Vec<f64> {
        // Deterministic, non-degenerate start vector.
        let v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin())
            .collect();
        let s = norm2(&v);
        v.into_iter().map(|x| x / s).collect()
    };
    let power = |op: &Operator| -> Result<f64, LinalgError> {
        let mut v = start(n);
        let mut lambda = 0.0;
        for _ in 0..50 {
            let w = op(&v)?;
            lambda = norm2(&w);
            if !lambda.is_finite() {
                return Err(LinalgError::Singular);
            }
            if lambda == 0.0 {
                break;
            }
            v = w.into_iter().map(|x| x / lambda).collect();
        }
        Ok(lambda)
    };
    let big = power(&|v| Ok(at.matvec(&a.matvec(v))))?;
    let inv = power(&|v| lu.solve(&lu.solve_transpose(v)?))?;
    if inv == 0.0 || big == 0.0 {
        return Err(LinalgError::Singular);
    }
    Ok((big * inv).sqrt())
}

/// Incomplete LU factorization with the sparsity of `A`.
pub struct Ilu0 {
    m: SparseMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &SparseMatrix) -> Self {
        let mut m = a.clone();
        let n = m.n_rows;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                if m.col_idx[k] == i {
                    diag[i] = k;
                }
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (lo, hi) = (m.row_ptr[i], m.row_ptr[i + 1]);
            for k in lo..hi {
                pos[m.col_idx[k]] = k;
            }
            for kk in lo..hi {
                let col = m.col_idx[kk];
                if col >= i {
                    break;
                }
                let piv = if diag[col] == usize::MAX {
                    1.0
                } else {
                    m.values[diag[col]]
                };
                let piv = if piv.abs() < 1e-300 { 1.0 } else { piv };
                let l = m.values[kk] / piv;
                m.values[kk] = l;
                for kj in diag[col].wrapping_add(1)..m.row_ptr[col + 1] {
                    if diag[col] == usize::MAX {
                        break;
                    }
                    let p = pos[m.col_idx[kj]];
                    if p != usize::MAX {
                        m.values[p] -= l * m.values[kj];
                    }
                }
            }
            for k in lo..hi {
                pos[m.col_idx[k]] = usize::MAX;
            }
        }
        Ilu0 { m, diag }
    }

    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        let m = &self.m;
        let n = m.n_rows;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                if m.col_idx[k] < i {
                    s -= m.values[k] * y[m.col_idx[k]];
                }
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                if m.col_idx[k] > i {
                    s -= m.values[k] * y[m.col_idx[k]];
                }
            }
            let d = if self.diag[i] == usize::MAX {
                1.0
            } else {
                m.values[self.diag[i]]
            };
            y[i] = s / if d.abs() < 1e-300 { 1.0 } else { d };
        }
        y
    }
}

fn gmres(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<Vec<f64>, LinalgError> {
    let n = b.len();
    let restart = restart.clamp(1, n.max(1));
    let pre = Ilu0::new(a);
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut iterations = 0;
    let mut rel = 1.0;
    while iterations < max_iter {
        let r = residual(a, &x, b);
        let beta = norm2(&r);
        rel = beta / bnorm;
        if rel <= tol {
            return Ok(x);
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && iterations < max_iter {
            let mut w = a.matvec(&pre.apply(&basis[k]));
            let mut h = vec![0.0; k + 2];
            for (j, vj) in basis.iter().enumerate() {
                h[j] = dot(&w, vj);
                w.iter_mut().zip(vj).for_each(|(wi, v)| *wi -= h[j] * v);
            }
            h[k + 1] = norm2(&w);
            for j in 0..k {
                let t = cs[j] * h[j] + sn[j] * h[j + 1];
                h[j + 1] = -sn[j] * h[j] + cs[j] * h[j + 1];
                h[j] = t;
            }
            let d = h[k].hypot(h[k + 1]);
            let (c, s) = if d == 0.0 {
                (1.0, 0.0)
            } else {
                (h[k] / d, h[k + 1] / d)
            };
            cs.push(c);
            sn.push(s);
            h[k] = d;
            let next = h[k + 1];
            h[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            hess.push(h);
            k += 1;
            iterations += 1;
            rel = g[k].abs() / bnorm;
            if rel <= tol || next == 0.0 {
                break;
            }
            basis.push(w.into_iter().map(|v| v / next).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| hess[j][i] * y[j]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        let mut z = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            z.iter_mut()
                .zip(&basis[j])
                .for_each(|(zi, v)| *zi += yj * v);
        }
        let dx = pre.apply(&z);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::Singular);
        }
    }
    let true_rel = norm2(&residual(a, &x, b)) / bnorm;
    if true_rel <= tol {
        Ok(x)
    } else {
        Err(LinalgError::NoConvergence {
            iterations,
            residual: rel.max(true_rel),
        })
    }
}
