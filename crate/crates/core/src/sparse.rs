//! Compressed sparse row matrices with a sparse Cholesky direct solver and a
//! diagonally preconditioned conjugate gradient solver.

use std::fmt::Write as _;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Side};
use rayon::prelude::*;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries. Within one `(row, col)` the contributions are
    /// added in increasing `tag` order, so the result does not depend on the
    /// order of `entries`.
    pub fn from_tagged_triplets(nrows: usize, ncols: usize, mut entries: Vec<(usize, usize, usize, f64)>) -> Self {
        entries.par_sort_unstable_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut cols = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (r, c, _, v) in entries {
            assert!(r < nrows && c < ncols, "entry ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { nrows, ncols, row_ptr, cols, vals }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let tagged = entries.iter().enumerate().map(|(k, &(r, c, v))| (r, c, k, v)).collect();
        Self::from_tagged_triplets(nrows, ncols, tagged)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().with_min_len(512).enumerate().for_each(|(i, yi)| {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        });
    }

    /// `a * self + b * other`; both must share the dimensions.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut entries = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            entries.extend(self.row(i).map(|(j, v)| (i, j, 0, a * v)));
            entries.extend(other.row(i).map(|(j, v)| (i, j, 1, b * v)));
        }
        Self::from_tagged_triplets(self.nrows, self.ncols, entries)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m = m.max((v - self.get(j, i)).abs());
            }
        }
        m
    }

    /// Coordinate format, one `row col value` line per stored entry.
    pub fn to_coordinate_string(&self) -> String {
        let mut s = format!("{} {} {}\n", self.nrows, self.ncols, self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                let _ = writeln!(s, "{i} {j} {v:.17e}");
            }
        }
        s
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Solves `A x = b` for symmetric positive definite `A` by sparse Cholesky.
pub fn solve_direct(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // CSR rows of a symmetric matrix are its CSC columns; keep the lower half
    let mut trip = Vec::with_capacity(a.nnz() / 2 + n);
    for i in 0..n {
        for (j, v) in a.row(i) {
            if j >= i {
                trip.push(Triplet::new(j, i, v));
            }
        }
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::InvalidParameter(format!("sparse matrix: {e:?}")))?;
    let llt = m.sp_cholesky(Side::Lower).map_err(|_| Error::NotPositiveDefinite)?;
    let mut x = Col::<f64>::from_fn(n, |i| b[i]);
    llt.solve_in_place(x.as_mat_mut());
    let x: Vec<f64> = (0..n).map(|i| x[i]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(x)
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `|b - A x| / |b|`.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients from `x0` (zero when absent).
pub fn solve_cg(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, tol: f64, max_iter: usize) -> Result<CgOutcome> {
    let n = a.nrows();
    if b.len() != n || x0.is_some_and(|x| x.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let bnorm = dot(b, b).sqrt();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, residual: 0.0 });
    }
    let dinv: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { f64::NAN }).collect();
    if dinv.iter().any(|d| d.is_nan()) {
        return Err(Error::NotPositiveDefinite);
    }
    let mut r = a.matvec(&x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = dot(&r, &r).sqrt() / bnorm;
    let mut it = 0;
    while res > tol {
        if it >= max_iter {
            return Err(Error::NotConverged { iterations: it, residual: res });
        }
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
        r.par_iter_mut().zip(&ap).for_each(|(r, ap)| *r -= alpha * ap);
        z.par_iter_mut().zip(&r).zip(&dinv).for_each(|((z, r), d)| *z = r * d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        res = dot(&r, &r).sqrt() / bnorm;
        it += 1;
    }
    Ok(CgOutcome { x, iterations: it, residual: res })
}

/// Linear solver selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Direct,
    Cg,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Self::Direct),
            "cg" => Ok(Self::Cg),
            _ => Err(Error::InvalidParameter(format!("unknown solver '{s}'"))),
        }
    }
}

pub const CG_TOLERANCE: f64 = 1e-10;

/// Solves an SPD system with the chosen method; `x0` seeds CG.
pub fn solve(kind: SolverKind, a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>) -> Result<Vec<f64>> {
    match kind {
        SolverKind::Direct => solve_direct(a, b),
        SolverKind::Cg => Ok(solve_cg(a, b, x0, CG_TOLERANCE, 10 * a.nrows().max(10))?.x),
    }
}
