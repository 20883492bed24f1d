//! Sum factorisation of element expansions on tensor grids of points.

use crate::hierarchy::{Element, HierarchicalBasis};
use crate::splines::MAX_DEGREE;
use crate::MAX_DIM;

/// Univariate values and first derivatives of an element's local functions
/// at per-direction point sets: `val[a][m * n[a] + i]` is `N_i(x_m)`.
pub(crate) struct Factors {
    n: [usize; MAX_DIM],
    g: [usize; MAX_DIM],
    val: [Vec<f64>; MAX_DIM],
    der: [Vec<f64>; MAX_DIM],
}

impl Factors {
    /// Factors of element `e` at the points `pts[a]` of each direction, which
    /// must lie in the element's closure.
    pub(crate) fn new(basis: &HierarchicalBasis, e: usize, pts: &[Vec<f64>; MAX_DIM]) -> Self {
        let el = &basis.elements()[e];
        let p = basis.degree();
        let tb = basis.level_basis(el.level);
        let mut f = Factors {
            n: [1; MAX_DIM],
            g: [1; MAX_DIM],
            val: [vec![1.0], vec![1.0], vec![1.0]],
            der: [vec![0.0], vec![0.0], vec![0.0]],
        };
        let mut buf = [[0.0; 3]; MAX_DEGREE + 1];
        for a in 0..basis.dim() {
            f.n[a] = p + 1;
            f.g[a] = pts[a].len();
            f.val[a].clear();
            f.der[a].clear();
            for &x in &pts[a] {
                tb.dirs()[a].span_derivatives(el.parent_cell[a] + p, x, 1, &mut buf);
                for b in &buf[..=p] {
                    f.val[a].push(b[0]);
                    f.der[a].push(b[1]);
                }
            }
        }
        f
    }

    fn matrix(&self, a: usize, deriv: Option<usize>) -> &[f64] {
        if deriv == Some(a) {
            &self.der[a]
        } else {
            &self.val[a]
        }
    }

    /// Values, or parametric derivatives in direction `deriv`, of the local
    /// expansion `c` at all grid points (first direction fastest).
    pub(crate) fn interpolate(&self, c: &[f64], deriv: Option<usize>) -> Vec<f64> {
        let mut data = c.to_vec();
        let mut dims = self.n;
        for a in 0..MAX_DIM {
            data = apply(&data, &mut dims, a, self.matrix(a, deriv), self.g[a], self.n[a], false);
        }
        data
    }

    /// `r_i = sum_q w_q D N_i(x_q)` with `D` the identity or the parametric
    /// derivative in direction `deriv`.
    pub(crate) fn integrate(&self, w: &[f64], deriv: Option<usize>) -> Vec<f64> {
        let mut data = w.to_vec();
        let mut dims = self.g;
        for a in 0..MAX_DIM {
            data = apply(&data, &mut dims, a, self.matrix(a, deriv), self.n[a], self.g[a], true);
        }
        data
    }
}

/// Contracts axis `axis` of `data` with a `g x n` matrix stored row-major
/// (`m * n + i`), or with its transpose when `transpose` is set.
fn apply(
    data: &[f64],
    dims: &mut [usize; MAX_DIM],
    axis: usize,
    mat: &[f64],
    rows: usize,
    cols: usize,
    transpose: bool,
) -> Vec<f64> {
    let inner: usize = dims[..axis].iter().product();
    let outer: usize = dims[axis + 1..].iter().product();
    let mut out = vec![0.0; inner * rows * outer];
    for o in 0..outer {
        for r in 0..rows {
            let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
            for c in 0..cols {
                let m = if transpose { mat[c * rows + r] } else { mat[r * cols + c] };
                if m == 0.0 {
                    continue;
                }
                let src = &data[(o * cols + c) * inner..(o * cols + c + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += m * s;
                }
            }
        }
    }
    dims[axis] = rows;
    out
}

/// Coefficients of the local tensor functions of `el` for the global
/// expansion `coeffs`.
pub(crate) fn to_local(el: &Element, nloc: usize, coeffs: &[f64]) -> Vec<f64> {
    if el.identity {
        return el.funcs.iter().map(|&i| coeffs[i]).collect();
    }
    let mut c = vec![0.0; nloc];
    for (f, &id) in el.funcs.iter().enumerate() {
        let v = coeffs[id];
        for (l, e) in el.extraction[f * nloc..(f + 1) * nloc].iter().enumerate() {
            c[l] += e * v;
        }
    }
    c
}

/// Per-function values `r_f = sum_l E_fl r_l` of local functionals `r`.
pub(crate) fn from_local(el: &Element, nloc: usize, r: &[f64]) -> Vec<f64> {
    if el.identity {
        return r.to_vec();
    }
    (0..el.funcs.len())
        .map(|f| el.extraction[f * nloc..(f + 1) * nloc].iter().zip(r).map(|(e, v)| e * v).sum())
        .collect()
}
