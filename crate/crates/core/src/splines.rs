//! Univariate B-splines on open knot vectors, their tensor products and
//! rational (NURBS) variants, plus dyadic knot refinement.

use crate::{Error, Result, MAX_DIM};

/// Highest polynomial degree handled by the stack-allocated evaluators.
pub const MAX_DEGREE: usize = 15;

/// Highest derivative order returned by the evaluators.
pub const MAX_DERIV: usize = 2;

const KNOT_TOL: f64 = 1e-14;

/// Open, non-decreasing knot vector on [0, 1] with its polynomial degree.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::InvalidKnots(format!("degree {degree} exceeds {MAX_DEGREE}")));
        }
        if knots.len() < 2 * degree + 2 {
            return Err(Error::InvalidKnots(format!("{} knots cannot carry a degree-{degree} basis", knots.len())));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidKnots("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be non-decreasing".into()));
        }
        let m = knots.len();
        if knots[0] != 0.0 || knots[m - 1] != 1.0 {
            return Err(Error::InvalidKnots("knots must span [0, 1]".into()));
        }
        if knots[..=degree].iter().any(|&k| k != 0.0) || knots[m - degree - 1..].iter().any(|&k| k != 1.0) {
            return Err(Error::InvalidKnots("end knots must be repeated degree + 1 times".into()));
        }
        let n = m - degree - 1;
        for i in 1..n {
            let mult = knots[i..].iter().take_while(|&&k| k == knots[i]).count();
            if knots[i] > 0.0 && knots[i] < 1.0 && mult > degree + 1 {
                return Err(Error::InvalidKnots(format!("interior knot {} has multiplicity {mult}", knots[i])));
            }
        }
        Ok(Self { degree, knots })
    }

    /// Open knot vector with `spans` equal intervals and simple interior knots.
    pub fn uniform(degree: usize, spans: usize) -> Self {
        assert!(spans >= 1 && degree <= MAX_DEGREE);
        let mut knots = vec![0.0; degree + 1];
        for k in 1..spans {
            knots.push(k as f64 / spans as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        Self { degree, knots }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Distinct knot values in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = Vec::new();
        for &k in &self.knots {
            if b.last().is_none_or(|&l| k > l) {
                b.push(k);
            }
        }
        b
    }

    pub fn num_spans(&self) -> usize {
        self.breakpoints().len() - 1
    }

    /// Index `k` with `knots[k] <= xi < knots[k+1]`; `xi = 1` maps to the last
    /// non-empty span.
    pub fn find_span(&self, xi: f64) -> Result<usize> {
        if !(-KNOT_TOL..=1.0 + KNOT_TOL).contains(&xi) || xi.is_nan() {
            return Err(Error::OutOfRange(xi));
        }
        let xi = xi.clamp(0.0, 1.0);
        let p = self.degree;
        let n = self.num_basis();
        if xi >= self.knots[n] {
            return Ok(n - 1);
        }
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if xi < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    /// Values and derivatives up to `nders` of the `p + 1` functions that are
    /// non-zero on `span`; `out[k][d]` is derivative `d` of function `span - p + k`.
    pub fn span_derivatives(&self, span: usize, xi: f64, nders: usize, out: &mut [[f64; 3]]) {
        let p = self.degree;
        let u = &self.knots;
        debug_assert!(out.len() > p && nders <= MAX_DERIV);
        let mut left = [0.0; MAX_DEGREE + 1];
        let mut right = [0.0; MAX_DEGREE + 1];
        let mut ndu = [[0.0; MAX_DEGREE + 1]; MAX_DEGREE + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = xi - u[span + 1 - j];
            right[j] = u[span + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = if ndu[j][r] != 0.0 { ndu[r][j - 1] / ndu[j][r] } else { 0.0 };
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for (j, o) in out.iter_mut().take(p + 1).enumerate() {
            *o = [ndu[j][p], 0.0, 0.0];
        }
        let n = nders.min(p);
        if n == 0 {
            return;
        }
        let div = |a: f64, b: f64| if b != 0.0 { a / b } else { 0.0 };
        let mut a = [[0.0; MAX_DEGREE + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let rk = rk as usize;
                    a[s2][0] = div(a[s1][0], ndu[pk + 1][rk]);
                    d = a[s2][0] * ndu[rk][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = div(a[s1][j] - a[s1][j - 1], ndu[pk + 1][idx]);
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = div(-a[s1][k - 1], ndu[pk + 1][r]);
                    d += a[s2][k] * ndu[r][pk];
                }
                out[r][k] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=n {
            for o in out.iter_mut().take(p + 1) {
                o[k] *= fac;
            }
            fac *= (p - k) as f64;
        }
    }

    /// Single basis function `i` or its derivative of order `deriv` at `xi`.
    pub fn eval(&self, i: usize, xi: f64, deriv: usize) -> Result<f64> {
        let n = self.num_basis();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, size: n });
        }
        if deriv > MAX_DERIV {
            return Err(Error::DerivativeOrder(deriv));
        }
        let span = self.find_span(xi)?;
        let p = self.degree;
        if i + p < span || i > span {
            return Ok(0.0);
        }
        let mut out = [[0.0; 3]; MAX_DEGREE + 1];
        self.span_derivatives(span, xi.clamp(0.0, 1.0), deriv, &mut out);
        Ok(out[i + p - span][deriv])
    }

    /// Greville abscissae: averages of `p` consecutive interior knots.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.num_basis())
            .map(|i| {
                if p == 0 {
                    0.5 * (self.knots[i] + self.knots[i + 1])
                } else {
                    self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }

    /// Knot vector with every non-empty span halved, and the matrix that
    /// expresses each coarse function in the fine basis.
    pub fn dyadic_refine(&self) -> (KnotVector, RefinementMatrix) {
        let mut fine = Vec::with_capacity(2 * self.knots.len());
        for w in self.knots.windows(2) {
            fine.push(w[0]);
            if w[1] > w[0] {
                fine.push(0.5 * (w[0] + w[1]));
            }
        }
        fine.push(*self.knots.last().unwrap());
        let fine = KnotVector { degree: self.degree, knots: fine };
        let r = RefinementMatrix::between(self, &fine);
        (fine, r)
    }
}

/// Sparse matrix `R` with `coarse_i = sum_j R[j][i] fine_j` (rows are fine
/// functions, columns are coarse functions). All entries are non-negative.
#[derive(Clone, Debug)]
pub struct RefinementMatrix {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl RefinementMatrix {
    /// Discrete B-spline (Oslo) coefficients of the coarse basis in a finer
    /// knot vector that contains it.
    pub fn between(coarse: &KnotVector, fine: &KnotVector) -> Self {
        let p = coarse.degree;
        let xi = &coarse.knots;
        let tau = &fine.knots;
        let nc = coarse.num_basis();
        let nf = fine.num_basis();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let frac = |a: f64, b: f64| if b != 0.0 { a / b } else { 0.0 };
        for j in 0..nf {
            // alpha_{i,0}(j) is non-zero only for the span containing tau_j
            let mu = {
                let t = tau[j];
                let mut m = p;
                while m + 1 < nc && xi[m + 1] <= t {
                    m += 1;
                }
                m
            };
            let mut alpha = [0.0; MAX_DEGREE + 2];
            alpha[p] = 1.0;
            // alpha[s] holds alpha_{mu - p + s, k}(j)
            for k in 1..=p {
                let x = tau[j + k];
                let mut next = [0.0; MAX_DEGREE + 2];
                for s in (p - k)..=p {
                    let i = mu - p + s;
                    let w_i = frac(x - xi[i], xi[i + k] - xi[i]);
                    let w_i1 = frac(x - xi[i + 1], xi[i + k + 1] - xi[i + 1]);
                    let a = alpha[s];
                    let b = if s < p { alpha[s + 1] } else { 0.0 };
                    next[s] = w_i * a + (1.0 - w_i1) * b;
                }
                alpha = next;
            }
            for (s, &a) in alpha.iter().enumerate().take(p + 1) {
                if a.abs() > 1e-15 {
                    cols.push(mu - p + s);
                    vals.push(a);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { ncols: nc, row_ptr, cols, vals }
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Non-zero `(coarse index, value)` pairs of fine row `j`.
    pub fn row(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[j]..self.row_ptr[j + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// Fine coefficients of the spline with the given coarse coefficients.
    pub fn apply(&self, coarse: &[f64]) -> Vec<f64> {
        assert_eq!(coarse.len(), self.ncols);
        (0..self.nrows()).map(|j| self.row(j).map(|(i, v)| v * coarse[i]).sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows()];
        for (j, row) in d.iter_mut().enumerate() {
            for (i, v) in self.row(j) {
                row[i] = v;
            }
        }
        d
    }
}

/// Values and first/second parametric derivatives of basis functions at one point.
#[derive(Clone, Debug, Default)]
pub struct BasisValues {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; MAX_DIM]>,
    pub hessians: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
}

/// Tensor product of univariate bases, optionally rational with positive weights.
#[derive(Clone, Debug)]
pub struct TensorBasis {
    dirs: Vec<KnotVector>,
    weights: Option<Vec<f64>>,
}

impl TensorBasis {
    pub fn new(dirs: Vec<KnotVector>) -> Result<Self> {
        if dirs.is_empty() || dirs.len() > MAX_DIM {
            return Err(Error::DimensionMismatch { expected: MAX_DIM, got: dirs.len() });
        }
        Ok(Self { dirs, weights: None })
    }

    pub fn rational(dirs: Vec<KnotVector>, weights: Vec<f64>) -> Result<Self> {
        let mut b = Self::new(dirs)?;
        if weights.len() != b.num_basis() {
            return Err(Error::DimensionMismatch { expected: b.num_basis(), got: weights.len() });
        }
        if let Some(&w) = weights.iter().find(|&&w| !(w > 0.0)) {
            return Err(Error::NonPositiveWeight(w));
        }
        b.weights = Some(weights);
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.dirs.len()
    }

    pub fn dirs(&self) -> &[KnotVector] {
        &self.dirs
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn num_basis(&self) -> usize {
        self.dirs.iter().map(KnotVector::num_basis).product()
    }

    pub fn sizes(&self) -> [usize; MAX_DIM] {
        let mut s = [1; MAX_DIM];
        for (a, kv) in self.dirs.iter().enumerate() {
            s[a] = kv.num_basis();
        }
        s
    }

    /// Flat index with the first direction running fastest.
    pub fn flat_index(&self, multi: [usize; MAX_DIM]) -> usize {
        let s = self.sizes();
        multi[0] + s[0] * (multi[1] + s[1] * multi[2])
    }

    pub fn multi_index(&self, flat: usize) -> [usize; MAX_DIM] {
        let s = self.sizes();
        [flat % s[0], (flat / s[0]) % s[1], flat / (s[0] * s[1])]
    }

    /// All non-zero functions at `point` with values, gradients and Hessians
    /// (quotient rule when rational).
    pub fn eval(&self, point: &[f64]) -> Result<BasisValues> {
        let d = self.dim();
        if point.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: point.len() });
        }
        let mut spans = [0usize; MAX_DIM];
        let mut uni = [[[0.0; 3]; MAX_DEGREE + 1]; MAX_DIM];
        for a in 0..d {
            spans[a] = self.dirs[a].find_span(point[a])?;
            self.dirs[a].span_derivatives(spans[a], point[a].clamp(0.0, 1.0), 2, &mut uni[a]);
        }
        let mut npd = [1usize; MAX_DIM];
        for a in 0..d {
            npd[a] = self.dirs[a].degree() + 1;
        }
        let total = npd.iter().product::<usize>();
        let mut out = BasisValues {
            indices: Vec::with_capacity(total),
            values: Vec::with_capacity(total),
            grads: Vec::with_capacity(total),
            hessians: Vec::with_capacity(total),
        };
        let sizes = self.sizes();
        for k2 in 0..npd[2] {
            for k1 in 0..npd[1] {
                for k0 in 0..npd[0] {
                    let loc = [k0, k1, k2];
                    let mut multi = [0usize; MAX_DIM];
                    for a in 0..d {
                        multi[a] = spans[a] - self.dirs[a].degree() + loc[a];
                    }
                    let flat = multi[0] + sizes[0] * (multi[1] + sizes[1] * multi[2]);
                    let (v, g, h) = tensor_derivs(d, &uni, loc, MAX_DERIV);
                    out.indices.push(flat);
                    out.values.push(v);
                    out.grads.push(g);
                    out.hessians.push(h);
                }
            }
        }
        if let Some(w) = &self.weights {
            rationalize(d, w, &mut out);
        }
        Ok(out)
    }

    /// Single function `flat` with its gradient at `point`.
    pub fn eval_one(&self, flat: usize, point: &[f64]) -> Result<(f64, [f64; MAX_DIM])> {
        if flat >= self.num_basis() {
            return Err(Error::IndexOutOfRange { index: flat, size: self.num_basis() });
        }
        let all = self.eval(point)?;
        Ok(all.indices.iter().position(|&i| i == flat).map_or((0.0, [0.0; MAX_DIM]), |k| (all.values[k], all.grads[k])))
    }

    /// Refines every direction dyadically; returns the finer basis and the
    /// per-direction refinement matrices. Rational bases are not refined.
    pub fn dyadic_refine(&self) -> Result<(TensorBasis, Vec<RefinementMatrix>)> {
        if self.weights.is_some() {
            return Err(Error::InvalidParameter("rational bases are not refined".into()));
        }
        let (dirs, mats): (Vec<_>, Vec<_>) = self.dirs.iter().map(|kv| kv.dyadic_refine()).unzip();
        Ok((TensorBasis { dirs, weights: None }, mats))
    }
}

/// Value, gradient and Hessian of a tensor-product function from univariate data.
#[inline]
pub(crate) fn tensor_derivs(
    d: usize,
    uni: &[[[f64; 3]; MAX_DEGREE + 1]; MAX_DIM],
    loc: [usize; MAX_DIM],
    nders: usize,
) -> (f64, [f64; MAX_DIM], [[f64; MAX_DIM]; MAX_DIM]) {
    let mut v = 1.0;
    let mut g = [0.0; MAX_DIM];
    let mut h = [[0.0; MAX_DIM]; MAX_DIM];
    for a in 0..d {
        v *= uni[a][loc[a]][0];
    }
    if nders == 0 {
        return (v, g, h);
    }
    for a in 0..d {
        let mut ga = 1.0;
        for b in 0..d {
            ga *= uni[b][loc[b]][if a == b { 1 } else { 0 }];
        }
        g[a] = ga;
        if nders < 2 {
            continue;
        }
        for c in a..d {
            let mut hac = 1.0;
            for b in 0..d {
                let order = (a == b) as usize + (c == b) as usize;
                hac *= uni[b][loc[b]][order];
            }
            h[a][c] = hac;
            h[c][a] = hac;
        }
    }
    (v, g, h)
}

fn rationalize(d: usize, w: &[f64], out: &mut BasisValues) {
    let mut wsum = 0.0;
    let mut wg = [0.0; MAX_DIM];
    let mut wh = [[0.0; MAX_DIM]; MAX_DIM];
    for k in 0..out.indices.len() {
        let wk = w[out.indices[k]];
        wsum += wk * out.values[k];
        for a in 0..d {
            wg[a] += wk * out.grads[k][a];
            for b in 0..d {
                wh[a][b] += wk * out.hessians[k][a][b];
            }
        }
    }
    for k in 0..out.indices.len() {
        let wk = w[out.indices[k]];
        let r = wk * out.values[k] / wsum;
        let mut rg = [0.0; MAX_DIM];
        for a in 0..d {
            rg[a] = (wk * out.grads[k][a] - r * wg[a]) / wsum;
        }
        let mut rh = [[0.0; MAX_DIM]; MAX_DIM];
        for a in 0..d {
            for b in 0..d {
                rh[a][b] = (wk * out.hessians[k][a][b] - rg[a] * wg[b] - rg[b] * wg[a] - r * wh[a][b]) / wsum;
            }
        }
        out.values[k] = r;
        out.grads[k] = rg;
        out.hessians[k] = rh;
    }
}
