//! Spline geometry maps, gradient pushforward, per-element quadrature and
//! element sizes.

use std::fmt::Write as _;

use crate::hierarchy::HierarchicalBasis;
use crate::quadrature::QuadratureRule;
use crate::splines::{KnotVector, TensorBasis};
use crate::{Error, Result, MAX_DIM};

pub type Mat = [[f64; MAX_DIM]; MAX_DIM];

/// Geometry map evaluated at a parametric point.
#[derive(Clone, Copy, Debug)]
pub struct MappedPoint {
    pub x: [f64; MAX_DIM],
    /// `jac[i][a] = d x_i / d xi_a`.
    pub jac: Mat,
    pub det: f64,
    /// `hess[i][a][b] = d^2 x_i / d xi_a d xi_b`.
    pub hess: [Mat; MAX_DIM],
}

/// Spline (optionally NURBS) map from the parametric unit cube to the
/// physical domain.
#[derive(Clone, Debug)]
pub struct GeometryMap {
    basis: TensorBasis,
    control_points: Vec<[f64; MAX_DIM]>,
    /// Origin and constant Jacobian when the map is affine.
    affine: Option<([f64; MAX_DIM], Mat)>,
}

impl GeometryMap {
    pub fn new(basis: TensorBasis, control_points: Vec<[f64; MAX_DIM]>) -> Result<Self> {
        if control_points.len() != basis.num_basis() {
            return Err(Error::DimensionMismatch { expected: basis.num_basis(), got: control_points.len() });
        }
        let mut g = Self { basis, control_points, affine: None };
        g.affine = g.detect_affine();
        g.validate()?;
        Ok(g)
    }

    /// Multilinear map of the box `[lo, hi]`.
    pub fn box_map(dim: usize, lo: [f64; MAX_DIM], hi: [f64; MAX_DIM]) -> Result<Self> {
        let dirs = (0..dim).map(|_| KnotVector::uniform(1, 1)).collect();
        let basis = TensorBasis::new(dirs)?;
        let mut cps = Vec::with_capacity(basis.num_basis());
        for flat in 0..basis.num_basis() {
            let m = basis.multi_index(flat);
            let mut x = [0.0; MAX_DIM];
            for a in 0..dim {
                x[a] = if m[a] == 0 { lo[a] } else { hi[a] };
            }
            cps.push(x);
        }
        Self::new(basis, cps)
    }

    pub fn unit_cube(dim: usize) -> Result<Self> {
        Self::box_map(dim, [0.0; MAX_DIM], [1.0; MAX_DIM])
    }

    /// Quarter annulus between radii `r0 < r1` in the first quadrant; the first
    /// parametric direction is radial, the second angular.
    pub fn quarter_annulus(r0: f64, r1: f64) -> Result<Self> {
        if !(r0 > 0.0 && r1 > r0) {
            return Err(Error::InvalidParameter(format!("radii {r0}, {r1}")));
        }
        let radial = KnotVector::uniform(1, 1);
        let angular = KnotVector::uniform(2, 1);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut weights = Vec::new();
        let mut cps = Vec::new();
        for (px, py, w) in [(1.0, 0.0, 1.0), (1.0, 1.0, s), (0.0, 1.0, 1.0)] {
            for r in [r0, r1] {
                cps.push([r * px, r * py, 0.0]);
                weights.push(w);
            }
        }
        let basis = TensorBasis::rational(vec![radial, angular], weights)?;
        Self::new(basis, cps)
    }

    fn detect_affine(&self) -> Option<([f64; MAX_DIM], Mat)> {
        if self.basis.weights().is_some() {
            return None;
        }
        let d = self.dim();
        if self.basis.dirs().iter().any(|kv| kv.degree() != 1 || kv.num_spans() != 1) {
            return None;
        }
        // multilinear map is affine when opposite edges are parallel translates
        let origin = self.control_points[0];
        let mut edge = [[0.0; MAX_DIM]; MAX_DIM];
        for a in 0..d {
            let mut m = [0; MAX_DIM];
            m[a] = 1;
            let p = self.control_points[self.basis.flat_index(m)];
            for i in 0..d {
                edge[a][i] = p[i] - origin[i];
            }
        }
        let affine = (0..self.basis.num_basis()).all(|flat| {
            let m = self.basis.multi_index(flat);
            let p = self.control_points[flat];
            (0..d).all(|i| {
                let pred: f64 = origin[i] + (0..d).map(|a| m[a] as f64 * edge[a][i]).sum::<f64>();
                (pred - p[i]).abs() <= 1e-14 * (1.0 + pred.abs())
            })
        });
        let mut jac = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..d {
            for a in 0..d {
                jac[i][a] = edge[a][i];
            }
        }
        affine.then_some((origin, jac))
    }

    /// Checks `det J > 0` at Gauss points of every geometry element.
    fn validate(&self) -> Result<()> {
        let d = self.dim();
        let q = QuadratureRule::new(d, 3);
        let bps: Vec<Vec<f64>> = self.basis.dirs().iter().map(|kv| kv.breakpoints()).collect();
        let mut n = [1; MAX_DIM];
        for a in 0..d {
            n[a] = bps[a].len() - 1;
        }
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let c = [i, j, k];
                    let mut lo = [0.0; MAX_DIM];
                    let mut hi = [0.0; MAX_DIM];
                    for a in 0..d {
                        lo[a] = bps[a][c[a]];
                        hi[a] = bps[a][c[a] + 1];
                    }
                    let (pts, _) = q.mapped(&lo, &hi);
                    for x in pts {
                        self.map_point(&x)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn is_affine(&self) -> bool {
        self.affine.is_some()
    }

    pub fn control_points(&self) -> &[[f64; MAX_DIM]] {
        &self.control_points
    }

    /// Axis-aligned box containing the control points (and hence the domain).
    pub fn bounding_box(&self) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        let mut lo = [f64::INFINITY; MAX_DIM];
        let mut hi = [f64::NEG_INFINITY; MAX_DIM];
        for p in &self.control_points {
            for a in 0..self.dim() {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for a in self.dim()..MAX_DIM {
            lo[a] = 0.0;
            hi[a] = 0.0;
        }
        (lo, hi)
    }

    /// Physical point, Jacobian, its determinant and the map's second
    /// derivatives. Fails when `det J <= 0`.
    pub fn map_point(&self, xi: &[f64; MAX_DIM]) -> Result<MappedPoint> {
        let d = self.dim();
        if let Some((origin, jac)) = &self.affine {
            let mut x = *origin;
            for i in 0..d {
                for a in 0..d {
                    x[i] += jac[i][a] * xi[a];
                }
            }
            let det = determinant(d, jac);
            if !(det > 0.0) {
                return Err(Error::DegenerateGeometry { det, xi: *xi });
            }
            return Ok(MappedPoint { x, jac: *jac, det, hess: [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM] });
        }
        self.map_point_spline(xi)
    }

    fn map_point_spline(&self, xi: &[f64; MAX_DIM]) -> Result<MappedPoint> {
        let d = self.dim();
        let e = self.basis.eval(&xi[..d])?;
        let mut x = [0.0; MAX_DIM];
        let mut jac = [[0.0; MAX_DIM]; MAX_DIM];
        let mut hess = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for (k, &i) in e.indices.iter().enumerate() {
            let cp = &self.control_points[i];
            for c in 0..d {
                x[c] += e.values[k] * cp[c];
                for a in 0..d {
                    jac[c][a] += e.grads[k][a] * cp[c];
                    for b in 0..d {
                        hess[c][a][b] += e.hessians[k][a][b] * cp[c];
                    }
                }
            }
        }
        let det = determinant(d, &jac);
        if !(det > 0.0) {
            return Err(Error::DegenerateGeometry { det, xi: *xi });
        }
        Ok(MappedPoint { x, jac, det, hess })
    }
}

pub fn determinant(d: usize, m: &Mat) -> f64 {
    match d {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        _ => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
    }
}

pub fn inverse(d: usize, m: &Mat) -> Mat {
    let det = determinant(d, m);
    let mut inv = [[0.0; MAX_DIM]; MAX_DIM];
    match d {
        1 => inv[0][0] = 1.0 / m[0][0],
        2 => {
            inv[0][0] = m[1][1] / det;
            inv[0][1] = -m[0][1] / det;
            inv[1][0] = -m[1][0] / det;
            inv[1][1] = m[0][0] / det;
        }
        _ => {
            for i in 0..3 {
                for j in 0..3 {
                    let (i1, i2) = ((j + 1) % 3, (j + 2) % 3);
                    let (j1, j2) = ((i + 1) % 3, (i + 2) % 3);
                    inv[i][j] = (m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]) / det;
                }
            }
        }
    }
    inv
}

/// `J^{-T} g`: physical gradient from a parametric one.
pub fn physical_gradient(d: usize, jac: &Mat, grad: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
    let inv = inverse(d, jac);
    push_gradient(d, &inv, grad)
}

/// `J^{-T} g` given `J^{-1}`.
#[inline]
pub fn push_gradient(d: usize, inv: &Mat, grad: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
    let mut out = [0.0; MAX_DIM];
    for i in 0..d {
        for a in 0..d {
            out[i] += inv[a][i] * grad[a];
        }
    }
    out
}

/// Largest singular value of the leading `d x d` block.
pub fn spectral_norm(d: usize, m: &Mat) -> f64 {
    let mut mtm = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                mtm[i][j] += m[k][i] * m[k][j];
            }
        }
    }
    match d {
        1 => mtm[0][0].sqrt(),
        2 => {
            let tr = mtm[0][0] + mtm[1][1];
            let det = mtm[0][0] * mtm[1][1] - mtm[0][1] * mtm[1][0];
            (0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())).sqrt()
        }
        _ => {
            let mut v = [1.0, 0.7, 0.4];
            let mut lam = 0.0;
            for _ in 0..200 {
                let mut w = [0.0; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        w[i] += mtm[i][j] * v[j];
                    }
                }
                let n = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
                if n == 0.0 {
                    return 0.0;
                }
                let new = n / (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                v = [w[0] / n, w[1] / n, w[2] / n];
                if (new - lam).abs() <= 1e-15 * new {
                    lam = new;
                    break;
                }
                lam = new;
            }
            lam.sqrt()
        }
    }
}

/// Geometric data of one quadrature point of an element.
#[derive(Clone, Copy, Debug)]
pub struct QuadPoint {
    /// Parametric coordinates.
    pub xi: [f64; MAX_DIM],
    /// Physical coordinates.
    pub x: [f64; MAX_DIM],
    /// Weight including `|det J|` and the parametric cell volume.
    pub weight: f64,
    /// `J^{-1}`.
    pub jinv: Mat,
    /// `J^{-1} J^{-T}`, used for Laplacians.
    pub metric: Mat,
    pub hess: [Mat; MAX_DIM],
}

/// Quadrature data of element `e` of `basis` under `geom`.
pub fn element_quadrature(
    basis: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    e: usize,
) -> Result<Vec<QuadPoint>> {
    let d = basis.dim();
    let (lo, hi) = basis.element_box(e);
    let (pts, w) = rule.mapped(&lo, &hi);
    pts.iter()
        .zip(&w)
        .map(|(xi, &w)| {
            let m = geom.map_point(xi)?;
            let jinv = inverse(d, &m.jac);
            let mut metric = [[0.0; MAX_DIM]; MAX_DIM];
            for a in 0..d {
                for b in 0..d {
                    for i in 0..d {
                        metric[a][b] += jinv[a][i] * jinv[b][i];
                    }
                }
            }
            Ok(QuadPoint { xi: *xi, x: m.x, weight: w * m.det, jinv, metric, hess: m.hess })
        })
        .collect()
}

/// Integral of `f` over the physical image of element `e`.
pub fn integrate<F: Fn(&[f64; MAX_DIM]) -> f64>(
    basis: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    e: usize,
    f: F,
) -> Result<f64> {
    Ok(element_quadrature(basis, geom, rule, e)?.iter().map(|q| q.weight * f(&q.x)).sum())
}

/// Physical element size: the parametric diameter scaled by the largest
/// spectral norm of `J` over the quadrature points.
pub fn element_size(basis: &HierarchicalBasis, geom: &GeometryMap, rule: &QuadratureRule, e: usize) -> Result<f64> {
    let d = basis.dim();
    let (lo, hi) = basis.element_box(e);
    let diam = (0..d).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt();
    let (pts, _) = rule.mapped(&lo, &hi);
    let mut s: f64 = 0.0;
    for xi in &pts {
        s = s.max(spectral_norm(d, &geom.map_point(xi)?.jac));
    }
    Ok(s * diam)
}

/// Leaf mesh of a hierarchical basis with cached element sizes.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub h: Vec<f64>,
    pub level: Vec<usize>,
    pub boxes: Vec<([f64; MAX_DIM], [f64; MAX_DIM])>,
    pub centers: Vec<[f64; MAX_DIM]>,
}

impl Mesh {
    pub fn new(basis: &HierarchicalBasis, geom: &GeometryMap, rule: &QuadratureRule) -> Result<Self> {
        let n = basis.num_elements();
        let mut h = Vec::with_capacity(n);
        let mut centers = Vec::with_capacity(n);
        let mut boxes = Vec::with_capacity(n);
        for e in 0..n {
            h.push(element_size(basis, geom, rule, e)?);
            let (lo, hi) = basis.element_box(e);
            let mut c = [0.0; MAX_DIM];
            for a in 0..basis.dim() {
                c[a] = 0.5 * (lo[a] + hi[a]);
            }
            centers.push(geom.map_point(&c)?.x);
            boxes.push((lo, hi));
        }
        let level = basis.elements().iter().map(|e| e.grid_level).collect();
        Ok(Self { h, level, boxes, centers })
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// One line per element: `level; lo; hi; h`.
    pub fn dump(&self, dim: usize) -> String {
        let mut s = String::new();
        for e in 0..self.len() {
            let (lo, hi) = &self.boxes[e];
            let f = |v: &[f64; MAX_DIM]| v[..dim].iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
            let _ = writeln!(s, "{}; {}; {}; {:.6e}", self.level[e], f(lo), f(hi), self.h[e]);
        }
        s
    }
}
