//! Galerkin assembly on hierarchical spline spaces: the primal Poisson
//! system with Dirichlet elimination and the flux operators used by the
//! majorant.

use std::sync::Arc;

use rayon::prelude::*;

use crate::geometry::{element_quadrature, push_gradient, GeometryMap, QuadPoint};
use crate::hierarchy::{ElementBasisValues, HierarchicalBasis};
use crate::quadrature::{GaussLegendre, QuadratureRule};
use crate::sparse::{solve_direct, CsrMatrix};
use crate::tensor::{from_local, to_local, Factors};
use crate::{Error, Result, MAX_DIM};

pub type ScalarFn = Arc<dyn Fn(&[f64; MAX_DIM]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64; MAX_DIM]) -> [f64; MAX_DIM] + Send + Sync>;

/// Physical values, gradients and (optionally) Laplacians of an element's
/// functions at quadrature points, stored function-major.
#[derive(Clone, Debug, Default)]
pub struct PhysicalBasis {
    pub funcs: Vec<usize>,
    pub nq: usize,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; MAX_DIM]>,
    pub laplacians: Vec<f64>,
}

/// Evaluates the functions of `basis` element `e` at `qps`, which must lie in
/// the closure of that element. `nders = 2` also fills Laplacians.
pub fn physical_basis(basis: &HierarchicalBasis, e: usize, qps: &[QuadPoint], nders: usize) -> PhysicalBasis {
    let d = basis.dim();
    let xis: Vec<[f64; MAX_DIM]> = qps.iter().map(|q| q.xi).collect();
    let mut ev = ElementBasisValues::default();
    basis.eval_element(e, &xis, nders, &mut ev);
    let nq = qps.len();
    let nf = ev.nfuncs;
    let mut grads = std::mem::take(&mut ev.grads);
    let mut laplacians = Vec::with_capacity(if nders >= 2 { nf * nq } else { 0 });
    if nders >= 1 {
        for f in 0..nf {
            for (q, qp) in qps.iter().enumerate() {
                let g = push_gradient(d, &qp.jinv, &grads[f * nq + q]);
                grads[f * nq + q] = g;
                if nders >= 2 {
                    let h = &ev.hessians[f * nq + q];
                    let mut lap = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            let mut hab = h[a][b];
                            for k in 0..d {
                                hab -= g[k] * qp.hess[k][a][b];
                            }
                            lap += qp.metric[a][b] * hab;
                        }
                    }
                    laplacians.push(lap);
                }
            }
        }
    }
    PhysicalBasis { funcs: basis.elements()[e].funcs.clone(), nq, values: ev.values, grads, laplacians }
}

/// Value, gradient and Laplacian of the expansion `coeffs` at each point.
pub fn field_at(pb: &PhysicalBasis, coeffs: &[f64]) -> (Vec<f64>, Vec<[f64; MAX_DIM]>, Vec<f64>) {
    let nq = pb.nq;
    let mut v = vec![0.0; nq];
    let mut g = vec![[0.0; MAX_DIM]; if pb.grads.is_empty() { 0 } else { nq }];
    let mut l = vec![0.0; if pb.laplacians.is_empty() { 0 } else { nq }];
    for (f, &id) in pb.funcs.iter().enumerate() {
        let c = coeffs[id];
        if c == 0.0 {
            continue;
        }
        for q in 0..nq {
            v[q] += c * pb.values[f * nq + q];
            if !g.is_empty() {
                let gf = &pb.grads[f * nq + q];
                for a in 0..MAX_DIM {
                    g[q][a] += c * gf[a];
                }
            }
            if !l.is_empty() {
                l[q] += c * pb.laplacians[f * nq + q];
            }
        }
    }
    (v, g, l)
}

/// Linear system on the free coefficients after Dirichlet elimination.
#[derive(Clone, Debug)]
pub struct PrimalSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Equation number of each global function, `None` when fixed.
    pub free: Vec<Option<usize>>,
    /// Full coefficient vector holding the Dirichlet values (zero elsewhere).
    pub fixed: Vec<f64>,
}

impl PrimalSystem {
    pub fn num_free(&self) -> usize {
        self.rhs.len()
    }

    /// Full coefficient vector from the free solution.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut c = self.fixed.clone();
        for (i, f) in self.free.iter().enumerate() {
            if let Some(k) = f {
                c[i] = x[*k];
            }
        }
        c
    }

    /// Free part of a full coefficient vector.
    pub fn restrict(&self, c: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.num_free()];
        for (i, f) in self.free.iter().enumerate() {
            if let Some(k) = f {
                x[*k] = c[i];
            }
        }
        x
    }
}

/// Quadrature points on parametric boundary faces of element `e`, with
/// weights including the physical surface measure.
fn boundary_points(
    basis: &HierarchicalBasis,
    geom: &GeometryMap,
    face_rule: &QuadratureRule,
    e: usize,
) -> Result<Vec<QuadPoint>> {
    let d = basis.dim();
    let (lo, hi) = basis.element_box(e);
    let mut out = Vec::new();
    for a in 0..d {
        for (side, at) in [(lo[a] == 0.0, 0.0), (hi[a] == 1.0, 1.0)] {
            if !side {
                continue;
            }
            let others: Vec<usize> = (0..d).filter(|&b| b != a).collect();
            for (pt, w) in face_rule.points.iter().zip(&face_rule.weights) {
                let mut xi = [0.0; MAX_DIM];
                let mut wt = *w;
                xi[a] = at;
                for (k, &b) in others.iter().enumerate() {
                    xi[b] = lo[b] + pt[k] * (hi[b] - lo[b]);
                    wt *= hi[b] - lo[b];
                }
                let m = geom.map_point(&xi)?;
                let jinv = crate::geometry::inverse(d, &m.jac);
                // Nanson: dS = det J |J^{-T} n| dS_ref
                let n = (0..d).map(|i| jinv[a][i] * jinv[a][i]).sum::<f64>().sqrt();
                out.push(QuadPoint {
                    xi,
                    x: m.x,
                    weight: wt * m.det * n,
                    jinv,
                    metric: [[0.0; MAX_DIM]; MAX_DIM],
                    hess: m.hess,
                });
            }
        }
    }
    Ok(out)
}

/// Boundary functions with non-zero trace and their coefficients: the
/// boundary L2 projection of `data` (zero when `data` is `None`).
pub fn dirichlet_values(
    basis: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    data: Option<&ScalarFn>,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let d = basis.dim();
    let face_rule = QuadratureRule::new(d - 1, rule.order);
    let n = basis.num_functions();
    let candidates: Vec<usize> = (0..n).filter(|&i| basis.is_boundary(i)).collect();
    let mut slot = vec![usize::MAX; n];
    for (k, &i) in candidates.iter().enumerate() {
        slot[i] = k;
    }
    let boundary_elems: Vec<usize> = (0..basis.num_elements())
        .filter(|&e| {
            let (lo, hi) = basis.element_box(e);
            (0..d).any(|a| lo[a] == 0.0 || hi[a] == 1.0)
        })
        .collect();
    let locals: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = boundary_elems
        .par_iter()
        .map(|&e| {
            let qps = boundary_points(basis, geom, &face_rule, e)?;
            let pb = physical_basis(basis, e, &qps, 0);
            let nf = pb.funcs.len();
            let nq = pb.nq;
            let mut m = vec![0.0; nf * nf];
            let mut r = vec![0.0; nf];
            for (q, qp) in qps.iter().enumerate() {
                let g = data.map_or(0.0, |f| f(&qp.x));
                for i in 0..nf {
                    let vi = pb.values[i * nq + q] * qp.weight;
                    r[i] += vi * g;
                    for j in 0..nf {
                        m[i * nf + j] += vi * pb.values[j * nq + q];
                    }
                }
            }
            Ok((pb.funcs, m, r))
        })
        .collect::<Result<_>>()?;
    let nb = candidates.len();
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; nb];
    for (tag, (funcs, m, r)) in locals.iter().enumerate() {
        let nf = funcs.len();
        for i in 0..nf {
            let si = slot[funcs[i]];
            if si == usize::MAX {
                continue;
            }
            rhs[si] += r[i];
            for j in 0..nf {
                let sj = slot[funcs[j]];
                if sj != usize::MAX && m[i * nf + j] != 0.0 {
                    trip.push((si, sj, tag, m[i * nf + j]));
                }
            }
        }
    }
    let mb = CsrMatrix::from_tagged_triplets(nb, nb, trip);
    let diag = mb.diagonal();
    let scale = diag.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..nb).filter(|&k| diag[k] > 1e-12 * scale).collect();
    let ids: Vec<usize> = keep.iter().map(|&k| candidates[k]).collect();
    if data.is_none() || ids.is_empty() {
        return Ok((ids.clone(), vec![0.0; ids.len()]));
    }
    let mut pos = vec![usize::MAX; nb];
    for (k, &b) in keep.iter().enumerate() {
        pos[b] = k;
    }
    let mut t = Vec::new();
    for i in 0..nb {
        if pos[i] == usize::MAX {
            continue;
        }
        for (j, v) in mb.row(i) {
            if pos[j] != usize::MAX {
                t.push((pos[i], pos[j], v));
            }
        }
    }
    let mk = CsrMatrix::from_triplets(keep.len(), keep.len(), &t);
    let rk: Vec<f64> = keep.iter().map(|&k| rhs[k]).collect();
    let vals = solve_direct(&mk, &rk)?;
    Ok((ids, vals))
}

/// Stiffness system `(grad u, grad v) = (f, v)` with Dirichlet data eliminated.
pub fn assemble_primal(
    basis: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    f: &ScalarFn,
    dirichlet: Option<&ScalarFn>,
) -> Result<PrimalSystem> {
    let d = basis.dim();
    if geom.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: geom.dim() });
    }
    let n = basis.num_functions();
    let (bids, bvals) = dirichlet_values(basis, geom, rule, dirichlet)?;
    let mut fixed = vec![0.0; n];
    let mut free = vec![Some(0); n];
    for (&i, &v) in bids.iter().zip(&bvals) {
        fixed[i] = v;
        free[i] = None;
    }
    let mut k = 0;
    for slot in free.iter_mut().flatten() {
        *slot = k;
        k += 1;
    }
    let nfree = k;
    let order: Vec<usize> = (0..basis.num_elements()).collect();
    let locals = local_stiffness(basis, geom, rule, f, &order)?;
    let mut trip = Vec::with_capacity(locals.iter().map(|l| l.0.len().pow(2)).sum());
    let mut rhs = vec![0.0; nfree];
    for (&e, (funcs, kl, fl)) in order.iter().zip(&locals) {
        let nf = funcs.len();
        for i in 0..nf {
            let Some(ri) = free[funcs[i]] else { continue };
            let mut r = fl[i];
            for j in 0..nf {
                let v = kl[i * nf + j];
                match free[funcs[j]] {
                    Some(cj) => trip.push((ri, cj, e, v)),
                    None => r -= v * fixed[funcs[j]],
                }
            }
            rhs[ri] += r;
        }
    }
    Ok(PrimalSystem { matrix: CsrMatrix::from_tagged_triplets(nfree, nfree, trip), rhs, free, fixed })
}

type Local = (Vec<usize>, Vec<f64>, Vec<f64>);

/// Element stiffness matrices and load vectors in the given element order.
pub fn local_stiffness(
    basis: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    f: &ScalarFn,
    order: &[usize],
) -> Result<Vec<Local>> {
    let d = basis.dim();
    order
        .par_iter()
        .map(|&e| {
            let qps = element_quadrature(basis, geom, rule, e)?;
            let pb = physical_basis(basis, e, &qps, 1);
            let nf = pb.funcs.len();
            let nq = pb.nq;
            let mut kl = vec![0.0; nf * nf];
            let mut fl = vec![0.0; nf];
            for (q, qp) in qps.iter().enumerate() {
                let fq = f(&qp.x) * qp.weight;
                for i in 0..nf {
                    fl[i] += fq * pb.values[i * nq + q];
                    let gi = pb.grads[i * nq + q];
                    for j in i..nf {
                        let gj = &pb.grads[j * nq + q];
                        let mut s = 0.0;
                        for a in 0..d {
                            s += gi[a] * gj[a];
                        }
                        kl[i * nf + j] += s * qp.weight;
                    }
                }
            }
            for i in 0..nf {
                for j in 0..i {
                    kl[i * nf + j] = kl[j * nf + i];
                }
            }
            Ok((pb.funcs, kl, fl))
        })
        .collect()
}

/// Operators of the flux problem for a vector field whose components all live
/// in the scalar space `flux`; unknowns are ordered component-major.
#[derive(Clone, Debug)]
pub struct FluxOperators {
    /// `(div psi_i, div psi_j)`.
    pub div: CsrMatrix,
    /// `(psi_i, psi_j)`.
    pub mass: CsrMatrix,
    /// `(f, div psi_j)`.
    pub z: Vec<f64>,
    /// `(grad u_h, psi_j)`.
    pub g: Vec<f64>,
}

impl FluxOperators {
    /// Matrix `(C_F^2 / beta) Div + M` and load `-(C_F^2 / beta) z + g`.
    pub fn system(&self, cf: f64, beta: f64) -> (CsrMatrix, Vec<f64>) {
        let s = cf * cf / beta;
        let a = self.div.linear_combination(s, &self.mass, 1.0);
        let b = self.z.iter().zip(&self.g).map(|(z, g)| -s * z + g).collect();
        (a, b)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Element of `coarse` containing element `e` of `fine`.
pub fn containing_element(fine: &HierarchicalBasis, coarse: &HierarchicalBasis, e: usize) -> Result<usize> {
    let (lo, hi) = fine.element_box(e);
    let mut c = [0.0; MAX_DIM];
    for a in 0..fine.dim() {
        c[a] = 0.5 * (lo[a] + hi[a]);
    }
    let ce = coarse.locate(&c[..fine.dim()])?;
    let (clo, chi) = coarse.element_box(ce);
    if (0..fine.dim()).all(|a| clo[a] <= lo[a] + 1e-14 && hi[a] <= chi[a] + 1e-14) {
        Ok(ce)
    } else {
        Err(Error::InvalidParameter(format!("element {e} is not contained in a coarse element")))
    }
}

/// Every element of `fine` lies inside an element of `coarse`.
pub fn refines(fine: &HierarchicalBasis, coarse: &HierarchicalBasis) -> bool {
    (0..fine.num_elements()).all(|e| containing_element(fine, coarse, e).is_ok())
}

/// Flux operators: matrices on the flux mesh, load vectors on the mesh of
/// `u_basis` (which must refine the flux mesh).
pub fn assemble_flux_operators(
    flux: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    f: &ScalarFn,
    u_basis: &HierarchicalBasis,
    u_coeffs: &[f64],
) -> Result<FluxOperators> {
    let d = flux.dim();
    let n = flux.num_functions();
    let nt = d * n;
    let locals: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = (0..flux.num_elements())
        .into_par_iter()
        .map(|e| {
            let qps = element_quadrature(flux, geom, rule, e)?;
            let pb = physical_basis(flux, e, &qps, 1);
            let nf = pb.funcs.len();
            let nq = pb.nq;
            let nl = d * nf;
            let mut dv = vec![0.0; nl * nl];
            let mut ms = vec![0.0; nf * nf];
            for (q, qp) in qps.iter().enumerate() {
                let w = qp.weight;
                for i in 0..nf {
                    let vi = pb.values[i * nq + q] * w;
                    let gi = pb.grads[i * nq + q];
                    for j in 0..nf {
                        ms[i * nf + j] += vi * pb.values[j * nq + q];
                        let gj = &pb.grads[j * nq + q];
                        for a in 0..d {
                            for b in 0..d {
                                dv[(a * nf + i) * nl + b * nf + j] += gi[a] * gj[b] * w;
                            }
                        }
                    }
                }
            }
            Ok((pb.funcs, dv, ms))
        })
        .collect::<Result<_>>()?;
    let mut tdiv = Vec::new();
    let mut tmass = Vec::new();
    for (e, (funcs, dv, ms)) in locals.iter().enumerate() {
        let nf = funcs.len();
        let nl = d * nf;
        for a in 0..d {
            for i in 0..nf {
                let r = a * n + funcs[i];
                for b in 0..d {
                    for j in 0..nf {
                        let c = b * n + funcs[j];
                        tdiv.push((r, c, e, dv[(a * nf + i) * nl + b * nf + j]));
                        if a == b {
                            tmass.push((r, c, e, ms[i * nf + j]));
                        }
                    }
                }
            }
        }
    }
    let div = CsrMatrix::from_tagged_triplets(nt, nt, tdiv);
    let mass = CsrMatrix::from_tagged_triplets(nt, nt, tmass);

    let vec_locals: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = (0..u_basis.num_elements())
        .into_par_iter()
        .map(|e| flux_loads(flux, geom, rule, f, u_basis, u_coeffs, e))
        .collect::<Result<_>>()?;
    let mut z = vec![0.0; nt];
    let mut g = vec![0.0; nt];
    for (funcs, zl, gl) in &vec_locals {
        let nf = funcs.len();
        for a in 0..d {
            for i in 0..nf {
                z[a * n + funcs[i]] += zl[a * nf + i];
                g[a * n + funcs[i]] += gl[a * nf + i];
            }
        }
    }
    Ok(FluxOperators { div, mass, z, g })
}

/// Contributions of element `e` of `u_basis` to `z` and `g`, computed by
/// sum factorisation on the element's tensor quadrature grid.
fn flux_loads(
    flux: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    f: &ScalarFn,
    u_basis: &HierarchicalBasis,
    u_coeffs: &[f64],
    e: usize,
) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let d = flux.dim();
    let qps = element_quadrature(u_basis, geom, rule, e)?;
    let gl = GaussLegendre::new(rule.order);
    let (lo, hi) = u_basis.element_box(e);
    let pts: [Vec<f64>; MAX_DIM] = std::array::from_fn(|a| {
        if a < d {
            gl.points.iter().map(|t| lo[a] + t * (hi[a] - lo[a])).collect()
        } else {
            vec![0.0]
        }
    });
    let nloc_u = (u_basis.degree() + 1).pow(d as u32);
    let uf = Factors::new(u_basis, e, &pts);
    let cu = to_local(&u_basis.elements()[e], nloc_u, u_coeffs);
    let du: Vec<Vec<f64>> = (0..d).map(|k| uf.interpolate(&cu, Some(k))).collect();

    let fe = containing_element(u_basis, flux, e)?;
    let ff = Factors::new(flux, fe, &pts);
    let nq = qps.len();
    let mut gw = vec![vec![0.0; nq]; d];
    let mut zw = vec![vec![0.0; nq]; d * d];
    for (q, qp) in qps.iter().enumerate() {
        let mut gh = [0.0; MAX_DIM];
        for k in 0..d {
            gh[k] = du[k][q];
        }
        let gu = push_gradient(d, &qp.jinv, &gh);
        let fw = f(&qp.x) * qp.weight;
        for i in 0..d {
            gw[i][q] = qp.weight * gu[i];
            for k in 0..d {
                zw[i * d + k][q] = fw * qp.jinv[k][i];
            }
        }
    }
    let el = &flux.elements()[fe];
    let nloc = (flux.degree() + 1).pow(d as u32);
    let nf = el.funcs.len();
    let mut z = vec![0.0; d * nf];
    let mut g = vec![0.0; d * nf];
    for i in 0..d {
        let mut zl = vec![0.0; nloc];
        for k in 0..d {
            let w = &zw[i * d + k];
            if w.iter().all(|v| *v == 0.0) {
                continue;
            }
            for (a, b) in zl.iter_mut().zip(ff.integrate(w, Some(k))) {
                *a += b;
            }
        }
        z[i * nf..(i + 1) * nf].copy_from_slice(&from_local(el, nloc, &zl));
        g[i * nf..(i + 1) * nf].copy_from_slice(&from_local(el, nloc, &ff.integrate(&gw[i], None)));
    }
    Ok((el.funcs.clone(), z, g))
}

/// Flux system for a given `beta` and Friedrichs constant `cf`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_flux_system(
    flux: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    f: &ScalarFn,
    u_basis: &HierarchicalBasis,
    u_coeffs: &[f64],
    cf: f64,
    beta: f64,
) -> Result<(CsrMatrix, Vec<f64>)> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta = {beta}")));
    }
    Ok(assemble_flux_operators(flux, geom, rule, f, u_basis, u_coeffs)?.system(cf, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::Truncation;

    #[test]
    fn bilinear_stiffness_center_entry() {
        let b = HierarchicalBasis::uniform(2, 1, [2, 2, 1], Truncation::Truncated).unwrap();
        let g = GeometryMap::unit_cube(2).unwrap();
        let q = QuadratureRule::new(2, 3);
        let f: ScalarFn = Arc::new(|_| 0.0);
        let s = assemble_primal(&b, &g, &q, &f, None).unwrap();
        assert_eq!(s.num_free(), 1);
        assert!((s.matrix.get(0, 0) - 8.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn factorised_loads_match_pointwise_evaluation() {
        use crate::hierarchy::CellBox;
        let b = HierarchicalBasis::uniform(2, 2, [4, 4, 1], Truncation::Truncated)
            .unwrap()
            .insert_box(2, CellBox::new2([3, 2], [6, 5]))
            .unwrap();
        let flux = HierarchicalBasis::new(3, b.domain().coarsened(1), Truncation::Truncated).unwrap();
        assert!(flux.elements().iter().any(|el| !el.identity));
        let geom = GeometryMap::quarter_annulus(1.0, 2.0).unwrap();
        let rule = QuadratureRule::new(2, 5);
        let f: ScalarFn = Arc::new(|x| (x[0] * x[1]).sin() + 1.0);
        let c: Vec<f64> = (0..b.num_functions()).map(|i| (i as f64 * 0.7).cos()).collect();
        let ops = assemble_flux_operators(&flux, &geom, &rule, &f, &b, &c).unwrap();
        let n = flux.num_functions();
        let mut z = vec![0.0; 2 * n];
        let mut g = vec![0.0; 2 * n];
        for e in 0..b.num_elements() {
            let qps = element_quadrature(&b, &geom, &rule, e).unwrap();
            let ub = physical_basis(&b, e, &qps, 1);
            let (_, gu, _) = field_at(&ub, &c);
            let fe = containing_element(&b, &flux, e).unwrap();
            let pb = physical_basis(&flux, fe, &qps, 1);
            for (i, &id) in pb.funcs.iter().enumerate() {
                for (q, qp) in qps.iter().enumerate() {
                    for a in 0..2 {
                        z[a * n + id] += f(&qp.x) * qp.weight * pb.grads[i * pb.nq + q][a];
                        g[a * n + id] += gu[q][a] * qp.weight * pb.values[i * pb.nq + q];
                    }
                }
            }
        }
        for k in 0..2 * n {
            assert!((z[k] - ops.z[k]).abs() < 1e-12, "z[{k}]: {} vs {}", z[k], ops.z[k]);
            assert!((g[k] - ops.g[k]).abs() < 1e-12, "g[{k}]: {} vs {}", g[k], ops.g[k]);
        }
    }

    #[test]
    fn traversal_order_does_not_change_locals() {
        let b = HierarchicalBasis::uniform(2, 2, [3, 3, 1], Truncation::Truncated).unwrap();
        let g = GeometryMap::quarter_annulus(1.0, 2.0).unwrap();
        let q = QuadratureRule::new(2, 4);
        let f: ScalarFn = Arc::new(|x| x[0] * x[1]);
        let fwd: Vec<usize> = (0..b.num_elements()).collect();
        let rev: Vec<usize> = fwd.iter().rev().copied().collect();
        let a = local_stiffness(&b, &g, &q, &f, &fwd).unwrap();
        let mut r = local_stiffness(&b, &g, &q, &f, &rev).unwrap();
        r.reverse();
        for (x, y) in a.iter().zip(&r) {
            assert_eq!(x.1, y.1);
        }
    }
}
