//! Functional error bounds (majorant and minorant), the residual indicator,
//! exact errors, efficiency indices and convergence orders.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{
    assemble_flux_operators, assemble_primal, containing_element, field_at, physical_basis, refines, ScalarFn, VectorFn,
};
use crate::geometry::{element_quadrature, GeometryMap};
use crate::hierarchy::HierarchicalBasis;
use crate::quadrature::QuadratureRule;
use crate::sparse::{solve, SolverKind};
use crate::{Error, Result, MAX_DIM};

/// Friedrichs constant of a box with the given side lengths.
pub fn friedrichs_box(lengths: &[f64]) -> f64 {
    let s: f64 = lengths.iter().map(|l| l.powi(-2)).sum();
    1.0 / (std::f64::consts::PI * s.sqrt())
}

/// Upper bound of the Friedrichs constant from the bounding box of the
/// geometry's control points.
pub fn friedrichs_constant(geom: &GeometryMap) -> f64 {
    let (lo, hi) = geom.bounding_box();
    let l: Vec<f64> = (0..geom.dim()).map(|a| hi[a] - lo[a]).collect();
    friedrichs_box(&l)
}

/// `(1 + beta) m_d^2 + (1 + 1/beta) C_F^2 m_f^2`, square-rooted.
pub fn majorant_value(m_d: f64, m_f: f64, beta: f64, cf: f64) -> f64 {
    ((1.0 + beta) * m_d * m_d + (1.0 + 1.0 / beta) * cf * cf * m_f * m_f).sqrt()
}

/// Squared energy error `|grad(u - u_h)|^2_K` per element.
pub fn energy_error(
    basis: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    coeffs: &[f64],
    grad_u: &VectorFn,
) -> Result<Vec<f64>> {
    let d = basis.dim();
    (0..basis.num_elements())
        .into_par_iter()
        .map(|e| {
            let qps = element_quadrature(basis, geom, rule, e)?;
            let pb = physical_basis(basis, e, &qps, 1);
            let (_, g, _) = field_at(&pb, coeffs);
            Ok(qps
                .iter()
                .zip(&g)
                .map(|(qp, gh)| {
                    let gu = grad_u(&qp.x);
                    qp.weight * (0..d).map(|a| (gu[a] - gh[a]).powi(2)).sum::<f64>()
                })
                .sum())
        })
        .collect()
}

/// Squared residual indicator `h_K^2 |f + lap u_h|^2_K` per element.
pub fn residual_indicator(
    basis: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    coeffs: &[f64],
    f: &ScalarFn,
    h: &[f64],
) -> Result<Vec<f64>> {
    (0..basis.num_elements())
        .into_par_iter()
        .map(|e| {
            let qps = element_quadrature(basis, geom, rule, e)?;
            let pb = physical_basis(basis, e, &qps, 2);
            let (_, _, lap) = field_at(&pb, coeffs);
            let s: f64 = qps.iter().zip(&lap).map(|(qp, l)| qp.weight * (f(&qp.x) + l).powi(2)).sum();
            Ok(h[e] * h[e] * s)
        })
        .collect()
}

/// Per-element squared `|y - grad u_h|` and `|div y + f|` for a flux with
/// component-major coefficients `y` in `flux`, integrated on the mesh of `u_basis`.
#[allow(clippy::too_many_arguments)]
pub fn flux_residuals(
    u_basis: &HierarchicalBasis,
    u_coeffs: &[f64],
    flux: &HierarchicalBasis,
    y: &[f64],
    geom: &GeometryMap,
    rule: &QuadratureRule,
    f: &ScalarFn,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = u_basis.dim();
    let n = flux.num_functions();
    let pairs: Vec<(f64, f64)> = (0..u_basis.num_elements())
        .into_par_iter()
        .map(|e| {
            let qps = element_quadrature(u_basis, geom, rule, e)?;
            let ub = physical_basis(u_basis, e, &qps, 1);
            let (_, gu, _) = field_at(&ub, u_coeffs);
            let fe = containing_element(u_basis, flux, e)?;
            let pb = physical_basis(flux, fe, &qps, 1);
            let nq = pb.nq;
            let mut md = 0.0;
            let mut mf = 0.0;
            for (q, qp) in qps.iter().enumerate() {
                let mut yv = [0.0; MAX_DIM];
                let mut div = 0.0;
                for (i, &id) in pb.funcs.iter().enumerate() {
                    let v = pb.values[i * nq + q];
                    let g = &pb.grads[i * nq + q];
                    for a in 0..d {
                        let c = y[a * n + id];
                        yv[a] += c * v;
                        div += c * g[a];
                    }
                }
                md += qp.weight * (0..d).map(|a| (yv[a] - gu[q][a]).powi(2)).sum::<f64>();
                mf += qp.weight * (div + f(&qp.x)).powi(2);
            }
            Ok((md, mf))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

#[derive(Clone, Debug)]
pub struct MajorantOutcome {
    pub majorant: f64,
    pub m_d: f64,
    pub m_f: f64,
    /// Weight minimising the bound for the final flux.
    pub beta: f64,
    pub iterations: usize,
    /// Majorant after each flux solve.
    pub trace: Vec<f64>,
    pub flux: Vec<f64>,
    /// Squared `|y - grad u_h|_K` per element of the `u` mesh.
    pub m_d_elem: Vec<f64>,
    pub m_f_elem: Vec<f64>,
    pub t_assembly: f64,
    pub t_solve: f64,
}

/// Settings of the majorant minimisation.
#[derive(Clone, Copy, Debug)]
pub struct MajorantSettings {
    pub iterations: usize,
    pub solver: SolverKind,
    /// Stop early once `C_F^2 m_f^2 / m_d^2` falls below this value.
    pub early_exit: f64,
}

impl Default for MajorantSettings {
    fn default() -> Self {
        Self { iterations: 2, solver: SolverKind::Direct, early_exit: 1e-4 }
    }
}

/// Minimises the majorant over the flux space by alternating flux solves
/// and updates of `beta`, starting from `beta = 1`.
#[allow(clippy::too_many_arguments)]
pub fn compute_majorant(
    u_basis: &HierarchicalBasis,
    u_coeffs: &[f64],
    flux: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    f: &ScalarFn,
    cf: f64,
    settings: &MajorantSettings,
    guess: Option<&[f64]>,
) -> Result<MajorantOutcome> {
    if settings.iterations == 0 {
        return Err(Error::InvalidParameter("majorant needs at least one iteration".into()));
    }
    let t0 = Instant::now();
    let ops = assemble_flux_operators(flux, geom, rule, f, u_basis, u_coeffs)?;
    let mut t_assembly = t0.elapsed().as_secs_f64();
    let mut t_solve = 0.0;
    let mut beta = 1.0;
    let mut y: Vec<f64> = guess.filter(|g| g.len() == ops.len()).map(<[f64]>::to_vec).unwrap_or_default();
    let mut out = None;
    let mut trace = Vec::new();
    for it in 0..settings.iterations {
        let t = Instant::now();
        let (a, b) = ops.system(cf, beta);
        t_assembly += t.elapsed().as_secs_f64();
        let t = Instant::now();
        y = solve(settings.solver, &a, &b, if y.is_empty() { None } else { Some(&y) })?;
        t_solve += t.elapsed().as_secs_f64();
        let (md_e, mf_e) = flux_residuals(u_basis, u_coeffs, flux, &y, geom, rule, f)?;
        let md = md_e.iter().sum::<f64>().sqrt();
        let mf = mf_e.iter().sum::<f64>().sqrt();
        trace.push(md + cf * mf);
        let stop = md == 0.0 || mf == 0.0 || (cf * mf / md).powi(2) < settings.early_exit;
        if md > 0.0 && mf > 0.0 {
            beta = cf * mf / md;
        }
        out = Some((md, mf, md_e, mf_e, it + 1));
        if stop {
            break;
        }
    }
    let (m_d, m_f, m_d_elem, m_f_elem, iterations) = out.unwrap();
    Ok(MajorantOutcome {
        majorant: m_d + cf * m_f,
        m_d,
        m_f,
        beta,
        iterations,
        trace,
        flux: y,
        m_d_elem,
        m_f_elem,
        t_assembly,
        t_solve,
    })
}

#[derive(Clone, Debug)]
pub struct MinorantOutcome {
    /// `sqrt(max(0, 2 (J(w_h) - J(u_h))))`.
    pub minorant: f64,
    /// Unclamped squared value.
    pub squared: f64,
    pub clamped: bool,
    pub w: Vec<f64>,
    pub t_assembly: f64,
    pub t_solve: f64,
}

/// Lower bound from the energy gain of a Galerkin solution `w_h` in a richer
/// space: with `J(v) = (f, v) - |grad v|^2 / 2`, the squared minorant is
/// `2 (J(w_h) - J(u_h))`.
#[allow(clippy::too_many_arguments)]
pub fn compute_minorant(
    u_basis: &HierarchicalBasis,
    u_coeffs: &[f64],
    w_basis: &HierarchicalBasis,
    geom: &GeometryMap,
    rule: &QuadratureRule,
    f: &ScalarFn,
    dirichlet: Option<&ScalarFn>,
    solver: SolverKind,
) -> Result<MinorantOutcome> {
    let t = Instant::now();
    let sys = assemble_primal(w_basis, geom, rule, f, dirichlet)?;
    let t_assembly = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let x = solve(solver, &sys.matrix, &sys.rhs, None)?;
    let t_solve = t.elapsed().as_secs_f64();
    let w = sys.expand(&x);
    let squared = energy_gain(u_basis, u_coeffs, w_basis, &w, geom, rule, f)?;
    Ok(MinorantOutcome { minorant: squared.max(0.0).sqrt(), squared, clamped: squared < 0.0, w, t_assembly, t_solve })
}

/// `2 (J(w) - J(u_h))` evaluated as `sum_K 2 (f, w - u_h)_K - (grad(w - u_h), grad(w + u_h))_K`,
/// which avoids cancelling two large energies. The sum runs over the finer
/// of the two meshes, one of which must refine the other.
pub fn energy_gain(
    u_basis: &HierarchicalBasis,
    u_coeffs: &[f64],
    w_basis: &HierarchicalBasis,
    w: &[f64],
    geom: &GeometryMap,
    rule: &QuadratureRule,
    f: &ScalarFn,
) -> Result<f64> {
    let d = u_basis.dim();
    let w_finer = !refines(u_basis, w_basis);
    if w_finer && !refines(w_basis, u_basis) {
        return Err(Error::InvalidParameter("minorant and primal meshes are not nested".into()));
    }
    let (fine, fine_c, coarse, coarse_c) =
        if w_finer { (w_basis, w, u_basis, u_coeffs) } else { (u_basis, u_coeffs, w_basis, w) };
    let parts: Vec<f64> = (0..fine.num_elements())
        .into_par_iter()
        .map(|e| {
            let qps = element_quadrature(fine, geom, rule, e)?;
            let fb = physical_basis(fine, e, &qps, 1);
            let (fv, fg, _) = field_at(&fb, fine_c);
            let ce = containing_element(fine, coarse, e)?;
            let cb = physical_basis(coarse, ce, &qps, 1);
            let (cv, cg, _) = field_at(&cb, coarse_c);
            let (uv, ug, wv, wg) = if w_finer { (cv, cg, fv, fg) } else { (fv, fg, cv, cg) };
            Ok(qps
                .iter()
                .enumerate()
                .map(|(q, qp)| {
                    let mut s = 2.0 * f(&qp.x) * (wv[q] - uv[q]);
                    for a in 0..d {
                        s -= (wg[q][a] - ug[q][a]) * (wg[q][a] + ug[q][a]);
                    }
                    qp.weight * s
                })
                .sum())
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// `I_eff = estimate / error`; `None` when the error vanishes.
pub fn efficiency(estimate: f64, error: f64) -> Option<f64> {
    (error > 0.0).then(|| estimate / error)
}

/// Experimental order of convergence in terms of the mesh size,
/// `d ln(e_prev / e) / ln(N / N_prev)`; `None` when undefined.
pub fn eoc(dim: usize, prev: (usize, f64), cur: (usize, f64)) -> Option<f64> {
    let (n0, e0) = prev;
    let (n1, e1) = cur;
    if n1 == n0 || e0 <= 0.0 || e1 <= 0.0 {
        return None;
    }
    Some(dim as f64 * (e0 / e1).ln() / (n1 as f64 / n0 as f64).ln())
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timings {
    pub assembly_u: f64,
    pub solve_u: f64,
    pub assembly_y: f64,
    pub solve_y: f64,
    pub assembly_w: f64,
    pub solve_w: f64,
    pub eval_error: f64,
    pub eval_majorant: f64,
    pub eval_residual: f64,
}

/// One row of the convergence table.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StepReport {
    pub refinement: usize,
    pub dof_u: usize,
    pub dof_y: usize,
    pub dof_w: usize,
    pub elements: usize,
    pub error: Option<f64>,
    pub majorant: f64,
    pub m_d: f64,
    pub m_f: f64,
    pub beta: f64,
    pub majorant_iterations: usize,
    pub eta: f64,
    pub minorant: Option<f64>,
    pub minorant_clamped: bool,
    pub ieff_majorant: Option<f64>,
    pub ieff_eta: Option<f64>,
    pub ieff_minorant: Option<f64>,
    pub majorant_over_minorant: Option<f64>,
    pub eoc: Option<f64>,
    pub marked: usize,
    pub timings: Timings,
}

/// Fills efficiency indices and orders of convergence of a sequence of steps.
pub fn efficiency_and_eoc(dim: usize, rows: &mut [StepReport]) {
    for i in 0..rows.len() {
        let r = &mut rows[i];
        if let Some(e) = r.error {
            r.ieff_majorant = efficiency(r.majorant, e);
            r.ieff_eta = efficiency(r.eta, e);
            r.ieff_minorant = r.minorant.and_then(|m| efficiency(m, e));
        }
        r.majorant_over_minorant = r.minorant.filter(|&m| m > 0.0).map(|m| r.majorant / m);
        r.eoc = None;
        if i > 0 {
            if let (Some(e0), Some(e1)) = (rows[i - 1].error, rows[i].error) {
                rows[i].eoc = eoc(dim, (rows[i - 1].dof_u, e0), (rows[i].dof_u, e1));
            }
        }
    }
}

pub const CSV_HEADER: &str = "ref,err,maj,m_d,m_f,ieff_maj,ieff_eta,eoc,min,ieff_min,maj_over_min,eta,beta,\
dof_u,dof_y,dof_w,elements,marked,t_as_u,t_sol_u,t_as_y,t_sol_y,t_as_w,t_sol_w,t_ew_err,t_ew_maj,t_ew_eta";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6e}"))
}

/// Writes the table as CSV with [`CSV_HEADER`].
pub fn write_csv<W: Write>(mut w: W, rows: &[StepReport]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        let t = &r.timings;
        writeln!(
            w,
            "{},{},{:.6e},{:.6e},{:.6e},{},{},{},{},{},{},{:.6e},{:.6e},{},{},{},{},{},{:.4e},{:.4e},{:.4e},{:.4e},{:.4e},{:.4e},{:.4e},{:.4e},{:.4e}",
            r.refinement,
            opt(r.error),
            r.majorant,
            r.m_d,
            r.m_f,
            opt(r.ieff_majorant),
            opt(r.ieff_eta),
            opt(r.eoc),
            opt(r.minorant),
            opt(r.ieff_minorant),
            opt(r.majorant_over_minorant),
            r.eta,
            r.beta,
            r.dof_u,
            r.dof_y,
            r.dof_w,
            r.elements,
            r.marked,
            t.assembly_u,
            t.solve_u,
            t.assembly_y,
            t.solve_y,
            t.assembly_w,
            t.solve_w,
            t.eval_error,
            t.eval_majorant,
            t.eval_residual
        )?;
    }
    Ok(())
}
