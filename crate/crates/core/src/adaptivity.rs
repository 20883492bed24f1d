//! Marking strategies, refinement of marked elements and the
//! solve–estimate–mark–refine loop.

use std::time::Instant;

use serde::Serialize;

use crate::assembly::{assemble_primal, ScalarFn, VectorFn};
use crate::estimates::{
    compute_majorant, compute_minorant, efficiency_and_eoc, energy_error, residual_indicator, MajorantSettings,
    StepReport,
};
use crate::geometry::{GeometryMap, Mesh};
use crate::hierarchy::{CellBox, DomainHierarchy, HierarchicalBasis, Truncation, DEFAULT_MAX_DEPTH};
use crate::quadrature::QuadratureRule;
use crate::sparse::{solve, SolverKind};
use crate::{Error, Result, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "strategy", content = "theta", rename_all = "lowercase")]
pub enum Marking {
    Uniform,
    /// Elements whose indicator reaches `theta` times the maximum.
    Garu(f64),
    /// The `ceil((1 - theta) n)` largest indicators.
    Puca(f64),
    /// Smallest set of largest indicators carrying `(1 - theta)` of the total.
    Bulk(f64),
}

impl Marking {
    pub fn parse(name: &str, theta: f64) -> Result<Self> {
        let m = match name.to_ascii_lowercase().as_str() {
            "uniform" => Marking::Uniform,
            "garu" => Marking::Garu(theta),
            "puca" => Marking::Puca(theta),
            "bulk" => Marking::Bulk(theta),
            _ => return Err(Error::InvalidParameter(format!("unknown marking '{name}'"))),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Marking::Uniform => Ok(()),
            Marking::Garu(t) | Marking::Puca(t) | Marking::Bulk(t) => {
                if t > 0.0 && t < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("theta = {t} must lie in (0, 1)")))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Marking::Uniform => "uniform",
            Marking::Garu(_) => "garu",
            Marking::Puca(_) => "puca",
            Marking::Bulk(_) => "bulk",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkOutcome {
    /// Marked element indices in increasing order.
    pub marked: Vec<usize>,
    /// The indicator vanished everywhere.
    pub converged: bool,
}

/// Selects elements for refinement from non-negative indicators.
pub fn mark(indicator: &[f64], criterion: Marking) -> Result<MarkOutcome> {
    criterion.validate()?;
    if indicator.is_empty() {
        return Err(Error::InvalidParameter("no elements to mark".into()));
    }
    if let Some(v) = indicator.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidParameter(format!("indicator value {v}")));
    }
    let n = indicator.len();
    if criterion == Marking::Uniform {
        return Ok(MarkOutcome { marked: (0..n).collect(), converged: false });
    }
    let max = indicator.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(MarkOutcome { marked: Vec::new(), converged: true });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| indicator[b].total_cmp(&indicator[a]).then(a.cmp(&b)));
    let mut marked: Vec<usize> = match criterion {
        Marking::Uniform => unreachable!(),
        Marking::Garu(t) => (0..n).filter(|&i| indicator[i] >= t * max).collect(),
        Marking::Puca(t) => {
            // guard against (1 - t) n landing a rounding error above an integer
            let count = (((1.0 - t) * n as f64) - 1e-9).ceil().max(1.0) as usize;
            order[..count.min(n)].to_vec()
        }
        Marking::Bulk(t) => {
            let total: f64 = indicator.iter().sum();
            let target = (1.0 - t) * total * (1.0 - 1e-12);
            let mut s = 0.0;
            let mut out = Vec::new();
            for &i in &order {
                out.push(i);
                s += indicator[i];
                if s >= target {
                    break;
                }
            }
            out
        }
    };
    marked.sort_unstable();
    Ok(MarkOutcome { marked, converged: false })
}

/// Inserts, for every marked element, the box of its children one level
/// finer (grown by one cell through `insert_box`).
pub fn refine_marked(basis: &HierarchicalBasis, marked: &[usize]) -> Result<HierarchicalBasis> {
    if marked.is_empty() {
        return Ok(basis.clone());
    }
    let d = basis.dim();
    let max = basis.domain().max_depth();
    let mut boxes = Vec::with_capacity(marked.len());
    for &e in marked {
        let el = basis.elements().get(e).ok_or(Error::IndexOutOfRange { index: e, size: basis.num_elements() })?;
        let level = el.grid_level + 1;
        if level > max {
            return Err(Error::DepthLimit(max));
        }
        let mut b = CellBox::new([0; MAX_DIM], [0; MAX_DIM]);
        for a in 0..d {
            b.lo[a] = 2 * el.cell[a];
            b.hi[a] = 2 * el.cell[a] + 1;
        }
        boxes.push((level, b));
    }
    basis.insert_boxes(&boxes)
}

/// Continuous problem: geometry, data and (optionally) the exact solution.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub geometry: GeometryMap,
    /// Cells per direction of the unrefined parametric mesh.
    pub base: [usize; MAX_DIM],
    pub f: ScalarFn,
    /// Dirichlet data; homogeneous when absent.
    pub dirichlet: Option<ScalarFn>,
    pub u: Option<ScalarFn>,
    pub grad_u: Option<VectorFn>,
    pub friedrichs: f64,
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }
}

/// Source of the marking indicator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndicatorSource {
    Majorant,
    Residual,
    ExactError,
}

impl std::str::FromStr for IndicatorSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "majorant" => Ok(Self::Majorant),
            "residual" => Ok(Self::Residual),
            "exact-error" | "error" => Ok(Self::ExactError),
            _ => Err(Error::InvalidParameter(format!("unknown indicator '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AdaptiveConfig {
    pub p: usize,
    pub q: usize,
    /// Degree of the minorant space; no minorant when absent.
    pub r: Option<usize>,
    /// Flux mesh size ratio (power of two).
    #[serde(rename = "M")]
    pub flux_ratio: usize,
    /// Minorant mesh size ratio (power of two).
    #[serde(rename = "L")]
    pub minorant_ratio: usize,
    pub steps: usize,
    pub warmup: usize,
    pub marking: Marking,
    pub indicator: IndicatorSource,
    pub majorant_iterations: usize,
    pub solver: SolverKind,
    pub max_depth: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            p: 2,
            q: 3,
            r: None,
            flux_ratio: 1,
            minorant_ratio: 1,
            steps: 4,
            warmup: 0,
            marking: Marking::Uniform,
            indicator: IndicatorSource::Majorant,
            majorant_iterations: MajorantSettings::default().iterations,
            solver: SolverKind::Direct,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if self.q < self.p {
            return bad(format!("q = {} below p = {}", self.q, self.p));
        }
        if let Some(r) = self.r {
            if r < self.p {
                return bad(format!("r = {r} below p = {}", self.p));
            }
        }
        for (n, v) in [("M", self.flux_ratio), ("L", self.minorant_ratio)] {
            if v == 0 || !v.is_power_of_two() {
                return bad(format!("{n} = {v} must be a power of two"));
            }
        }
        if self.majorant_iterations == 0 {
            return bad("majorant iterations must be positive".into());
        }
        self.marking.validate()
    }

    /// Points per direction of the shared quadrature rule.
    pub fn quadrature_order(&self) -> usize {
        self.p.max(self.q).max(self.r.unwrap_or(0)) + 2
    }
}

pub struct RunResult {
    pub rows: Vec<StepReport>,
    /// Mesh dump of each step.
    pub meshes: Vec<String>,
    /// Physical centres of the elements marked after each step.
    pub marked_centers: Vec<Vec<[f64; MAX_DIM]>>,
    pub basis: HierarchicalBasis,
    pub coeffs: Vec<f64>,
    /// Marking found nothing to refine.
    pub converged: bool,
    /// Error that ended the run early.
    pub failure: Option<Error>,
}

/// Coefficients in `new` of the quasi-interpolant of a field on `old`:
/// values at the Greville points of the new functions.
pub fn prolongate(old: &HierarchicalBasis, coeffs: &[f64], new: &HierarchicalBasis) -> Result<Vec<f64>> {
    let d = new.dim();
    (0..new.num_functions()).map(|i| old.eval_field(coeffs, &new.greville_point(i)[..d])).collect()
}

fn prolongate_vector(old: &HierarchicalBasis, y: &[f64], new: &HierarchicalBasis, d: usize) -> Result<Vec<f64>> {
    let n = old.num_functions();
    let mut out = Vec::with_capacity(d * new.num_functions());
    for a in 0..d {
        out.extend(prolongate(old, &y[a * n..(a + 1) * n], new)?);
    }
    Ok(out)
}

fn log2(v: usize) -> usize {
    v.trailing_zeros() as usize
}

/// Runs `warmup` uniform refinements and then `steps + 1` solve/estimate
/// passes with marking and refinement in between.
pub fn adaptive_solve(problem: &Problem, config: &AdaptiveConfig) -> Result<RunResult> {
    config.validate()?;
    let d = problem.dim();
    if config.indicator == IndicatorSource::ExactError && problem.grad_u.is_none() {
        return Err(Error::NoExactSolution(problem.name.clone()));
    }
    let domain = DomainHierarchy::new(d, problem.base, config.max_depth)?;
    let mut basis = HierarchicalBasis::new(config.p, domain, Truncation::Truncated)?;
    for _ in 0..config.warmup {
        basis = basis.refine_uniform()?;
    }
    let mut result = RunResult {
        rows: Vec::new(),
        meshes: Vec::new(),
        marked_centers: Vec::new(),
        basis: basis.clone(),
        coeffs: Vec::new(),
        converged: false,
        failure: None,
    };
    let mut prev: Option<(HierarchicalBasis, Vec<f64>, HierarchicalBasis, Vec<f64>)> = None;
    for step in 0..=config.steps {
        match run_step(problem, config, &basis, prev.as_ref(), step) {
            Ok(out) => {
                result.rows.push(out.row);
                result.meshes.push(out.mesh.dump(d));
                result.basis = basis.clone();
                result.coeffs = out.coeffs.clone();
                if step == config.steps {
                    break;
                }
                let m = match mark(&out.indicator, config.marking) {
                    Ok(m) => m,
                    Err(e) => {
                        result.failure = Some(e);
                        break;
                    }
                };
                result.marked_centers.push(m.marked.iter().map(|&e| out.mesh.centers[e]).collect());
                result.rows.last_mut().unwrap().marked = m.marked.len();
                if m.converged {
                    result.converged = true;
                    break;
                }
                let next = if config.marking == Marking::Uniform {
                    basis.refine_uniform()
                } else {
                    refine_marked(&basis, &m.marked)
                };
                prev = Some((basis, out.coeffs, out.flux_basis, out.flux));
                match next {
                    Ok(b) => basis = b,
                    Err(e) => {
                        result.failure = Some(e);
                        break;
                    }
                }
            }
            Err(e) => {
                result.failure = Some(e);
                break;
            }
        }
    }
    efficiency_and_eoc(d, &mut result.rows);
    Ok(result)
}

struct StepOutput {
    row: StepReport,
    mesh: Mesh,
    coeffs: Vec<f64>,
    flux_basis: HierarchicalBasis,
    flux: Vec<f64>,
    indicator: Vec<f64>,
}

fn run_step(
    problem: &Problem,
    config: &AdaptiveConfig,
    basis: &HierarchicalBasis,
    prev: Option<&(HierarchicalBasis, Vec<f64>, HierarchicalBasis, Vec<f64>)>,
    step: usize,
) -> Result<StepOutput> {
    let d = problem.dim();
    let geom = &problem.geometry;
    let rule = QuadratureRule::new(d, config.quadrature_order());
    let mut row = StepReport { refinement: step + 1, ..Default::default() };

    let t = Instant::now();
    let sys = assemble_primal(basis, geom, &rule, &problem.f, problem.dirichlet.as_ref())?;
    row.timings.assembly_u = t.elapsed().as_secs_f64();
    let guess = match (config.solver, prev) {
        (SolverKind::Cg, Some((pb, pc, _, _))) => Some(sys.restrict(&prolongate(pb, pc, basis)?)),
        _ => None,
    };
    let t = Instant::now();
    let x = solve(config.solver, &sys.matrix, &sys.rhs, guess.as_deref())?;
    row.timings.solve_u = t.elapsed().as_secs_f64();
    let coeffs = sys.expand(&x);
    row.dof_u = basis.num_functions();
    row.elements = basis.num_elements();

    let mut err_elem = None;
    if let Some(gu) = &problem.grad_u {
        let t = Instant::now();
        let e2 = energy_error(basis, geom, &rule, &coeffs, gu)?;
        row.timings.eval_error = t.elapsed().as_secs_f64();
        row.error = Some(e2.iter().sum::<f64>().sqrt());
        err_elem = Some(e2);
    }

    let t = Instant::now();
    let mesh = Mesh::new(basis, geom, &rule)?;
    let eta2 = residual_indicator(basis, geom, &rule, &coeffs, &problem.f, &mesh.h)?;
    row.eta = eta2.iter().sum::<f64>().sqrt();
    row.timings.eval_residual = t.elapsed().as_secs_f64();

    let flux_basis =
        HierarchicalBasis::new(config.q, basis.domain().coarsened(log2(config.flux_ratio)), Truncation::Truncated)?;
    let flux_guess = match (config.solver, prev) {
        (SolverKind::Cg, Some((_, _, fb, fy))) if !fy.is_empty() => Some(prolongate_vector(fb, fy, &flux_basis, d)?),
        _ => None,
    };
    let settings =
        MajorantSettings { iterations: config.majorant_iterations, solver: config.solver, ..Default::default() };
    let t = Instant::now();
    let maj = compute_majorant(
        basis,
        &coeffs,
        &flux_basis,
        geom,
        &rule,
        &problem.f,
        problem.friedrichs,
        &settings,
        flux_guess.as_deref(),
    )?;
    let total = t.elapsed().as_secs_f64();
    row.timings.assembly_y = maj.t_assembly;
    row.timings.solve_y = maj.t_solve;
    row.timings.eval_majorant = (total - maj.t_assembly - maj.t_solve).max(0.0);
    row.majorant = maj.majorant;
    row.m_d = maj.m_d;
    row.m_f = maj.m_f;
    row.beta = maj.beta;
    row.majorant_iterations = maj.iterations;
    row.dof_y = d * flux_basis.num_functions();

    if let Some(r) = config.r {
        let w_basis =
            HierarchicalBasis::new(r, basis.domain().coarsened(log2(config.minorant_ratio)), Truncation::Truncated)?;
        let min = compute_minorant(
            basis,
            &coeffs,
            &w_basis,
            geom,
            &rule,
            &problem.f,
            problem.dirichlet.as_ref(),
            config.solver,
        )?;
        row.minorant = Some(min.minorant);
        row.minorant_clamped = min.clamped;
        row.dof_w = w_basis.num_functions();
        row.timings.assembly_w = min.t_assembly;
        row.timings.solve_w = min.t_solve;
    }

    let indicator = match config.indicator {
        IndicatorSource::Majorant => maj.m_d_elem.clone(),
        IndicatorSource::Residual => eta2,
        IndicatorSource::ExactError => err_elem.unwrap_or_default(),
    };
    Ok(StepOutput { row, mesh, coeffs, flux_basis, flux: maj.flux, indicator })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn garu_example() {
        let m = mark(&[4.0, 3.0, 2.0, 1.0], Marking::Garu(0.5)).unwrap();
        assert_eq!(m.marked, vec![0, 1, 2]);
    }

    #[test]
    fn puca_example() {
        let v: Vec<f64> = (1..=10).rev().map(|x| x as f64).collect();
        assert_eq!(mark(&v, Marking::Puca(0.7)).unwrap().marked, vec![0, 1, 2]);
    }

    #[test]
    fn bulk_example() {
        let m = mark(&[4.0, 3.0, 2.0, 1.0], Marking::Bulk(0.4)).unwrap();
        assert_eq!(m.marked, vec![0, 1]);
    }

    #[test]
    fn zero_indicator_converges() {
        let m = mark(&[0.0; 5], Marking::Bulk(0.3)).unwrap();
        assert!(m.converged && m.marked.is_empty());
    }

    #[test]
    fn corner_refinement_covers_four_cells() {
        let b = HierarchicalBasis::uniform(2, 2, [4, 4, 1], Truncation::Truncated).unwrap();
        let e = b.element_at(0, [0, 0, 0]).unwrap();
        let r = refine_marked(&b, &[e]).unwrap();
        let covered = r.domain().boxes(1);
        assert_eq!(covered, vec![CellBox::new2([0, 0], [2, 2])]);
        // level-1 region spans the coarse cells (0,0), (1,0), (0,1), (1,1)
        let coarse: Vec<_> = (0..r.num_elements()).filter(|&i| r.elements()[i].grid_level == 0).collect();
        assert_eq!(coarse.len(), 12);
    }

    #[test]
    fn uniform_marking_doubles_elements() {
        let b = HierarchicalBasis::uniform(2, 2, [3, 3, 1], Truncation::Truncated).unwrap();
        let all = mark(&vec![1.0; b.num_elements()], Marking::Uniform).unwrap();
        let r = refine_marked(&b, &all.marked).unwrap();
        assert_eq!(r.num_elements(), 4 * b.num_elements());
        assert_eq!(r.num_functions(), b.refine_uniform().unwrap().num_functions());
    }
}
