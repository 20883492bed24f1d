//! Built-in benchmark problems, run configuration and report output.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::adaptivity::{adaptive_solve, AdaptiveConfig, IndicatorSource, Marking, Problem, RunResult};
use crate::assembly::{physical_basis, ScalarFn, VectorFn};
use crate::estimates::{friedrichs_constant, write_csv, StepReport};
use crate::geometry::{element_quadrature, GeometryMap};
use crate::hierarchy::{HierarchicalBasis, Truncation};
use crate::quadrature::QuadratureRule;
use crate::sparse::SolverKind;
use crate::{Error, Result, MAX_DIM};

/// A registered benchmark problem.
#[derive(Clone)]
pub struct ProblemCase {
    pub name: &'static str,
    pub description: String,
    pub problem: Problem,
    /// Default number of uniform warm-up refinements.
    pub warmup: usize,
}

/// Parameters of parametrised cases.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CaseParams {
    pub k1: f64,
    pub k2: f64,
}

impl Default for CaseParams {
    fn default() -> Self {
        Self { k1: 1.0, k2: 1.0 }
    }
}

const CASES: [(&str, &str); 5] = [
    ("ex1", "unit square, polynomial solution (1-x)x^2 (1-y)y, homogeneous Dirichlet data"),
    ("ex2", "unit square, u = sin(k1 pi x) sin(k2 pi y), parameters k1, k2"),
    ("ex3", "rectangle (0,2)x(0,1), sharp Gaussian peak at (1.4, 0.95), homogeneous Dirichlet data"),
    ("ex5", "quarter annulus with radii 1 and 2, harmonic u = cos(x) e^y, non-homogeneous Dirichlet data"),
    ("ex6", "unit cube, polynomial solution prod (1-x_i) x_i^2, homogeneous Dirichlet data"),
];

/// Names and descriptions of the built-in cases in a fixed order.
pub fn list_cases() -> Vec<(&'static str, &'static str)> {
    CASES.to_vec()
}

fn sfn<F: Fn(&[f64; MAX_DIM]) -> f64 + Send + Sync + 'static>(f: F) -> ScalarFn {
    Arc::new(f)
}

fn vfn<F: Fn(&[f64; MAX_DIM]) -> [f64; MAX_DIM] + Send + Sync + 'static>(f: F) -> VectorFn {
    Arc::new(f)
}

/// Builds the case `name`.
pub fn case(name: &str, params: CaseParams) -> Result<ProblemCase> {
    let (_, desc) = CASES.iter().find(|(n, _)| *n == name).ok_or_else(|| Error::UnknownCase(name.to_string()))?;
    let mut description = desc.to_string();
    let mut warmup = 0;
    let (name, geometry, f, dirichlet, u, grad_u): (
        &'static str,
        GeometryMap,
        ScalarFn,
        Option<ScalarFn>,
        ScalarFn,
        VectorFn,
    ) = match name {
        "ex1" => (
            "ex1",
            GeometryMap::unit_cube(2)?,
            sfn(|x| {
                let (a, b) = (x[0], x[1]);
                -(2.0 * (1.0 - 3.0 * a) * (1.0 - b) * b - 2.0 * (1.0 - a) * a * a)
            }),
            None,
            sfn(|x| (1.0 - x[0]) * x[0] * x[0] * (1.0 - x[1]) * x[1]),
            vfn(|x| {
                let (a, b) = (x[0], x[1]);
                [(2.0 * a - 3.0 * a * a) * (1.0 - b) * b, (1.0 - a) * a * a * (1.0 - 2.0 * b), 0.0]
            }),
        ),
        "ex2" => {
            let CaseParams { k1, k2 } = params;
            if !(k1.is_finite() && k2.is_finite()) {
                return Err(Error::InvalidParameter("k1, k2 must be finite".into()));
            }
            description = format!("{desc} (k1 = {k1}, k2 = {k2})");
            if k1 == 6.0 && k2 == 3.0 {
                warmup = 4;
            }
            (
                "ex2",
                GeometryMap::unit_cube(2)?,
                sfn(move |x| (k1 * k1 + k2 * k2) * PI * PI * (k1 * PI * x[0]).sin() * (k2 * PI * x[1]).sin()),
                None,
                sfn(move |x| (k1 * PI * x[0]).sin() * (k2 * PI * x[1]).sin()),
                vfn(move |x| {
                    [
                        k1 * PI * (k1 * PI * x[0]).cos() * (k2 * PI * x[1]).sin(),
                        k2 * PI * (k1 * PI * x[0]).sin() * (k2 * PI * x[1]).cos(),
                        0.0,
                    ]
                }),
            )
        }
        "ex3" => {
            const C: [f64; 2] = [1.4, 0.95];
            const K: f64 = 100.0;
            warmup = 3;
            let parts = |x: &[f64; MAX_DIM]| {
                let (dx, dy) = (x[0] - C[0], x[1] - C[1]);
                let e = (-K * (dx * dx + dy * dy)).exp();
                let a = x[0] * x[0] - 2.0 * x[0];
                let b = x[1] * x[1] - x[1];
                (dx, dy, e, a, b, 2.0 * x[0] - 2.0, 2.0 * x[1] - 1.0)
            };
            (
                "ex3",
                GeometryMap::box_map(2, [0.0; MAX_DIM], [2.0, 1.0, 0.0])?,
                sfn(move |x| {
                    let (dx, dy, e, a, b, da, db) = parts(x);
                    let lap = (2.0 * a + 2.0 * b) * e - 4.0 * K * (da * b * dx + a * db * dy) * e
                        + a * b * (4.0 * K * K * (dx * dx + dy * dy) - 4.0 * K) * e;
                    -lap
                }),
                None,
                sfn(move |x| {
                    let (_, _, e, a, b, _, _) = parts(x);
                    a * b * e
                }),
                vfn(move |x| {
                    let (dx, dy, e, a, b, da, db) = parts(x);
                    [(da * b - 2.0 * K * dx * a * b) * e, (a * db - 2.0 * K * dy * a * b) * e, 0.0]
                }),
            )
        }
        "ex5" => {
            warmup = 4;
            let u = sfn(|x| x[0].cos() * x[1].exp());
            (
                "ex5",
                GeometryMap::quarter_annulus(1.0, 2.0)?,
                sfn(|_| 0.0),
                Some(u.clone()),
                u,
                vfn(|x| [-x[0].sin() * x[1].exp(), x[0].cos() * x[1].exp(), 0.0]),
            )
        }
        "ex6" => {
            let g = |t: f64| t * t - t * t * t;
            let dg = |t: f64| 2.0 * t - 3.0 * t * t;
            let ddg = |t: f64| 2.0 - 6.0 * t;
            (
                "ex6",
                GeometryMap::unit_cube(3)?,
                sfn(move |x| {
                    -(ddg(x[0]) * g(x[1]) * g(x[2]) + g(x[0]) * ddg(x[1]) * g(x[2]) + g(x[0]) * g(x[1]) * ddg(x[2]))
                }),
                None,
                sfn(move |x| g(x[0]) * g(x[1]) * g(x[2])),
                vfn(move |x| {
                    [dg(x[0]) * g(x[1]) * g(x[2]), g(x[0]) * dg(x[1]) * g(x[2]), g(x[0]) * g(x[1]) * dg(x[2])]
                }),
            )
        }
        _ => return Err(Error::UnknownCase(name.to_string())),
    };
    let friedrichs = friedrichs_constant(&geometry);
    let base = [1; MAX_DIM];
    Ok(ProblemCase {
        name,
        description,
        problem: Problem {
            name: name.to_string(),
            geometry,
            base,
            f,
            dirichlet,
            u: Some(u),
            grad_u: Some(grad_u),
            friedrichs,
        },
        warmup,
    })
}

/// Largest weak residual `|(grad u, grad phi) - (f, phi)|` over interior
/// degree-2 B-splines of a 4-per-direction mesh, plus the largest boundary
/// mismatch between `u` and the Dirichlet data.
pub fn consistency_residual(case: &ProblemCase) -> Result<f64> {
    let pr = &case.problem;
    let (Some(u), Some(gu)) = (&pr.u, &pr.grad_u) else {
        return Ok(0.0);
    };
    let d = pr.dim();
    let mut base = [1; MAX_DIM];
    base[..d].fill(4);
    let basis = HierarchicalBasis::uniform(d, 2, base, Truncation::Truncated)?;
    let (refinements, g) = if d == 3 { (1, 8) } else { (3, 10) };
    let rule = QuadratureRule::new(d, g);
    let sub_basis = (0..refinements).try_fold(basis.clone(), |b, _| b.refine_uniform())?;
    let mut res = vec![0.0; basis.num_functions()];
    for e in 0..sub_basis.num_elements() {
        let qps = element_quadrature(&sub_basis, &pr.geometry, &rule, e)?;
        let ce = crate::assembly::containing_element(&sub_basis, &basis, e)?;
        let pb = physical_basis(&basis, ce, &qps, 1);
        for (i, &id) in pb.funcs.iter().enumerate() {
            for (q, qp) in qps.iter().enumerate() {
                let gx = gu(&qp.x);
                let g = &pb.grads[i * pb.nq + q];
                let dot: f64 = (0..d).map(|a| gx[a] * g[a]).sum();
                res[id] += qp.weight * (dot - (pr.f)(&qp.x) * pb.values[i * pb.nq + q]);
            }
        }
    }
    let mut worst: f64 = 0.0;
    for id in 0..basis.num_functions() {
        if !basis.is_boundary(id) {
            worst = worst.max(res[id].abs());
        }
    }
    // boundary data
    let n: usize = 9;
    for face in 0..2 * d {
        let a = face / 2;
        for s in 0..n.pow(d as u32 - 1) {
            let mut xi = [0.0; MAX_DIM];
            xi[a] = (face % 2) as f64;
            let mut rest = s;
            for b in (0..d).filter(|&b| b != a) {
                xi[b] = (rest % n) as f64 / (n - 1) as f64;
                rest /= n;
            }
            let x = pr.geometry.map_point(&xi)?.x;
            let data = pr.dirichlet.as_ref().map_or(0.0, |g| g(&x));
            worst = worst.max((u(&x) - data).abs());
        }
    }
    Ok(worst)
}

/// Complete run description: case, parameters, solver settings and output.
#[derive(Clone, Debug, Serialize)]
pub struct RunSettings {
    pub case: String,
    pub params: CaseParams,
    pub config: AdaptiveConfig,
    pub out: Option<PathBuf>,
}

/// Settings overrides as `key=value` pairs (config file or CLI).
pub type Overrides = BTreeMap<String, String>;

pub const CONFIG_KEYS: [&str; 16] = [
    "p",
    "q",
    "r",
    "M",
    "L",
    "steps",
    "warmup",
    "marking",
    "theta",
    "maj-iters",
    "solver",
    "indicator",
    "k1",
    "k2",
    "out",
    "max-depth",
];

/// Parses a flat `key = value` file; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Overrides> {
    let mut out = Overrides::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim();
        if !CONFIG_KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key '{k}'", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("invalid value '{v}' for '{k}'")))
}

/// Resolves settings from case defaults and overrides (later maps win).
pub fn resolve_settings(case_name: &str, layers: &[&Overrides]) -> Result<RunSettings> {
    let mut merged = Overrides::new();
    for l in layers {
        for (k, v) in l.iter() {
            if !CONFIG_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key '{k}'")));
            }
            merged.insert(k.clone(), v.clone());
        }
    }
    let mut params = CaseParams::default();
    if let Some(v) = merged.get("k1") {
        params.k1 = num("k1", v)?;
    }
    if let Some(v) = merged.get("k2") {
        params.k2 = num("k2", v)?;
    }
    let c = case(case_name, params)?;
    let mut cfg = AdaptiveConfig { warmup: c.warmup, ..Default::default() };
    let mut theta = 0.4;
    let mut marking = "uniform".to_string();
    let mut q_given = false;
    for (k, v) in &merged {
        match k.as_str() {
            "p" => cfg.p = num(k, v)?,
            "q" => {
                cfg.q = num(k, v)?;
                q_given = true;
            }
            "r" => cfg.r = if v == "none" { None } else { Some(num(k, v)?) },
            "M" => cfg.flux_ratio = num(k, v)?,
            "L" => cfg.minorant_ratio = num(k, v)?,
            "steps" => cfg.steps = num(k, v)?,
            "warmup" => cfg.warmup = num(k, v)?,
            "marking" => marking = v.clone(),
            "theta" => theta = num(k, v)?,
            "maj-iters" => cfg.majorant_iterations = num(k, v)?,
            "solver" => cfg.solver = v.parse()?,
            "indicator" => cfg.indicator = v.parse()?,
            "max-depth" => cfg.max_depth = num(k, v)?,
            _ => {}
        }
    }
    if !q_given {
        cfg.q = cfg.q.max(cfg.p + 1);
    }
    cfg.marking = Marking::parse(&marking, theta)?;
    cfg.validate()?;
    Ok(RunSettings { case: case_name.to_string(), params, config: cfg, out: merged.get("out").map(PathBuf::from) })
}

#[derive(Serialize)]
struct Summary<'a> {
    case: &'a str,
    description: &'a str,
    settings: &'a RunSettings,
    friedrichs_constant: f64,
    steps_completed: usize,
    converged: bool,
    failure: Option<String>,
    totals: TimingTotals,
    final_step: Option<&'a StepReport>,
}

#[derive(Serialize, Default)]
struct TimingTotals {
    assembly_u: f64,
    solve_u: f64,
    assembly_y: f64,
    solve_y: f64,
    assembly_w: f64,
    solve_w: f64,
    eval_error: f64,
    eval_majorant: f64,
    eval_residual: f64,
}

/// Runs a case and, when an output directory is set, writes `report.csv`,
/// `mesh_step_<n>.txt` and `summary.json` there.
pub fn run_case(settings: &RunSettings) -> Result<RunResult> {
    let c = case(&settings.case, settings.params)?;
    let result = adaptive_solve(&c.problem, &settings.config)?;
    if let Some(dir) = &settings.out {
        write_outputs(dir, settings, &c, &result)?;
    }
    Ok(result)
}

fn write_outputs(dir: &Path, settings: &RunSettings, c: &ProblemCase, result: &RunResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = Vec::new();
    write_csv(&mut csv, &result.rows)?;
    fs::write(dir.join("report.csv"), csv)?;
    for (n, m) in result.meshes.iter().enumerate() {
        fs::write(dir.join(format!("mesh_step_{n}.txt")), m)?;
    }
    let mut totals = TimingTotals::default();
    for r in &result.rows {
        let t = &r.timings;
        totals.assembly_u += t.assembly_u;
        totals.solve_u += t.solve_u;
        totals.assembly_y += t.assembly_y;
        totals.solve_y += t.solve_y;
        totals.assembly_w += t.assembly_w;
        totals.solve_w += t.solve_w;
        totals.eval_error += t.eval_error;
        totals.eval_majorant += t.eval_majorant;
        totals.eval_residual += t.eval_residual;
    }
    let summary = Summary {
        case: c.name,
        description: &c.description,
        settings,
        friedrichs_constant: c.problem.friedrichs,
        steps_completed: result.rows.len(),
        converged: result.converged,
        failure: result.failure.as_ref().map(|e| e.to_string()),
        totals,
        final_step: result.rows.last(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// Default settings for a case with a few overrides, for programmatic use.
pub fn settings_with(case_name: &str, pairs: &[(&str, &str)]) -> Result<RunSettings> {
    let o: Overrides = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    resolve_settings(case_name, &[&o])
}

impl RunSettings {
    pub fn solver(&self) -> SolverKind {
        self.config.solver
    }

    pub fn indicator(&self) -> IndicatorSource {
        self.config.indicator
    }
}
