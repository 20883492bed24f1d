//! Acceptance criteria, run sequentially so that wall-clock limits are not
//! distorted by other tests. Each criterion prints one PASS/FAIL line; run
//! with `--nocapture` to see them.

mod common;

use std::time::Instant;

use common::{polynomial_problem, random_bubble, random_knots, random_thb, rng, spline_value};
use iga_estimates::adaptivity::{adaptive_solve, mark, AdaptiveConfig, Marking};
use iga_estimates::assembly::{assemble_primal, VectorFn};
use iga_estimates::estimates::{compute_majorant, energy_error, majorant_value, MajorantSettings, StepReport};
use iga_estimates::harness::{case, run_case, settings_with, CaseParams};
use iga_estimates::hierarchy::HierarchicalBasis;
use iga_estimates::quadrature::QuadratureRule;
use iga_estimates::sparse::solve_direct;
use iga_estimates::splines::TensorBasis;
use iga_estimates::MAX_DIM;
use rand::Rng;

const INSTANCES: u64 = 100;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run(case_name: &str, pairs: &[(&str, &str)]) -> (Vec<StepReport>, f64) {
    let t = Instant::now();
    let rows = run_case(&settings_with(case_name, pairs).unwrap()).unwrap().rows;
    (rows, t.elapsed().as_secs_f64())
}

fn at(rows: &[StepReport], refinement: usize) -> &StepReport {
    rows.iter().find(|r| r.refinement == refinement).unwrap()
}

const EX1: [(&str, &str); 5] = [("p", "2"), ("q", "3"), ("M", "8"), ("marking", "uniform"), ("steps", "7")];

fn criterion_1(rows: &[StepReport], secs: f64) -> Outcome {
    let eoc = rows.last().unwrap().eoc.unwrap();
    let e5 = at(rows, 5).error.unwrap();
    let rel = (e5 / 1.5952e-4 - 1.0).abs();
    check(
        (eoc - 2.0).abs() <= 0.1 && rel <= 0.01 && secs < 60.0,
        format!("final e.o.c. {eoc:.4}, error at ref 5 {e5:.4e} ({:.2}% off), {secs:.1} s", 100.0 * rel),
    )
}

fn criterion_2(rows: &[StepReport]) -> Outcome {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for r in rows {
        let e = r.error.unwrap();
        ok &= r.majorant >= e;
        if r.refinement >= 3 {
            let i = r.ieff_majorant.unwrap();
            worst = worst.max(i);
            ok &= i <= 1.35;
        }
    }
    let eta: Vec<f64> = rows.iter().filter(|r| r.refinement >= 5).map(|r| r.ieff_eta.unwrap()).collect();
    let (lo, hi) = eta.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    ok &= lo >= 8.0 && hi <= 13.0 && eta.iter().all(|v| (v / eta[0] - 1.0).abs() <= 0.1);
    check(ok, format!("max I_eff(M) from ref 3 {worst:.4}, I_eff(eta) in [{lo:.3}, {hi:.3}]"))
}

fn criterion_3() -> Outcome {
    let mut pairs = EX1.to_vec();
    pairs.extend([("r", "3"), ("L", "8"), ("steps", "5")]);
    let (rows, _) = run("ex1", &pairs);
    let mut ok = true;
    let (mut lo, mut hi, mut ratio) = (f64::INFINITY, 0.0f64, 0.0f64);
    for r in rows.iter().filter(|r| r.refinement >= 3) {
        let i = r.ieff_minorant.unwrap();
        let q = r.majorant_over_minorant.unwrap();
        lo = lo.min(i);
        hi = hi.max(i);
        ratio = ratio.max(q);
        ok &= (0.98..=1.0 + 1e-6).contains(&i) && q <= 1.35;
    }
    check(ok, format!("I_eff(minorant) in [{lo:.6}, {hi:.6}], max majorant/minorant {ratio:.4}"))
}

fn criterion_4() -> Outcome {
    let (rows, secs) = run("ex2", &[("p", "2"), ("q", "5"), ("M", "8"), ("steps", "8")]);
    let last = rows.last().unwrap();
    let (eoc, ieff) = (last.eoc.unwrap(), last.ieff_majorant.unwrap());
    check(
        last.refinement == 9 && (eoc - 2.0).abs() <= 0.1 && ieff <= 1.5,
        format!("ref {}: e.o.c. {eoc:.4}, I_eff(M) {ieff:.4}, {secs:.1} s", last.refinement),
    )
}

fn criterion_5() -> Outcome {
    let (rows, secs) = run("ex6", &[("p", "2"), ("q", "3"), ("M", "2"), ("steps", "3")]);
    let mut ok = secs < 300.0;
    let mut worst: f64 = 0.0;
    for r in &rows {
        ok &= r.majorant >= r.error.unwrap();
        worst = worst.max(r.ieff_majorant.unwrap());
    }
    ok &= worst <= 1.5;
    check(ok, format!("{} steps, max I_eff(M) {worst:.4}, {secs:.1} s", rows.len()))
}

fn criterion_6() -> Outcome {
    const PEAK: [f64; 2] = [1.4, 0.95];
    let mut ok = true;
    let mut msg = Vec::new();
    for theta in ["0.2", "0.4"] {
        let s = settings_with("ex3", &[("q", "4"), ("M", "1"), ("marking", "bulk"), ("theta", theta), ("steps", "6")])
            .unwrap();
        let out = run_case(&s).unwrap();
        ok &= out.rows.len() == 7 && out.rows.windows(2).all(|w| w[1].error.unwrap() < w[0].error.unwrap());
        let mut min_share: f64 = 1.0;
        // marked_centers[i] belongs to the row labelled i + 1
        for centers in out.marked_centers.iter().skip(2) {
            let near = centers.iter().filter(|c| (c[0] - PEAK[0]).hypot(c[1] - PEAK[1]) <= 0.3).count();
            min_share = min_share.min(near as f64 / centers.len().max(1) as f64);
        }
        ok &= min_share >= 0.5;
        msg.push(format!(
            "theta {theta}: final error {:.4e}, min share near peak {min_share:.2}",
            out.rows.last().unwrap().error.unwrap()
        ));
    }
    check(ok, msg.join("; "))
}

fn partition_of_unity() -> bool {
    (0..INSTANCES).all(|seed| {
        let mut g = rng(seed);
        let p = g.gen_range(0..=5);
        let p2 = g.gen_range(0..=4);
        let dirs = vec![random_knots(&mut g, p), random_knots(&mut g, p2)];
        let tb = TensorBasis::new(dirs.clone()).unwrap();
        let w: Vec<f64> = (0..tb.num_basis()).map(|_| g.gen_range(0.2..3.0)).collect();
        let nurbs = TensorBasis::rational(dirs, w).unwrap();
        let (deg, base) = (g.gen_range(1..=4), g.gen_range(1..=4));
        let thb = random_thb(&mut g, deg, base, 3);
        (0..20).all(|_| {
            let x = [g.gen_range(0.0..=1.0), g.gen_range(0.0..=1.0)];
            let s1: f64 = tb.eval(&x).unwrap().values.iter().sum();
            let s2: f64 = nurbs.eval(&x).unwrap().values.iter().sum();
            let s3: f64 = thb.eval(&x).unwrap().1.iter().sum();
            [s1, s2, s3].iter().all(|s| (s - 1.0).abs() <= 1e-12)
        })
    })
}

fn refinement_exactness() -> bool {
    (0..INSTANCES).all(|seed| {
        let mut g = rng(seed);
        let p = g.gen_range(0..=5);
        let kv = random_knots(&mut g, p);
        let c: Vec<f64> = (0..kv.num_basis()).map(|_| g.gen_range(-2.0..2.0)).collect();
        let (fine, r) = kv.dyadic_refine();
        let fc = r.apply(&c);
        (0..30).all(|_| {
            let x = g.gen_range(0.0..=1.0);
            (spline_value(p, kv.knots(), &c, x) - spline_value(p, fine.knots(), &fc, x)).abs() <= 1e-12
        })
    })
}

fn two_sided_bounds() -> bool {
    (0..INSTANCES).all(|seed| {
        let mut g = rng(seed);
        let problem = polynomial_problem(&random_bubble(&mut g));
        let p = g.gen_range(1..=2);
        let config = AdaptiveConfig {
            p,
            q: p + 1,
            r: Some(p + 1),
            flux_ratio: 1 << g.gen_range(0..=1),
            steps: 1,
            warmup: g.gen_range(1..=2),
            ..Default::default()
        };
        adaptive_solve(&problem, &config).unwrap().rows.iter().all(|r| {
            let (e, up, low) = (r.error.unwrap(), r.majorant, r.minorant.unwrap());
            low <= e + 1e-8 * up && e <= up + 1e-8 * up
        })
    })
}

fn beta_optimality() -> bool {
    (0..INSTANCES).all(|seed| {
        let mut g = rng(seed);
        let problem = polynomial_problem(&random_bubble(&mut g));
        let base = g.gen_range(1..=3);
        let u = random_thb(&mut g, 2, base, 2);
        let rule = QuadratureRule::new(2, 5);
        let sys = assemble_primal(&u, &problem.geometry, &rule, &problem.f, None).unwrap();
        let c = sys.expand(&solve_direct(&sys.matrix, &sys.rhs).unwrap());
        let flux = HierarchicalBasis::new(3, u.domain().coarsened(1), u.mode()).unwrap();
        let out = compute_majorant(
            &u,
            &c,
            &flux,
            &problem.geometry,
            &rule,
            &problem.f,
            problem.friedrichs,
            &MajorantSettings::default(),
            None,
        )
        .unwrap();
        let best = majorant_value(out.m_d, out.m_f, out.beta, problem.friedrichs).powi(2);
        [0.9, 1.1].iter().all(|t| majorant_value(out.m_d, out.m_f, t * out.beta, problem.friedrichs).powi(2) >= best)
    })
}

fn random_indicator(seed: u64) -> (Vec<f64>, f64, f64) {
    let mut g = rng(seed);
    let n = g.gen_range(1..60);
    let v = (0..n).map(|_| g.gen_range(0.0..1.0)).collect();
    (v, g.gen_range(0.01..0.99), g.gen_range(0.01..0.99))
}

fn marking_scale_invariance() -> bool {
    (0..INSTANCES).all(|seed| {
        let (v, theta, _) = random_indicator(seed);
        let s = 10f64.powf(rng(seed + 1).gen_range(-3.0..3.0));
        let w: Vec<f64> = v.iter().map(|x| s * x).collect();
        [Marking::Garu(theta), Marking::Puca(theta), Marking::Bulk(theta)]
            .iter()
            .all(|&m| mark(&v, m).unwrap().marked == mark(&w, m).unwrap().marked)
    })
}

fn bulk_monotonicity() -> bool {
    (0..INSTANCES).all(|seed| {
        let (v, a, b) = random_indicator(seed);
        let (lo, hi) = (a.min(b), a.max(b));
        let more = mark(&v, Marking::Bulk(lo)).unwrap().marked;
        mark(&v, Marking::Bulk(hi)).unwrap().marked.iter().all(|i| more.contains(i))
    })
}

fn galerkin_orthogonality() -> bool {
    let ex1 = case("ex1", CaseParams::default()).unwrap().problem;
    let gu = ex1.grad_u.clone().unwrap();
    let zero: VectorFn = std::sync::Arc::new(|_| [0.0; MAX_DIM]);
    (0..INSTANCES).all(|seed| {
        let mut g = rng(seed);
        let p = g.gen_range(1..=3);
        let base = g.gen_range(1..=4);
        let b = random_thb(&mut g, p, base, 2);
        let rule = QuadratureRule::new(2, p + 2);
        let sys = assemble_primal(&b, &ex1.geometry, &rule, &ex1.f, None).unwrap();
        let c = sys.expand(&solve_direct(&sys.matrix, &sys.rhs).unwrap());
        let sum =
            |c: &[f64], g: &VectorFn| -> f64 { energy_error(&b, &ex1.geometry, &rule, c, g).unwrap().iter().sum() };
        let (err, u2, uh2) = (sum(&c, &gu), sum(&vec![0.0; c.len()], &gu), sum(&c, &zero));
        (err - (u2 - uh2)).abs() <= 1e-8 * u2
    })
}

fn criterion_7() -> Outcome {
    let suites: [(&str, fn() -> bool); 7] = [
        ("partition of unity", partition_of_unity),
        ("refinement exactness", refinement_exactness),
        ("two-sided bounds", two_sided_bounds),
        ("beta optimality", beta_optimality),
        ("marking scale invariance", marking_scale_invariance),
        ("bulk monotonicity", bulk_monotonicity),
        ("Galerkin orthogonality", galerkin_orthogonality),
    ];
    let failed: Vec<&str> = suites.iter().filter(|(_, f)| !f()).map(|(n, _)| *n).collect();
    check(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} suites x {INSTANCES} seeded instances", suites.len())
        } else {
            format!("failing suites: {}", failed.join(", "))
        },
    )
}

fn criterion_8(rows: &[StepReport]) -> Outcome {
    let t = &rows.last().unwrap().timings;
    let (y, u) = (t.assembly_y + t.solve_y, t.assembly_u + t.solve_u);
    check(y < u, format!("finest step: flux {y:.4} s, primal {u:.4} s"))
}

#[test]
fn acceptance() {
    let (ex1, secs) = run("ex1", &EX1);
    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "Ex1 uniform convergence", criterion_1(&ex1, secs)),
        (2, "Ex1 majorant and residual efficiency", criterion_2(&ex1)),
        (3, "Ex1 minorant efficiency", criterion_3()),
        (4, "Ex2 uniform convergence", criterion_4()),
        (5, "Ex6 unit cube bounds", criterion_5()),
        (6, "Ex3 adaptive bulk marking", criterion_6()),
        (7, "property suites", criterion_7()),
        (8, "flux cheaper than primal", criterion_8(&ex1)),
    ];
    let mut all = true;
    for (n, name, r) in &results {
        let (tag, msg) = match r {
            Ok(m) => ("PASS", m),
            Err(m) => {
                all = false;
                ("FAIL", m)
            }
        };
        println!("{tag} {n} {name}: {msg}");
    }
    assert!(all, "some acceptance criteria failed");
}
