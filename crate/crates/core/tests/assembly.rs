mod common;

use std::sync::Arc;

use common::{random_thb, rng};
use iga_estimates::assembly::{assemble_flux_operators, assemble_primal, ScalarFn, VectorFn};
use iga_estimates::estimates::{compute_majorant, energy_error, MajorantSettings};
use iga_estimates::geometry::GeometryMap;
use iga_estimates::harness::{case, CaseParams};
use iga_estimates::hierarchy::{CellBox, HierarchicalBasis, Truncation};
use iga_estimates::quadrature::QuadratureRule;
use iga_estimates::sparse::{solve_cg, solve_direct, CsrMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn solve_on(basis: &HierarchicalBasis, geom: &GeometryMap, rule: &QuadratureRule, f: &ScalarFn) -> Vec<f64> {
    let sys = assemble_primal(basis, geom, rule, f, None).unwrap();
    sys.expand(&solve_direct(&sys.matrix, &sys.rhs).unwrap())
}

fn zero_grad() -> VectorFn {
    Arc::new(|_| [0.0; 3])
}

fn random_spd(seed: u64, n: usize) -> CsrMatrix {
    let mut g = rng(seed);
    let b = DMatrix::<f64>::from_fn(n, n, |_, _| g.gen_range(-1.0..1.0));
    let a = b.transpose() * &b + DMatrix::identity(n, n);
    let trip: Vec<(usize, usize, f64)> =
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (i, j, a[(i, j)])).collect();
    CsrMatrix::from_triplets(n, n, &trip)
}

fn rel_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    r / b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn bilinear_interior_diagonal() {
    let b = HierarchicalBasis::uniform(2, 1, [2, 2, 1], Truncation::Truncated).unwrap();
    let one: ScalarFn = Arc::new(|_| 1.0);
    let sys = assemble_primal(&b, &GeometryMap::unit_cube(2).unwrap(), &QuadratureRule::new(2, 3), &one, None).unwrap();
    assert_eq!(sys.num_free(), 1);
    assert!((sys.matrix.get(0, 0) - 8.0 / 3.0).abs() < 1e-14);
}

#[test]
fn zero_data_gives_zero_solution() {
    let b = HierarchicalBasis::uniform(2, 2, [4, 4, 1], Truncation::Truncated).unwrap();
    let zero: ScalarFn = Arc::new(|_| 0.0);
    let c = solve_on(&b, &GeometryMap::unit_cube(2).unwrap(), &QuadratureRule::new(2, 4), &zero);
    assert!(c.iter().all(|&v| v == 0.0));
}

#[test]
fn cubic_splines_reproduce_polynomial_solution() {
    let ex1 = case("ex1", CaseParams::default()).unwrap().problem;
    let b = HierarchicalBasis::uniform(2, 3, [4, 4, 1], Truncation::Truncated).unwrap();
    let rule = QuadratureRule::new(2, 5);
    let c = solve_on(&b, &ex1.geometry, &rule, &ex1.f);
    let e: f64 = energy_error(&b, &ex1.geometry, &rule, &c, ex1.grad_u.as_ref().unwrap()).unwrap().iter().sum();
    assert!(e.sqrt() <= 1e-10, "{}", e.sqrt());

    // the exact gradient lies in the cubic flux space, so the dual residual vanishes
    let flux = HierarchicalBasis::uniform(2, 3, [2, 2, 1], Truncation::Truncated).unwrap();
    let out = compute_majorant(
        &b,
        &c,
        &flux,
        &ex1.geometry,
        &rule,
        &ex1.f,
        ex1.friedrichs,
        &MajorantSettings::default(),
        None,
    )
    .unwrap();
    assert!(out.m_d <= 1e-10 && out.majorant <= 1e-10, "{} {}", out.m_d, out.majorant);
}

#[test]
fn flux_operators_are_symmetric_and_definite() {
    let ex5 = case("ex5", CaseParams::default()).unwrap().problem;
    let u = HierarchicalBasis::uniform(2, 2, [4, 4, 1], Truncation::Truncated)
        .unwrap()
        .insert_box(1, CellBox::new2([0, 0], [2, 3]))
        .unwrap();
    let rule = QuadratureRule::new(2, 5);
    let c = vec![0.5; u.num_functions()];
    let flux = HierarchicalBasis::new(3, u.domain().coarsened(1), Truncation::Truncated).unwrap();
    let ops = assemble_flux_operators(&flux, &ex5.geometry, &rule, &ex5.f, &u, &c).unwrap();
    assert!(ops.len() <= 200);
    for m in [&ops.div, &ops.mass] {
        assert!(m.max_asymmetry() <= 1e-13);
    }
    let eig = |m: &CsrMatrix| {
        let d = m.to_dense();
        DMatrix::from_fn(d.len(), d.len(), |i, j| d[i][j]).symmetric_eigen().eigenvalues
    };
    let div_min = eig(&ops.div).iter().cloned().fold(f64::INFINITY, f64::min);
    let mass_min = eig(&ops.mass).iter().cloned().fold(f64::INFINITY, f64::min);
    let div_max = eig(&ops.div).iter().cloned().fold(0.0, f64::max);
    assert!(div_min >= -1e-12 * div_max, "{div_min}");
    assert!(mass_min > 0.0, "{mass_min}");

    // doubling beta halves the divergence weight
    let cf = ex5.friedrichs;
    let (a1, _) = ops.system(cf, 1.0);
    let (a2, _) = ops.system(cf, 2.0);
    let d1 = a1.linear_combination(1.0, &ops.mass, -1.0).to_dense();
    let d2 = a2.linear_combination(1.0, &ops.mass, -1.0).to_dense();
    for (r1, r2) in d1.iter().zip(&d2) {
        for (x, y) in r1.iter().zip(r2) {
            assert!((0.5 * x - y).abs() <= 1e-13 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn direct_solver_examples() {
    let id = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]);
    assert_eq!(solve_direct(&id, &[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
    let x = solve_direct(&a, &[3.0, 3.0]).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    let a = random_spd(42, 50);
    let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
    assert!(rel_residual(&a, &solve_direct(&a, &b).unwrap(), &b) <= 1e-10);
}

#[test]
fn cg_examples() {
    let a = random_spd(42, 50);
    let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
    let xd = solve_direct(&a, &b).unwrap();
    let cg = solve_cg(&a, &b, None, 1e-10, 1000).unwrap();
    for (p, q) in cg.x.iter().zip(&xd) {
        assert!((p - q).abs() <= 1e-8);
    }
    let exact = solve_cg(&a, &a.matvec(&xd), Some(&xd), 1e-10, 1000).unwrap();
    assert_eq!(exact.iterations, 0);
    let id = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]);
    assert_eq!(solve_cg(&id, &[1.0, 2.0, 3.0], None, 1e-12, 10).unwrap().iterations, 1);
}

#[test]
fn assembly_is_independent_of_thread_count() {
    let ex1 = case("ex1", CaseParams::default()).unwrap().problem;
    let b = random_thb(&mut rng(4), 2, 4, 3);
    let rule = QuadratureRule::new(2, 4);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| assemble_primal(&b, &ex1.geometry, &rule, &ex1.f, None).unwrap())
    };
    let a = run(1);
    for t in [2, 3, 8] {
        let c = run(t);
        assert_eq!(a.matrix.to_coordinate_string(), c.matrix.to_coordinate_string());
        assert_eq!(
            a.rhs.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            c.rhs.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn uniform_refinement_never_increases_error() {
    let ex1 = case("ex1", CaseParams::default()).unwrap().problem;
    let rule = QuadratureRule::new(2, 4);
    let mut b = HierarchicalBasis::uniform(2, 2, [1, 1, 1], Truncation::Truncated).unwrap();
    let mut prev = f64::INFINITY;
    for _ in 0..6 {
        let c = solve_on(&b, &ex1.geometry, &rule, &ex1.f);
        let e = energy_error(&b, &ex1.geometry, &rule, &c, ex1.grad_u.as_ref().unwrap())
            .unwrap()
            .iter()
            .sum::<f64>()
            .sqrt();
        assert!(e <= prev);
        prev = e;
        b = b.refine_uniform().unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn galerkin_orthogonality(seed in any::<u64>(), p in 1usize..=3) {
        let ex1 = case("ex1", CaseParams::default()).unwrap().problem;
        let mut g = rng(seed);
        let base = g.gen_range(1..=4);
        let b = random_thb(&mut g, p, base, 2);
        let rule = QuadratureRule::new(2, p + 2);
        let gu = ex1.grad_u.as_ref().unwrap();
        let c = solve_on(&b, &ex1.geometry, &rule, &ex1.f);
        let err: f64 = energy_error(&b, &ex1.geometry, &rule, &c, gu).unwrap().iter().sum();
        let u2: f64 = energy_error(&b, &ex1.geometry, &rule, &vec![0.0; c.len()], gu).unwrap().iter().sum();
        let uh2: f64 = energy_error(&b, &ex1.geometry, &rule, &c, &zero_grad()).unwrap().iter().sum();
        prop_assert!((err - (u2 - uh2)).abs() <= 1e-8 * u2, "{} vs {}", err, u2 - uh2);
    }

    #[test]
    fn triplet_order_does_not_change_matrix(seed in any::<u64>()) {
        let mut g = rng(seed);
        let n = g.gen_range(1..30);
        let mut t: Vec<(usize, usize, usize, f64)> =
            (0..200).map(|k| (g.gen_range(0..n), g.gen_range(0..n), k, g.gen_range(-1.0..1.0))).collect();
        let a = CsrMatrix::from_tagged_triplets(n, n, t.clone());
        t.shuffle(&mut g);
        let b = CsrMatrix::from_tagged_triplets(n, n, t);
        prop_assert_eq!(a.to_coordinate_string(), b.to_coordinate_string());
    }
}
