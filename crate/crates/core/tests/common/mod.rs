#![allow(dead_code)]

use std::sync::Arc;

use iga_estimates::adaptivity::Problem;
use iga_estimates::assembly::{ScalarFn, VectorFn};
use iga_estimates::estimates::friedrichs_constant;
use iga_estimates::geometry::GeometryMap;
use iga_estimates::hierarchy::{CellBox, HierarchicalBasis, Truncation};
use iga_estimates::splines::KnotVector;
use iga_estimates::MAX_DIM;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Open knot vector on [0, 1] with random interior knots of multiplicity at
/// most `p`.
pub fn random_knots(rng: &mut ChaCha8Rng, p: usize) -> KnotVector {
    let mut sites: Vec<usize> = (0..rng.gen_range(0..5)).map(|_| rng.gen_range(1..20)).collect();
    sites.sort_unstable();
    sites.dedup();
    let mut interior = Vec::new();
    for s in sites {
        for _ in 0..rng.gen_range(1..=p.max(1)) {
            interior.push(s as f64 / 20.0);
        }
    }
    interior.sort_by(f64::total_cmp);
    let mut k = vec![0.0; p + 1];
    k.extend(interior);
    k.extend(vec![1.0; p + 1]);
    KnotVector::new(p, k).unwrap()
}

/// Single knot insertion (Boehm): knots and coefficients after inserting `t`.
pub fn boehm_insert(p: usize, knots: &[f64], coeffs: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let k = (0..knots.len() - 1).rfind(|&i| knots[i] <= t && t < knots[i + 1]).unwrap();
    let n = coeffs.len();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let c = if i + p <= k {
            coeffs[i]
        } else if i > k {
            coeffs[i - 1]
        } else {
            let a = (t - knots[i]) / (knots[i + p] - knots[i]);
            a * coeffs[i] + (1.0 - a) * coeffs[i - 1]
        };
        out.push(c);
    }
    let mut kn = knots[..=k].to_vec();
    kn.push(t);
    kn.extend_from_slice(&knots[k + 1..]);
    (kn, out)
}

/// Evaluates `sum_i c_i N_i(x)` directly from the Cox-de Boor recursion.
pub fn spline_value(p: usize, knots: &[f64], coeffs: &[f64], x: f64) -> f64 {
    let n = knots.len() - 1;
    let last = (0..n).rfind(|&i| knots[i] < knots[i + 1]).unwrap();
    let mut b: Vec<f64> = (0..n)
        .map(|i| {
            let inside = knots[i] <= x && x < knots[i + 1];
            let end = i == last && x == knots[i + 1];
            if inside || end {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for d in 1..=p {
        for i in 0..n - d {
            let l = if knots[i + d] > knots[i] { (x - knots[i]) / (knots[i + d] - knots[i]) * b[i] } else { 0.0 };
            let r = if knots[i + d + 1] > knots[i + 1] {
                (knots[i + d + 1] - x) / (knots[i + d + 1] - knots[i + 1]) * b[i + 1]
            } else {
                0.0
            };
            b[i] = l + r;
        }
    }
    coeffs.iter().zip(&b).map(|(c, v)| c * v).sum()
}

/// Bivariate polynomial `sum c[i][j] x^i y^j`.
#[derive(Clone, Debug)]
pub struct Poly2(pub Vec<Vec<f64>>);

impl Poly2 {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut s = 0.0;
        for (i, row) in self.0.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                s += c * x.powi(i as i32) * y.powi(j as i32);
            }
        }
        s
    }

    pub fn mul(&self, o: &Poly2) -> Poly2 {
        let ni = self.0.len() + o.0.len() - 1;
        let nj = self.0[0].len() + o.0[0].len() - 1;
        let mut c = vec![vec![0.0; nj]; ni];
        for (i, r) in self.0.iter().enumerate() {
            for (j, a) in r.iter().enumerate() {
                for (k, s) in o.0.iter().enumerate() {
                    for (l, b) in s.iter().enumerate() {
                        c[i + k][j + l] += a * b;
                    }
                }
            }
        }
        Poly2(c)
    }

    pub fn dx(&self) -> Poly2 {
        let nj = self.0[0].len();
        let mut c: Vec<Vec<f64>> =
            self.0.iter().enumerate().skip(1).map(|(i, r)| r.iter().map(|v| v * i as f64).collect()).collect();
        if c.is_empty() {
            c.push(vec![0.0; nj]);
        }
        Poly2(c)
    }

    pub fn dy(&self) -> Poly2 {
        Poly2(
            self.0
                .iter()
                .map(|r| {
                    let v: Vec<f64> = r.iter().enumerate().skip(1).map(|(j, v)| v * j as f64).collect();
                    if v.is_empty() {
                        vec![0.0]
                    } else {
                        v
                    }
                })
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Poly2 {
        Poly2(self.0.iter().map(|r| r.iter().map(|v| v * s).collect()).collect())
    }
}

/// `x(1-x) y(1-y) P(x, y)` with a random bilinear `P`, so that the solution
/// vanishes on the boundary of the unit square.
pub fn random_bubble(rng: &mut ChaCha8Rng) -> Poly2 {
    let bubble = Poly2(vec![vec![0.0; 3], vec![0.0, 1.0, -1.0], vec![0.0, -1.0, 1.0]]);
    let p = Poly2(vec![
        vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
    ]);
    bubble.mul(&p)
}

/// Poisson problem on the unit square with exact solution `u`.
pub fn polynomial_problem(u: &Poly2) -> Problem {
    let (ux, uy) = (u.dx(), u.dy());
    let lap = |p: &Poly2| p.dx().dx();
    let (uxx, uyy) = (lap(u), u.dy().dy());
    let geometry = GeometryMap::unit_cube(2).unwrap();
    let friedrichs = friedrichs_constant(&geometry);
    let u0 = u.clone();
    let f: ScalarFn = Arc::new(move |x| -(uxx.eval(x[0], x[1]) + uyy.eval(x[0], x[1])));
    let uf: ScalarFn = Arc::new(move |x| u0.eval(x[0], x[1]));
    let gu: VectorFn = Arc::new(move |x| [ux.eval(x[0], x[1]), uy.eval(x[0], x[1]), 0.0]);
    Problem {
        name: "poly".into(),
        geometry,
        base: [1, 1, 1],
        f,
        dirichlet: None,
        u: Some(uf),
        grad_u: Some(gu),
        friedrichs,
    }
}

/// Random two- or three-level THB basis of degree `p` in 2D, with at most
/// `max_boxes` inserted boxes per level.
pub fn random_thb(rng: &mut ChaCha8Rng, p: usize, base: usize, max_boxes: usize) -> HierarchicalBasis {
    let mut basis = HierarchicalBasis::uniform(2, p, [base, base, 1], Truncation::Truncated).unwrap();
    let levels = rng.gen_range(1..=2);
    for level in 1..=levels {
        let n = base << level;
        let mut boxes = Vec::new();
        for _ in 0..rng.gen_range(1..=max_boxes) {
            let lo = [rng.gen_range(0..n), rng.gen_range(0..n)];
            let hi = [rng.gen_range(lo[0]..n.min(lo[0] + n / 2 + 1)), rng.gen_range(lo[1]..n.min(lo[1] + n / 2 + 1))];
            boxes.push((level, CellBox::new2(lo, hi)));
        }
        basis = basis.insert_boxes(&boxes).unwrap();
    }
    basis
}

/// `n` random parametric points in the unit cube of dimension `d`.
pub fn random_points(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<[f64; MAX_DIM]> {
    (0..n)
        .map(|_| {
            let mut x = [0.0; MAX_DIM];
            for v in x.iter_mut().take(d) {
                *v = rng.gen_range(0.0..1.0);
            }
            x
        })
        .collect()
}
