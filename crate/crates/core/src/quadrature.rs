//! Gauss–Legendre rules on [0, 1] and their tensor products.

use crate::MAX_DIM;

/// Gauss–Legendre nodes and weights on [0, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            // Chebyshev-type initial guess, then Newton on P_n
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points[i] = 0.5 * (1.0 - x);
            points[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { points, weights }
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// Tensor-product Gauss rule with `g` points per direction on the unit cube
/// of dimension `dim`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub dim: usize,
    pub order: usize,
    pub points: Vec<[f64; MAX_DIM]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn new(dim: usize, g: usize) -> Self {
        let gl = GaussLegendre::new(g);
        let mut n = [1; MAX_DIM];
        for a in n.iter_mut().take(dim) {
            *a = g;
        }
        let mut points = Vec::with_capacity(n.iter().product());
        let mut weights = Vec::with_capacity(points.capacity());
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let idx = [i, j, k];
                    let mut x = [0.0; MAX_DIM];
                    let mut w = 1.0;
                    for a in 0..dim {
                        x[a] = gl.points[idx[a]];
                        w *= gl.weights[idx[a]];
                    }
                    points.push(x);
                    weights.push(w);
                }
            }
        }
        Self { dim, order: g, points, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Nodes mapped to the box `[lo, hi]` and weights scaled by its volume.
    pub fn mapped(&self, lo: &[f64; MAX_DIM], hi: &[f64; MAX_DIM]) -> (Vec<[f64; MAX_DIM]>, Vec<f64>) {
        let mut vol = 1.0;
        for a in 0..self.dim {
            vol *= hi[a] - lo[a];
        }
        let pts = self
            .points
            .iter()
            .map(|x| {
                let mut y = [0.0; MAX_DIM];
                for a in 0..self.dim {
                    y[a] = lo[a] + x[a] * (hi[a] - lo[a]);
                }
                y
            })
            .collect();
        (pts, self.weights.iter().map(|w| w * vol).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_degree_2g_minus_1() {
        for g in 1..=10 {
            let r = GaussLegendre::new(g);
            for k in 0..2 * g {
                let s: f64 = r.points.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
                assert!((s - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "g={g} k={k}");
            }
        }
    }

    #[test]
    fn tensor_weights_sum_to_one() {
        let q = QuadratureRule::new(3, 4);
        assert_eq!(q.len(), 64);
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
