//! Gauss–Legendre quadrature on `[-1, 1]ⁿ` and exact monomial integrals.

use num::{One, Zero};

use crate::poly::{rat, Poly, Rational};

/// Nodes and weights of the `k`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1, "need at least one node");
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for i in 0..k.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(k, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(k, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[k - 1 - i] = x;
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_k(x), P_k'(x))` by the three-term recurrence.
fn legendre(k: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if k == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=k {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = k as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor-product rule with `k` nodes per axis applied to `f`.
pub fn integrate_cube(n: usize, k: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre(k);
    let total = k.pow(n as u32);
    let mut x = vec![0.0; n];
    let mut sum = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut w = 1.0;
        for d in 0..n {
            let j = rem % k;
            rem /= k;
            x[d] = nodes[j];
            w *= weights[j];
        }
        sum += w * f(&x);
    }
    sum
}

/// `∫_{[-1,1]ⁿ} p` in exact arithmetic.
pub fn integrate_cube_exact(p: &Poly) -> Rational {
    let mut acc = Rational::zero();
    for (e, c) in p.terms() {
        let mut v = Rational::one();
        for &k in e {
            if k % 2 == 1 {
                v = Rational::zero();
                break;
            }
            v *= rat(2, k as i64 + 1);
        }
        acc += c * v;
    }
    acc
}
