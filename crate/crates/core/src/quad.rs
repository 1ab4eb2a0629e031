//! Adaptive Gauss-Legendre quadrature on finite intervals.

use std::sync::OnceLock;

use thiserror::Error;

/// Nodes per panel.
const ORDER: usize = 10;
const MAX_DEPTH: u32 = 48;
/// Panels are always split at least this many times before acceptance.
const MIN_DEPTH: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("quadrature did not converge: estimated error {achieved:e} exceeds tolerance {tolerance:e}")]
pub struct QuadratureError {
    pub achieved: f64,
    pub tolerance: f64,
}

/// Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes an `n`-point rule by Newton iteration on the Legendre polynomial.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a quadrature rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Chebyshev-like initial guess for the i-th root.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Fixed rule on [a, b].
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

/// Legendre polynomial P_n(x) and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(ORDER))
}

/// Integrates `f` over [a, b] to absolute tolerance `tol`.
///
/// Each panel is compared against the sum over its two halves; panels whose
/// difference exceeds their share of the tolerance are bisected.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, QuadratureError> {
    if a == b {
        return Ok(0.0);
    }
    let gl = rule();
    let span = (b - a).abs();
    let mut total = 0.0;
    let mut unresolved = 0.0;
    let mut stack = vec![(a, b, gl.integrate(&f, a, b), 0u32)];
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = gl.integrate(&f, lo, mid);
        let right = gl.integrate(&f, mid, hi);
        let err = (left + right - whole).abs();
        let budget = tol * (hi - lo).abs() / span;
        if err <= budget && depth >= MIN_DEPTH {
            total += left + right;
        } else if depth >= MAX_DEPTH || !err.is_finite() {
            total += left + right;
            unresolved += err;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    if unresolved > tol || !total.is_finite() {
        return Err(QuadratureError {
            achieved: unresolved,
            tolerance: tol,
        });
    }
    Ok(total)
}
