//! Gauss–Legendre rules: fixed, composite and adaptive.

use alloc::vec::Vec;
use core::f64::consts::PI;

/// An `m`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes by Newton iteration on `P_m`, started from the Chebyshev-like guess.
    pub fn new(m: usize) -> Self {
        assert!(m >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = alloc::vec![0.0; m];
        let mut weights = alloc::vec![0.0; m];
        for i in 0..(m + 1) / 2 {
            let mut x = libm::cos(PI * (i as f64 + 0.75) / (m as f64 + 0.5));
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(m, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    let (_, d) = legendre(m, x);
                    dp = d;
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[m - 1 - i] = x;
            weights[i] = w;
            weights[m - 1 - i] = w;
        }
        if m % 2 == 1 {
            nodes[m / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (c + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// `(P_m(x), P_m'(x))` by the three-term recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule: `rule` applied on each interval between consecutive breakpoints.
pub fn composite_nodes(rule: &GaussLegendre, breaks: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(rule.len() * breaks.len());
    let mut ws = Vec::with_capacity(rule.len() * breaks.len());
    for pair in breaks.windows(2) {
        for (x, w) in rule.mapped(pair[0], pair[1]) {
            xs.push(x);
            ws.push(w);
        }
    }
    (xs, ws)
}

/// Adaptive bisection with a fixed Gauss–Legendre panel rule: a panel is
/// accepted when its value and the sum over its two halves agree within
/// `max(tol·|value|, 1e-17·(b-a))`, or when `max_depth` is exhausted.
pub fn adaptive(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
    f: &mut impl FnMut(f64) -> f64,
) -> f64 {
    let whole = rule.integrate(a, b, &mut *f);
    let floor = 1e-17 * (b - a).abs();
    adaptive_rec(rule, a, b, whole, tol, floor, max_depth, f)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_rec(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    floor: f64,
    depth: usize,
    f: &mut impl FnMut(f64) -> f64,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(a, mid, &mut *f);
    let right = rule.integrate(mid, b, &mut *f);
    let refined = left + right;
    if depth == 0 || (refined - whole).abs() <= (tol * refined.abs()).max(floor) {
        return refined;
    }
    adaptive_rec(rule, a, mid, left, tol, floor, depth - 1, f)
        + adaptive_rec(rule, mid, b, right, tol, floor, depth - 1, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for m in 1..12 {
            let rule = GaussLegendre::new(m);
            let wsum: f64 = rule.weights().iter().sum();
            assert!((wsum - 2.0).abs() < 1e-13);
            for k in 0..(2 * m) {
                let got = rule.integrate(0.0, 1.0, |x| libm::pow(x, k as f64));
                assert!((got - 1.0 / (k + 1) as f64).abs() < 1e-13, "m={m} k={k}");
            }
        }
    }

    #[test]
    fn nodes_are_sorted_and_symmetric() {
        let rule = GaussLegendre::new(64);
        for w in rule.nodes().windows(2) {
            assert!(w[0] < w[1]);
        }
        for i in 0..64 {
            assert!((rule.nodes()[i] + rule.nodes()[63 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn adaptive_handles_a_kink() {
        let rule = GaussLegendre::new(8);
        let got = adaptive(&rule, -1.0, 2.0, 1e-12, 40, &mut |x: f64| x.abs());
        assert!((got - 2.5).abs() < 1e-10);
    }
}
