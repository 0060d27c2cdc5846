//! Killed Green's functions on boxes `V_m = [-m, m]^d ∩ Z^d`.
//!
//! `g_m(x, y)` is the expected number of visits to `y` of the simple random
//! walk from `x` before it leaves `V_m`. It solves `Δg = -2d δ_x` on `V_m`
//! with zero exterior values, i.e. `(2d I - A) g = 2d δ_x` for the box
//! adjacency `A`, which is symmetric positive definite.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{GreenDomain, GreenRow};
use crate::rng::Stream;
use crate::{Error, Result};

/// Relative residual target of the conjugate-gradient solves.
pub const CG_TOL: f64 = 1e-10;

/// The box `[-m, m]^d`; sites are stored row-major with axis 0 slowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoxDomain {
    d: usize,
    radius: usize,
}

impl BoxDomain {
    pub fn new(d: usize, radius: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "dimension must be positive"));
        }
        (2 * radius + 1)
            .checked_pow(d as u32)
            .ok_or_else(|| Error::param("radius", "site count overflows"))?;
        Ok(BoxDomain { d, radius })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Side length `2m + 1`.
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// `|V_m| = (2m + 1)^d`.
    pub fn len(&self) -> usize {
        self.side().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, y: &[i64]) -> bool {
        y.len() == self.d && y.iter().all(|c| c.unsigned_abs() as usize <= self.radius)
    }

    pub fn index(&self, y: &[i64]) -> Option<usize> {
        if !self.contains(y) {
            return None;
        }
        let m = self.radius as i64;
        Some(y.iter().fold(0, |acc, &c| acc * self.side() + (c + m) as usize))
    }

    pub fn coords(&self, mut index: usize) -> Vec<i64> {
        let side = self.side();
        let mut c = vec![0i64; self.d];
        for axis in (0..self.d).rev() {
            c[axis] = (index % side) as i64 - self.radius as i64;
            index /= side;
        }
        c
    }

    pub fn origin(&self) -> usize {
        (self.len() - 1) / 2
    }

    pub(crate) fn stride(&self, axis: usize) -> usize {
        self.side().pow((self.d - 1 - axis) as u32)
    }

    /// Applies `-Δ` with zero exterior values.
    pub fn apply_neg_laplacian(&self, u: &[f64], out: &mut [f64]) {
        let side = self.side();
        let d2 = 2.0 * self.d as f64;
        out.iter_mut().zip(u).for_each(|(o, v)| *o = d2 * v);
        for axis in 0..self.d {
            let stride = self.stride(axis);
            for i in 0..self.len() {
                let c = (i / stride) % side;
                if c + 1 < side {
                    out[i] -= u[i + stride];
                }
                if c > 0 {
                    out[i] -= u[i - stride];
                }
            }
        }
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// `‖b - Ax‖₂ / ‖b‖₂` recomputed from the returned solution.
    pub relative_residual: f64,
}

/// Conjugate gradients for a symmetric positive-definite operator.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgReport)> {
    let n = b.len();
    let dot = |a: &[f64], c: &[f64]| a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>();
    let b_norm = libm::sqrt(dot(b, b));
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, CgReport { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    while iterations < max_iter && libm::sqrt(rr) > tol * b_norm {
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iterations += 1;
    }
    apply(&x, &mut ap);
    let res: f64 = b.iter().zip(&ap).map(|(bi, ai)| (bi - ai) * (bi - ai)).sum();
    let relative_residual = libm::sqrt(res) / b_norm;
    if relative_residual > 10.0 * tol {
        return Err(Error::NoConvergence { iterations, residual: relative_residual });
    }
    Ok((x, CgReport { iterations, relative_residual }))
}

/// `g_m(source, ·)` by conjugate gradients on the whole box.
pub fn killed_green(domain: &BoxDomain, source: &[i64]) -> Result<(GreenRow, CgReport)> {
    let src = domain
        .index(source)
        .ok_or_else(|| Error::SiteOutOfRange(source.to_vec()))?;
    let mut b = vec![0.0; domain.len()];
    b[src] = 2.0 * domain.d as f64;
    let (values, report) = conjugate_gradient(
        |u, out| domain.apply_neg_laplacian(u, out),
        &b,
        CG_TOL,
        10 * domain.len(),
    )?;
    let row = GreenRow {
        domain: GreenDomain::Box(*domain),
        source: source.to_vec(),
        values,
        stderr: None,
    };
    Ok((row, report))
}

/// Row of `g_m(o, ·)` restricted to the closed orthant `[0, m]^d`, together
/// with the orbit size `2^{#nonzero coordinates}` of every orthant site.
///
/// The origin row is invariant under coordinate reflections, so the solve
/// runs on `(m+1)^d` unknowns with the reflected stencil, made symmetric by
/// weighting each equation with its orbit size.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthantRow {
    pub domain: BoxDomain,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub report: CgReport,
}

impl OrthantRow {
    /// `g_m(o, y)` for any `y` in the box.
    pub fn get(&self, y: &[i64]) -> f64 {
        let side = self.domain.radius + 1;
        let idx = y.iter().fold(0, |acc, &c| acc * side + c.unsigned_abs() as usize);
        self.values[idx]
    }

    /// `Σ_{y ∈ V_m} g_m(o, y)^p`.
    pub fn power_sum(&self, p: f64) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(g, w)| w * libm::pow(*g, p))
            .sum()
    }
}

/// `g_m(o, ·)` by the reflection-reduced solve.
pub fn killed_green_origin(domain: &BoxDomain) -> Result<OrthantRow> {
    let d = domain.d;
    let side = domain.radius + 1;
    let len = side.pow(d as u32);
    let strides: Vec<usize> = (0..d).map(|a| side.pow((d - 1 - a) as u32)).collect();
    let weights: Vec<f64> = (0..len)
        .map(|i| {
            let nonzero = strides.iter().filter(|&&s| (i / s) % side != 0).count();
            (1u64 << nonzero) as f64
        })
        .collect();
    let d2 = 2.0 * d as f64;
    let apply = |u: &[f64], out: &mut [f64]| {
        for i in 0..len {
            let mut acc = d2 * u[i];
            for &s in &strides {
                let c = (i / s) % side;
                if c + 1 < side {
                    acc -= u[i + s];
                }
                if c > 0 {
                    acc -= u[i - s];
                } else if side > 1 {
                    // reflection: the neighbour at -1 carries the value at +1
                    acc -= u[i + s];
                }
            }
            out[i] = weights[i] * acc;
        }
    };
    let mut b = vec![0.0; len];
    b[0] = d2;
    let (values, report) = conjugate_gradient(apply, &b, CG_TOL, 10 * len.max(10))?;
    Ok(OrthantRow { domain: *domain, values, weights, report })
}

/// `ν_{m,α} = (Σ_{y ∈ V_m} g_m(o, y)^α)^{1/α}`.
pub fn nu_alpha(domain: &BoxDomain, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", format!("{alpha} must be positive")));
    }
    let row = killed_green_origin(domain)?;
    Ok(libm::pow(row.power_sum(alpha), 1.0 / alpha))
}

/// Monte Carlo estimate of `g_m(source, ·)`: mean visit counts of `walks`
/// independent walks killed on exiting the box, with standard errors.
///
/// Walk `k` uses `Stream::new(seed, "killed-green-walk", k)`.
pub fn killed_green_mc(
    domain: &BoxDomain,
    source: &[i64],
    walks: usize,
    seed: u64,
) -> Result<GreenRow> {
    let src = domain
        .index(source)
        .ok_or_else(|| Error::SiteOutOfRange(source.to_vec()))?;
    if walks == 0 {
        return Err(Error::param("walks", "need at least one walk"));
    }
    let side = domain.side();
    let d = domain.d;
    let strides: Vec<usize> = (0..d).map(|a| domain.stride(a)).collect();
    let mut sum = vec![0.0; domain.len()];
    let mut sum_sq = vec![0.0; domain.len()];
    let mut counts = vec![0u32; domain.len()];
    let mut touched: Vec<usize> = Vec::new();
    for k in 0..walks {
        let mut rng = Stream::new(seed, "killed-green-walk", k as u64);
        let mut pos = src;
        loop {
            if counts[pos] == 0 {
                touched.push(pos);
            }
            counts[pos] += 1;
            let dir = rng.below(2 * d as u64) as usize;
            let axis = dir / 2;
            let c = (pos / strides[axis]) % side;
            if dir % 2 == 0 {
                if c + 1 == side {
                    break;
                }
                pos += strides[axis];
            } else {
                if c == 0 {
                    break;
                }
                pos -= strides[axis];
            }
        }
        for &t in &touched {
            let v = f64::from(counts[t]);
            sum[t] += v;
            sum_sq[t] += v * v;
            counts[t] = 0;
        }
        touched.clear();
    }
    let w = walks as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / w).collect();
    let stderr = values
        .iter()
        .zip(&sum_sq)
        .map(|(mean, sq)| {
            if walks < 2 {
                return 0.0;
            }
            let var = ((sq - w * mean * mean) / (w - 1.0)).max(0.0);
            libm::sqrt(var / w)
        })
        .collect();
    Ok(GreenRow {
        domain: GreenDomain::Box(*domain),
        source: source.to_vec(),
        values,
        stderr: Some(stderr),
    })
}
