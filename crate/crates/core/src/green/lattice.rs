//! The full-space lattice Green's function `g(0, y)` of the simple random
//! walk on `Z^d`, `d ≥ 3`, by tensor quadrature of its Fourier integral
//!
//! ```text
//! g(0, y) = ∫_{[0,1]^d} cos(2π y·θ) / D(θ) dθ,   D(θ) = 1 - (1/d) Σ_j cos(2π θ_j).
//! ```
//!
//! The `θ = 0` singularity is handled by subtracting `1/Q` with
//! `Q(θ) = (2π²/d)|θ|²`, whose integral over the unit cube is known in terms
//! of a smooth `(d-1)`-dimensional face integral. The remainder is bounded
//! and is integrated on a grid graded geometrically toward the origin.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::quadrature::{composite_nodes, GaussLegendre};
use crate::{Error, Result};

/// Largest dimension accepted by the quadrature.
pub const MAX_LATTICE_DIM: usize = 6;

/// Resolution of the graded tensor grid on `[0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeOptions {
    /// Gauss–Legendre points per panel.
    pub order: usize,
    /// Number of halvings toward `θ = 0`.
    pub levels: usize,
}

impl LatticeOptions {
    /// Defaults sized so one table costs a few seconds at most.
    pub fn for_dim(d: usize) -> Self {
        match d {
            0..=3 => LatticeOptions { order: 10, levels: 14 },
            4 => LatticeOptions { order: 8, levels: 10 },
            5 => LatticeOptions { order: 6, levels: 7 },
            _ => LatticeOptions { order: 5, levels: 5 },
        }
    }

    fn breaks(&self, radius: usize) -> Vec<f64> {
        let mut geometric: Vec<f64> = (0..=self.levels)
            .map(|k| 0.5 * libm::ldexp(1.0, -(k as i32)))
            .collect();
        geometric.push(0.0);
        geometric.reverse();
        // keep about one period of cos(2π R θ) per panel
        let max_width = 1.0 / radius.max(4) as f64;
        let mut breaks = vec![0.0];
        for pair in geometric.windows(2) {
            let pieces = libm::ceil((pair[1] - pair[0]) / max_width) as usize;
            for i in 1..=pieces {
                breaks.push(pair[0] + (pair[1] - pair[0]) * i as f64 / pieces as f64);
            }
        }
        breaks
    }
}

/// `g(0, y)` for every `y` with `‖y‖_∞ ≤ R`, stored on the orthant `[0, R]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGreen {
    d: usize,
    radius: usize,
    values: Vec<f64>,
}

impl LatticeGreen {
    pub fn new(d: usize, radius: usize) -> Result<Self> {
        Self::with_options(d, radius, LatticeOptions::for_dim(d))
    }

    pub fn with_options(d: usize, radius: usize, options: LatticeOptions) -> Result<Self> {
        if d < 3 {
            return Err(Error::param("d", format!("d = {d}: the walk is recurrent")));
        }
        if d > MAX_LATTICE_DIM {
            return Err(Error::param("d", format!("d = {d} exceeds {MAX_LATTICE_DIM}")));
        }
        if options.order == 0 {
            return Err(Error::param("order", "need at least one node per panel"));
        }
        let rule = GaussLegendre::new(options.order);
        let (theta, w) = composite_nodes(&rule, &options.breaks(radius));
        let values = integrate_table(d, radius, &theta, &w);
        Ok(LatticeGreen { d, radius, values })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// `g(0, y)`, or `None` outside the table.
    pub fn get(&self, y: &[i64]) -> Option<f64> {
        if y.len() != self.d || y.iter().any(|c| c.unsigned_abs() as usize > self.radius) {
            return None;
        }
        let side = self.radius + 1;
        Some(self.values[y.iter().fold(0, |acc, &c| acc * side + c.unsigned_abs() as usize)])
    }

    /// Orthant values, row-major over `[0, R]^d`.
    pub fn orthant_values(&self) -> &[f64] {
        &self.values
    }

    /// `Σ_{‖y‖_∞ = r} g(0, y)^β` for `r = 0..=R`.
    pub fn shell_sums(&self, beta: f64) -> Vec<f64> {
        let side = self.radius + 1;
        let mut sums = vec![0.0; side];
        for (i, g) in self.values.iter().enumerate() {
            let (mut rest, mut shell, mut nonzero) = (i, 0, 0);
            for _ in 0..self.d {
                let c = rest % side;
                rest /= side;
                shell = shell.max(c);
                nonzero += usize::from(c != 0);
            }
            sums[shell] += (1u64 << nonzero) as f64 * libm::pow(*g, beta);
        }
        sums
    }
}

fn for_each_index(d: usize, n: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; d];
    loop {
        f(&idx);
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < n {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// `∫_{[-1/2,1/2]^k} (1/4 + |η|²)^{-1} dη`; the integrand is analytic on a
/// neighbourhood of the cube, so a plain tensor rule converges fast.
fn face_integral(k: usize) -> f64 {
    let rule = GaussLegendre::new(24);
    let (x, w) = composite_nodes(&rule, &[0.0, 0.5]);
    let mut total = 0.0;
    for_each_index(k, x.len(), |idx| {
        let (mut r2, mut weight) = (0.25, 1.0);
        for &i in idx {
            r2 += x[i] * x[i];
            weight *= w[i];
        }
        total += weight / r2;
    });
    libm::ldexp(total, k as i32)
}

/// Contracts axis 0 of `arr` (shape `[n, rest]`) against `cos_table`
/// (shape `[r, n]`), moving the new axis last: result has shape `[rest, r]`.
fn contract_front(arr: &[f64], n: usize, cos_table: &[f64], r: usize) -> Vec<f64> {
    let rest = arr.len() / n;
    let mut out = vec![0.0; rest * r];
    for k in 0..n {
        let slab = &arr[k * rest..(k + 1) * rest];
        for y in 0..r {
            let c = cos_table[y * n + k];
            for (j, a) in slab.iter().enumerate() {
                out[j * r + y] += c * a;
            }
        }
    }
    out
}

fn integrate_table(d: usize, radius: usize, theta: &[f64], w: &[f64]) -> Vec<f64> {
    let n = theta.len();
    let r = radius + 1;
    let cos_table: Vec<f64> = (0..r)
        .flat_map(|y| theta.iter().map(move |t| libm::cos(2.0 * PI * y as f64 * t)))
        .collect();
    // D = (2/d) Σ sin²(π θ_j), written this way to avoid cancellation near 0
    let sin2: Vec<f64> = theta.iter().map(|t| libm::pow(libm::sin(PI * t), 2.0)).collect();
    let sq: Vec<f64> = theta.iter().map(|t| t * t).collect();
    let df = d as f64;
    let q_coef = 2.0 * PI * PI / df;

    let slab_len = n.pow((d - 1) as u32);
    let mut slab = vec![0.0; slab_len];
    let mut acc = vec![0.0; r.pow(d as u32)];
    let mut subtracted = 0.0;
    for k0 in 0..n {
        let mut pos = 0;
        for_each_index(d - 1, n, |idx| {
            let (mut s, mut t2, mut weight) = (sin2[k0], sq[k0], w[k0]);
            for &i in idx {
                s += sin2[i];
                t2 += sq[i];
                weight *= w[i];
            }
            slab[pos] = weight * df / (2.0 * s);
            subtracted += weight / (q_coef * t2);
            pos += 1;
        });
        let mut part = slab.clone();
        for _ in 1..d {
            part = contract_front(&part, n, &cos_table, r);
        }
        // part has shape [R+1]^{d-1}; add the outer product with axis 0
        let rest = part.len();
        for y0 in 0..r {
            let c = cos_table[y0 * n + k0];
            let block = &mut acc[y0 * rest..(y0 + 1) * rest];
            for (a, p) in block.iter_mut().zip(&part) {
                *a += c * p;
            }
        }
    }
    // ∫_{[-1/2,1/2]^d} |θ|^{-2} by the divergence theorem on the cube faces
    let inverse_square = df * face_integral(d - 1) / (df - 2.0);
    let singular = df / (2.0 * PI * PI) * inverse_square;
    let sym = libm::ldexp(1.0, d as i32);
    acc.iter().map(|t| sym * (t - subtracted) + singular).collect()
}

/// The first `count` sites of `Z^d` ordered by `ℓ∞` shell, lexicographically
/// within each shell; starts at the origin.
pub fn shell_enumeration(d: usize, count: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::with_capacity(count);
    if d == 0 {
        return out;
    }
    let mut r = 0i64;
    while out.len() < count {
        let side = (2 * r + 1) as usize;
        for_each_index(d, side, |idx| {
            if out.len() >= count {
                return;
            }
            let y: Vec<i64> = idx.iter().map(|&i| i as i64 - r).collect();
            if y.iter().any(|c| c.abs() == r) {
                out.push(y);
            }
        });
        r += 1;
    }
    out
}

/// Partial sums of `Σ g(0, y)^β` over `ℓ∞` balls.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenSeries {
    pub d: usize,
    pub beta: f64,
    pub radius: usize,
    /// `Σ_{‖y‖_∞ ≤ R} g(0, y)^β`.
    pub partial_sum: f64,
    /// Contribution of the outermost shell `‖y‖_∞ = R`.
    pub last_shell: f64,
    /// Contribution of every shell `r = 0..=R`.
    pub shells: Vec<f64>,
}

pub fn lattice_green_series(d: usize, beta: f64, radius: usize) -> Result<GreenSeries> {
    if !(beta > 0.0) {
        return Err(Error::param("beta", format!("{beta} must be positive")));
    }
    let table = LatticeGreen::new(d, radius)?;
    Ok(series_from_table(&table, beta))
}

pub fn series_from_table(table: &LatticeGreen, beta: f64) -> GreenSeries {
    let shells = table.shell_sums(beta);
    GreenSeries {
        d: table.d,
        beta,
        radius: table.radius,
        partial_sum: shells.iter().sum(),
        last_shell: *shells.last().unwrap_or(&0.0),
        shells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn watson() -> f64 {
        // closed form of the return-visit count for the cubic lattice
        libm::sqrt(6.0) / (32.0 * PI * PI * PI)
            * [1.0, 5.0, 7.0, 11.0]
                .iter()
                .map(|k| libm::tgamma(k / 24.0))
                .product::<f64>()
    }

    #[test]
    fn cubic_lattice_origin_value() {
        let table = LatticeGreen::new(3, 2).unwrap();
        let g0 = table.get(&[0, 0, 0]).unwrap();
        assert!((g0 - watson()).abs() < 1e-8, "{g0} vs {}", watson());
        assert!((watson() - 1.516386).abs() < 1e-6);
    }

    #[test]
    fn harmonic_away_from_origin() {
        for d in 3..=5 {
            let r = 3;
            let table = LatticeGreen::new(d, r).unwrap();
            for (i, &g) in table.orthant_values().iter().enumerate() {
                let y: Vec<i64> = (0..d)
                    .rev()
                    .map(|a| ((i / (r + 1).pow(a as u32)) % (r + 1)) as i64)
                    .collect();
                if y.iter().any(|&c| c as usize == r) {
                    continue;
                }
                let mut avg = 0.0;
                for a in 0..d {
                    for step in [-1, 1] {
                        let mut z = y.clone();
                        z[a] += step;
                        avg += table.get(&z).unwrap();
                    }
                }
                avg /= 2.0 * d as f64;
                let want = if y.iter().all(|&c| c == 0) { 1.0 } else { 0.0 };
                assert!((g - avg - want).abs() < 1e-7, "d={d} y={y:?}: {}", g - avg);
            }
        }
    }

    #[test]
    fn refinement_is_stable() {
        let coarse = LatticeGreen::new(4, 3).unwrap();
        let opts = LatticeOptions { order: 10, levels: 12 };
        let fine = LatticeGreen::with_options(4, 3, opts).unwrap();
        for (a, b) in coarse.orthant_values().iter().zip(fine.orthant_values()) {
            assert!((a - b).abs() < 1e-7 * b, "{a} {b}");
        }
    }

    #[test]
    fn killed_green_increases_toward_lattice_value() {
        use super::super::{killed_green_origin, BoxDomain};
        let table = LatticeGreen::new(5, 2).unwrap();
        let mut last = 0.0;
        for m in [2, 4, 8] {
            let row = killed_green_origin(&BoxDomain::new(5, m).unwrap()).unwrap();
            let g = row.get(&[1, 0, 0, 0, 0]);
            assert!(g > last && g < table.get(&[1, 0, 0, 0, 0]).unwrap());
            last = g;
        }
        let g_lat = table.get(&[1, 0, 0, 0, 0]).unwrap();
        assert!((g_lat - last) / g_lat < 0.02);
    }

    #[test]
    fn series_trends() {
        let steep = lattice_green_series(3, 10.0, 10).unwrap();
        assert!(steep.last_shell / steep.partial_sum < 1e-3);
        let flat = lattice_green_series(3, 1.0, 12).unwrap();
        // shells grow like r² · r^{-1}
        let ratio = flat.shells[12] / flat.shells[6];
        assert!(ratio > 1.7 && ratio < 2.3, "{ratio}");
        assert!(lattice_green_series(2, 1.0, 3).is_err());
        assert!(lattice_green_series(3, 0.0, 3).is_err());
    }

    #[test]
    fn shells_are_ordered() {
        let ys = shell_enumeration(2, 25);
        assert_eq!(ys[0], vec![0, 0]);
        assert_eq!(ys[1], vec![-1, -1]);
        assert_eq!(ys[8], vec![1, 1]);
        assert_eq!(ys[9], vec![-2, -2]);
        let mut seen = ys.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 25);
        assert!(ys.iter().all(|y| y.iter().all(|c| c.abs() <= 2)));
        assert_eq!(shell_enumeration(3, 1000).len(), 1000);
    }
}
