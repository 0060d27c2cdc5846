//! The discrete torus `Z_n^d`: indexing, Fourier transform, graph Laplacian
//! and the spectral Poisson solver.
//!
//! Sites are stored row-major with axis 0 slowest. The Fourier transform is
//! normalized on the forward side,
//! `v̂(w) = n^{-d} Σ_x v(x) exp(-2πi x·w/n)`, so the inverse is a plain sum
//! over characters. The Laplacian is the unnormalized graph Laplacian
//! `Δv(x) = Σ_{y~x} (v(y) - v(x))`, neighbours counted with multiplicity.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 4;

/// The discrete torus of side `n` in dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    d: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::param("d", "dimension must be in 1..=4"));
        }
        if n < 2 {
            return Err(Error::param("n", "side length must be at least 2"));
        }
        n.checked_pow(d as u32)
            .ok_or_else(|| Error::param("n", "site count overflows"))?;
        Ok(TorusGrid { d, n })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn side(&self) -> usize {
        self.n
    }

    /// Number of sites `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stride of `axis` in the row-major layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d - 1 - axis) as u32)
    }

    /// Coordinates in `0..n` of a site index.
    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut c = vec![0; self.d];
        for axis in (0..self.d).rev() {
            c[axis] = index % self.n;
            index /= self.n;
        }
        c
    }

    /// Site index of coordinates, reduced modulo `n` on every axis.
    pub fn index(&self, coords: &[i64]) -> usize {
        debug_assert_eq!(coords.len(), self.d);
        let n = self.n as i64;
        coords
            .iter()
            .fold(0usize, |acc, &c| acc * self.n + c.rem_euclid(n) as usize)
    }

    /// Representative of a coordinate in the fundamental range `[-n/2, n/2)`.
    pub fn centered(&self, c: usize) -> i64 {
        let c = c % self.n;
        if c < (self.n + 1) / 2 {
            c as i64
        } else {
            c as i64 - self.n as i64
        }
    }

    /// Centered coordinates of a site index.
    pub fn centered_coords(&self, index: usize) -> Vec<i64> {
        self.coords(index).into_iter().map(|c| self.centered(c)).collect()
    }

    /// Point of the scaled torus `T_n^d ⊂ [-1/2, 1/2)^d` carried by a site.
    pub fn torus_point(&self, index: usize) -> Vec<f64> {
        self.centered_coords(index)
            .into_iter()
            .map(|c| c as f64 / self.n as f64)
            .collect()
    }

    /// The `2d` neighbours of a site, with multiplicity.
    pub fn neighbors(&self, index: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.d);
        for axis in 0..self.d {
            let (plus, minus) = self.axis_neighbors(index, axis);
            out.push(plus);
            out.push(minus);
        }
        out
    }

    #[inline]
    pub(crate) fn axis_neighbors(&self, index: usize, axis: usize) -> (usize, usize) {
        let stride = self.stride(axis);
        let c = (index / stride) % self.n;
        let base = index - c * stride;
        let plus = base + ((c + 1) % self.n) * stride;
        let minus = base + ((c + self.n - 1) % self.n) * stride;
        (plus, minus)
    }

    /// One-dimensional Laplacian eigenvalues `-4 sin²(πk/n)`, `k = 0..n`.
    pub fn axis_eigenvalues(&self) -> Vec<f64> {
        (0..self.n)
            .map(|k| {
                let s = libm::sin(PI * k as f64 / self.n as f64);
                -4.0 * s * s
            })
            .collect()
    }

    /// Eigenvalues of the Laplacian for every mode, in site order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let axis = self.axis_eigenvalues();
        (0..self.len())
            .map(|w| self.coords(w).iter().map(|&k| axis[k]).sum())
            .collect()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch { expected: self.len(), got: len });
        }
        Ok(())
    }
}

/// One value per site of a torus.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteField<T> {
    grid: TorusGrid,
    values: Vec<T>,
}

/// Real-valued site function.
pub type RealField = SiteField<f64>;
/// Complex-valued site function, typically spectral data.
pub type SpectralField = SiteField<Complex64>;

impl<T: Copy + Default> SiteField<T> {
    pub fn zeros(grid: TorusGrid) -> Self {
        SiteField { grid, values: vec![T::default(); grid.len()] }
    }
}

impl<T> SiteField<T> {
    pub fn from_vec(grid: TorusGrid, values: Vec<T>) -> Result<Self> {
        grid.check_len(values.len())?;
        Ok(SiteField { grid, values })
    }

    pub fn from_fn(grid: TorusGrid, f: impl FnMut(usize) -> T) -> Self {
        SiteField { grid, values: (0..grid.len()).map(f).collect() }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

impl RealField {
    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        SiteField { grid, values: vec![c; grid.len()] }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(site) => Err(Error::NonFinite { site }),
            None => Ok(()),
        }
    }

    /// Largest sitewise absolute difference.
    pub fn max_abs_diff(&self, other: &RealField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `Δv` with the unnormalized graph Laplacian.
pub fn laplacian_apply(v: &RealField) -> Result<RealField> {
    v.check_finite()?;
    let grid = v.grid;
    let vals = &v.values;
    let d2 = 2.0 * grid.d as f64;
    let out = (0..grid.len())
        .map(|x| {
            let mut acc = 0.0;
            for axis in 0..grid.d {
                let (p, m) = grid.axis_neighbors(x, axis);
                acc += vals[p] + vals[m];
            }
            acc - d2 * vals[x]
        })
        .collect();
    Ok(SiteField { grid, values: out })
}

/// Eigenvalue `λ_w = -4 Σ sin²(π w_i / n)` of the Laplacian for the character `χ_w`.
///
/// Components may be given in `(-n, n)`.
pub fn laplacian_eigenvalue(grid: &TorusGrid, w: &[i64]) -> Result<f64> {
    if w.len() != grid.d {
        return Err(Error::ShapeMismatch { expected: grid.d, got: w.len() });
    }
    let n = grid.n as i64;
    if w.iter().any(|&k| k <= -n || k >= n) {
        return Err(Error::SiteOutOfRange(w.to_vec()));
    }
    Ok(w.iter()
        .map(|&k| {
            let s = libm::sin(PI * k as f64 / grid.n as f64);
            -4.0 * s * s
        })
        .sum())
}

/// The character `χ_w(x) = exp(2πi x·w/n)` as a field.
pub fn character(grid: &TorusGrid, w: &[i64]) -> SpectralField {
    let n = grid.n as i64;
    SiteField::from_fn(*grid, |x| {
        let dot: i64 = grid
            .coords(x)
            .iter()
            .zip(w)
            .map(|(&c, &k)| c as i64 * k.rem_euclid(n))
            .sum();
        let phase = 2.0 * PI * dot.rem_euclid(n) as f64 / grid.n as f64;
        Complex64::new(libm::cos(phase), libm::sin(phase))
    })
}

/// One-dimensional transform of length `n`: radix-2 when `n` is a power of
/// two, direct summation otherwise.
#[derive(Debug, Clone)]
struct LineTransform {
    n: usize,
    // exp(-2πi k/n)
    twiddles: Vec<Complex64>,
    bitrev: Option<Vec<usize>>,
}

impl LineTransform {
    fn new(n: usize) -> Self {
        let twiddles = (0..n)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(libm::cos(a), libm::sin(a))
            })
            .collect();
        let bitrev = n.is_power_of_two().then(|| {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
                .collect()
        });
        LineTransform { n, twiddles, bitrev }
    }

    #[inline]
    fn twiddle(&self, k: usize, inverse: bool) -> Complex64 {
        let t = self.twiddles[k % self.n];
        if inverse {
            t.conj()
        } else {
            t
        }
    }

    /// Unnormalized transform with kernel `exp(∓2πi jk/n)`.
    fn run(&self, line: &mut [Complex64], scratch: &mut [Complex64], inverse: bool) {
        let n = self.n;
        match &self.bitrev {
            Some(rev) => {
                for i in 0..n {
                    let j = rev[i];
                    if i < j {
                        line.swap(i, j);
                    }
                }
                let mut len = 2;
                while len <= n {
                    let step = n / len;
                    for start in (0..n).step_by(len) {
                        for k in 0..len / 2 {
                            let w = self.twiddle(k * step, inverse);
                            let a = line[start + k];
                            let b = line[start + k + len / 2] * w;
                            line[start + k] = a + b;
                            line[start + k + len / 2] = a - b;
                        }
                    }
                    len <<= 1;
                }
            }
            None => {
                for (k, out) in scratch.iter_mut().enumerate().take(n) {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (j, v) in line.iter().enumerate() {
                        acc += *v * self.twiddle(j * k, inverse);
                    }
                    *out = acc;
                }
                line.copy_from_slice(&scratch[..n]);
            }
        }
    }
}

fn transform_in_place(grid: &TorusGrid, data: &mut [Complex64], inverse: bool) {
    let n = grid.n;
    let plan = LineTransform::new(n);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..grid.d {
        let stride = grid.stride(axis);
        for start in 0..grid.len() {
            if (start / stride) % n != 0 {
                continue;
            }
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = data[start + k * stride];
            }
            plan.run(&mut line, &mut scratch, inverse);
            for (k, v) in line.iter().enumerate() {
                data[start + k * stride] = *v;
            }
        }
    }
}

/// Forward transform `v̂(w) = n^{-d} Σ_x v(x) χ_{-w}(x)`.
pub fn dft_forward(v: &SpectralField) -> SpectralField {
    let mut data = v.values.clone();
    transform_in_place(&v.grid, &mut data, false);
    let scale = 1.0 / v.grid.len() as f64;
    for z in &mut data {
        *z *= scale;
    }
    SiteField { grid: v.grid, values: data }
}

/// Forward transform of a real field.
pub fn dft_forward_real(v: &RealField) -> SpectralField {
    dft_forward(&complexify(v))
}

/// Inverse transform `v(x) = Σ_w v̂(w) χ_w(x)`.
pub fn dft_inverse(spec: &SpectralField) -> SpectralField {
    let mut data = spec.values.clone();
    transform_in_place(&spec.grid, &mut data, true);
    SiteField { grid: spec.grid, values: data }
}

pub(crate) fn complexify(v: &RealField) -> SpectralField {
    SiteField {
        grid: v.grid,
        values: v.values.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
    }
}

pub(crate) fn real_part(v: SpectralField) -> RealField {
    SiteField { grid: v.grid, values: v.values.into_iter().map(|z| z.re).collect() }
}

/// Solves `Δv = rhs` with the gauge `Σ_x v(x) = 0`.
///
/// The right-hand side must sum to zero within `1e-9 · n^d · max|rhs|`.
pub fn poisson_solve(rhs: &RealField) -> Result<RealField> {
    rhs.check_finite()?;
    let grid = rhs.grid;
    let sum = rhs.sum();
    let allowed = 1e-9 * grid.len() as f64 * rhs.max_abs();
    if sum.abs() > allowed {
        return Err(Error::NotMeanZero { sum, allowed });
    }
    let mut spec = dft_forward_real(rhs);
    let lambda = grid.eigenvalues();
    spec.values[0] = Complex64::new(0.0, 0.0);
    for (z, l) in spec.values.iter_mut().zip(&lambda).skip(1) {
        *z /= *l;
    }
    Ok(real_part(dft_inverse(&spec)))
}

/// Circular convolution `(a ⋆ b)(x) = Σ_y a(x - y) b(y)` through one transform pair.
pub fn circular_convolution(a: &RealField, b: &RealField) -> Result<RealField> {
    if a.grid != b.grid {
        return Err(Error::ShapeMismatch { expected: a.grid.len(), got: b.grid.len() });
    }
    let fa = dft_forward_real(a);
    let fb = dft_forward_real(b);
    let scale = a.grid.len() as f64;
    let prod = SiteField {
        grid: a.grid,
        values: fa.values.iter().zip(&fb.values).map(|(x, y)| x * y * scale).collect(),
    };
    Ok(real_part(dft_inverse(&prod)))
}
