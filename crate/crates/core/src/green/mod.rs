//! Green's functions: spectral on the torus, killed on boxes of `Z^d`, and
//! the full-space lattice Green's function by quadrature.

mod killed;
mod lattice;

pub use killed::{
    conjugate_gradient, killed_green, killed_green_mc, killed_green_origin, nu_alpha, BoxDomain,
    CgReport, OrthantRow, CG_TOL,
};
pub use lattice::{
    lattice_green_series, series_from_table, shell_enumeration, GreenSeries, LatticeGreen,
    LatticeOptions, MAX_LATTICE_DIM,
};

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::torus::{character, dft_forward_real, dft_inverse, RealField, SiteField, TorusGrid};
use crate::{Error, Result};

/// Where a [`GreenRow`] lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreenDomain {
    Torus(TorusGrid),
    Box(BoxDomain),
}

/// The values `g(source, ·)` over a domain, in the domain's site order.
///
/// Box rows are expected visit counts and are nonnegative. Torus rows use
/// the mean-zero gauge and may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenRow {
    pub domain: GreenDomain,
    pub source: Vec<i64>,
    pub values: Vec<f64>,
    /// Monte Carlo standard errors, when the row is an estimate.
    pub stderr: Option<Vec<f64>>,
}

/// Torus Green's function from `x`: the field whose transform is
/// `ĝ_x(a) = -2d n^{-d} χ_{-a}(x) / λ_a` for `a ≠ 0` and `ĝ_x(0) = 0`.
///
/// Equivalently `Δ g_x = -2d (δ_x - n^{-d})` with `Σ g_x = 0`.
pub fn torus_green_row(grid: &TorusGrid, x: &[i64]) -> Result<GreenRow> {
    if x.len() != grid.dim() {
        return Err(Error::ShapeMismatch { expected: grid.dim(), got: x.len() });
    }
    let spectrum = torus_green_spectrum(grid, x);
    let values = dft_inverse(&spectrum).into_values().into_iter().map(|z| z.re).collect();
    Ok(GreenRow { domain: GreenDomain::Torus(*grid), source: x.to_vec(), values, stderr: None })
}

/// The transform `ĝ_x` itself.
pub fn torus_green_spectrum(grid: &TorusGrid, x: &[i64]) -> SiteField<Complex64> {
    let n = grid.side() as i64;
    let lambda = grid.eigenvalues();
    let coef = -2.0 * grid.dim() as f64 / grid.len() as f64;
    SiteField::from_fn(*grid, |a| {
        if a == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let dot: i64 = grid
            .coords(a)
            .iter()
            .zip(x)
            .map(|(&ai, &xi)| ai as i64 * xi.rem_euclid(n))
            .sum();
        // χ_{-a}(x)
        let phase = -2.0 * core::f64::consts::PI * dot.rem_euclid(n) as f64 / n as f64;
        Complex64::from_polar(coef / lambda[a], phase)
    })
}

/// `max_{x, a ≠ 0} |λ_a ĝ_x(a) + 2d n^{-d} χ_{-a}(x)|`, where `ĝ_x` is the
/// forward transform of the real-space row rather than the closed form, so
/// the check covers the inverse/forward transform pair as well.
pub fn spectral_identity_residual(grid: &TorusGrid) -> Result<f64> {
    let lambda = grid.eigenvalues();
    let coef = 2.0 * grid.dim() as f64 / grid.len() as f64;
    let mut worst = 0.0f64;
    for xi in 0..grid.len() {
        let x: Vec<i64> = grid.coords(xi).iter().map(|&c| c as i64).collect();
        let row = torus_green_row(grid, &x)?;
        let hat = dft_forward_real(&RealField::from_vec(*grid, row.values)?);
        let chi = character(grid, &x);
        for a in 1..grid.len() {
            // χ_{-a}(x) = conj χ_a(x)
            let target = chi.values()[a].conj() * coef;
            worst = worst.max((hat.values()[a] * lambda[a] + target).norm());
        }
    }
    Ok(worst)
}
