//! The rescaled odometer pairing `⟨Ξₙ, f⟩ = Σ_x kₙ(x) σ(x)` against
//! trigonometric test functions, its characteristic function at finite `n`,
//! and the limit functional
//!
//! ```text
//! L_α(f) = ∫_{T^d} |Σ_{z≠0} e^{-2πi z·x} f̂(z) / ‖z‖²|^α dx.
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use num_complex::Complex64;

use crate::quadrature::{self, GaussLegendre};
use crate::rng::Stream;
use crate::sandpile::{odometer_exact, MassField, SiteDomain};
use crate::stable::{self, HeavyTailLaw, Quantiles};
use crate::stats;
use crate::torus::{dft_forward_real, poisson_solve, RealField, TorusGrid};
use crate::{Error, Result};

/// A real trigonometric polynomial with no constant term.
///
/// Stored as its Fourier coefficients `f̂(z)`, closed under `f̂(-z) = conj f̂(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    d: usize,
    modes: BTreeMap<Vec<i64>, Complex64>,
}

impl TestFunction {
    pub fn zero(d: usize) -> Self {
        TestFunction { d, modes: BTreeMap::new() }
    }

    /// Builds `f` from `(z, f̂(z))` pairs, adding `(-z, conj f̂(z))` when the
    /// partner is absent. Zero modes and conflicting partners are rejected.
    pub fn new(d: usize, entries: impl IntoIterator<Item = (Vec<i64>, Complex64)>) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "dimension must be positive"));
        }
        let mut given: BTreeMap<Vec<i64>, Complex64> = BTreeMap::new();
        for (z, c) in entries {
            if z.len() != d {
                return Err(Error::ShapeMismatch { expected: d, got: z.len() });
            }
            if z.iter().all(|&k| k == 0) {
                return Err(Error::param("modes", "the zero mode is not allowed (mean-zero test functions)"));
            }
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::param("modes", format!("non-finite coefficient at {z:?}")));
            }
            *given.entry(z).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        let mut modes = given.clone();
        for (z, c) in &given {
            let minus: Vec<i64> = z.iter().map(|k| -k).collect();
            match given.get(&minus) {
                Some(partner) => {
                    if (partner - c.conj()).norm() > 1e-12 * (1.0 + c.norm()) {
                        return Err(Error::param(
                            "modes",
                            format!("coefficients at {z:?} and {minus:?} are not conjugate"),
                        ));
                    }
                }
                None => {
                    modes.insert(minus, c.conj());
                }
            }
        }
        modes.retain(|_, c| c.norm() != 0.0);
        Ok(TestFunction { d, modes })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn modes(&self) -> impl Iterator<Item = (&Vec<i64>, &Complex64)> {
        self.modes.iter()
    }

    pub fn coefficient(&self, z: &[i64]) -> Complex64 {
        self.modes.get(z).copied().unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn is_zero(&self) -> bool {
        self.modes.is_empty()
    }

    /// Largest `‖z‖_∞` in the support (0 for `f ≡ 0`).
    pub fn degree(&self) -> i64 {
        self.modes.keys().flat_map(|z| z.iter().map(|k| k.abs())).max().unwrap_or(0)
    }

    /// `c·f`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for v in out.modes.values_mut() {
            *v *= c;
        }
        out.modes.retain(|_, v| v.norm() != 0.0);
        out
    }

    /// `f + g`.
    pub fn plus(&self, other: &TestFunction) -> Result<Self> {
        if self.d != other.d {
            return Err(Error::ShapeMismatch { expected: self.d, got: other.d });
        }
        let mut out = self.clone();
        for (z, c) in &other.modes {
            *out.modes.entry(z.clone()).or_insert(Complex64::new(0.0, 0.0)) += c;
        }
        out.modes.retain(|_, v| v.norm() != 0.0);
        Ok(out)
    }

    /// `Σ_z f̂(z) e^{2πi z·x}` before discarding the imaginary part.
    fn eval_complex(&self, x: &[f64]) -> Complex64 {
        self.modes
            .iter()
            .map(|(z, c)| {
                let phase: f64 = z.iter().zip(x).map(|(&k, &t)| k as f64 * t).sum();
                c * Complex64::from_polar(1.0, 2.0 * PI * phase)
            })
            .sum()
    }

    /// `f(x)`; the imaginary residue is dropped (see [`eval_test_function`]).
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_complex(x).re
    }

    fn l1_coefficients(&self) -> f64 {
        self.modes.values().map(|c| c.norm()).sum()
    }
}

/// The literal form accepted by [`FromStr`]: `z:re[,im]` entries joined by
/// `;`, with `z` a comma-separated integer vector. Every stored mode is
/// listed, so parsing the output reproduces the function exactly.
impl fmt::Display for TestFunction {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (z, c) in &self.modes {
            if !first {
                out.write_str(";")?;
            }
            first = false;
            for (i, k) in z.iter().enumerate() {
                if i > 0 {
                    out.write_str(",")?;
                }
                write!(out, "{k}")?;
            }
            write!(out, ":{:?}", c.re)?;
            if c.im != 0.0 {
                write!(out, ",{:?}", c.im)?;
            }
        }
        Ok(())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut d = None;
        for item in s.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            let (zs, cs) = item
                .split_once(':')
                .ok_or_else(|| Error::param("modes", format!("`{item}` lacks `:`")))?;
            let z = zs
                .split(',')
                .map(|t| t.trim().parse::<i64>())
                .collect::<core::result::Result<Vec<i64>, _>>()
                .map_err(|e| Error::param("modes", format!("`{zs}`: {e}")))?;
            let parts = cs
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<core::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::param("modes", format!("`{cs}`: {e}")))?;
            let c = match parts.as_slice() {
                [re] => Complex64::new(*re, 0.0),
                [re, im] => Complex64::new(*re, *im),
                _ => return Err(Error::param("modes", format!("`{cs}` is not re[,im]"))),
            };
            if *d.get_or_insert(z.len()) != z.len() {
                return Err(Error::param("modes", "mode vectors of different lengths"));
            }
            entries.push((z, c));
        }
        let d = d.ok_or_else(|| Error::param("modes", "no modes given"))?;
        TestFunction::new(d, entries)
    }
}

/// `f(x)` with the check that the imaginary residue stays below
/// `1e-12 · (1 + Σ|f̂|)`.
pub fn eval_test_function(f: &TestFunction, x: &[f64]) -> Result<f64> {
    if x.len() != f.d {
        return Err(Error::ShapeMismatch { expected: f.d, got: x.len() });
    }
    let v = f.eval_complex(x);
    if v.im.abs() > 1e-12 * (1.0 + f.l1_coefficients()) {
        return Err(Error::InvariantViolated { check: "real test function", residual: v.im.abs() });
    }
    Ok(v.re)
}

/// `∫_{z_j - 1/(2n)}^{z_j + 1/(2n)} e^{2πi k t} dt / e^{2πi k z_j}`.
fn cell_factor(k: i64, n: usize) -> f64 {
    if k == 0 {
        1.0 / n as f64
    } else {
        let a = PI * k as f64;
        libm::sin(a / n as f64) / a
    }
}

/// `H_n(z) = ∫_{B(z, 1/(2n))} f(t) dt` for the grid point `z = c/n`, with
/// `c` the coordinates of `site`; `B` is the cube of side `1/n`.
pub fn cell_integral(f: &TestFunction, grid: &TorusGrid, site: usize) -> Result<f64> {
    if f.d != grid.dim() {
        return Err(Error::ShapeMismatch { expected: grid.dim(), got: f.d });
    }
    let n = grid.side();
    let c = grid.coords(site);
    Ok(f.modes
        .iter()
        .map(|(z, coef)| {
            let mut factor = 1.0;
            let mut phase = 0i64;
            for (&k, &cj) in z.iter().zip(&c) {
                factor *= cell_factor(k, n);
                phase += k.rem_euclid(n as i64) * cj as i64;
            }
            let angle = 2.0 * PI * phase.rem_euclid(n as i64) as f64 / n as f64;
            (coef * Complex64::from_polar(factor, angle)).re
        })
        .sum())
}

/// `L_n(y) = H_n(y/n)` over the whole grid.
pub fn cell_field(f: &TestFunction, grid: &TorusGrid) -> Result<RealField> {
    if f.d != grid.dim() {
        return Err(Error::ShapeMismatch { expected: grid.dim(), got: f.d });
    }
    let values = (0..grid.len())
        .map(|x| cell_integral(f, grid, x))
        .collect::<Result<Vec<f64>>>()?;
    RealField::from_vec(*grid, values)
}

/// `c_n = 4π² n^{d - d/α - 2}`.
pub fn scaling_constant(n: usize, d: usize, alpha: f64) -> f64 {
    let df = d as f64;
    4.0 * PI * PI * libm::pow(n as f64, df - df / alpha - 2.0)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::param("alpha", format!("{alpha} is outside (0, 2]")));
    }
    Ok(())
}

/// `kₙ` together with `Σ_x |kₙ(x)|^α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingKernel {
    pub alpha: f64,
    pub cn: f64,
    pub values: RealField,
    pub power_sum: f64,
}

impl ScalingKernel {
    pub fn grid(&self) -> TorusGrid {
        self.values.grid()
    }

    pub fn sup(&self) -> f64 {
        self.values.max_abs()
    }
}

/// `kₙ(x) = c_n (2d)^{-1} Σ_z g(x, nz) H_n(z)`.
///
/// Since `Σ_y g(x, y) L(y) = -2d Δ^{-1} L` for mean-zero `L`, this is
/// `-c_n Δ^{-1} L_n`, evaluated spectrally. The gauge of `g` drops out
/// because `Σ_z H_n(z) = 0`, which is checked.
pub fn kernel_kn(grid: &TorusGrid, f: &TestFunction, alpha: f64) -> Result<ScalingKernel> {
    check_alpha(alpha)?;
    let cells = cell_field(f, grid)?;
    let total = cells.sum();
    let allowed = 1e-12 * (1.0 + f.l1_coefficients());
    if total.abs() > allowed {
        return Err(Error::NotMeanZero { sum: total, allowed });
    }
    let cn = scaling_constant(grid.side(), grid.dim(), alpha);
    let potential = poisson_solve(&cells)?;
    let values: Vec<f64> = potential.values().iter().map(|v| -cn * v).collect();
    let values = RealField::from_vec(*grid, values)?;
    let sum = values.sum();
    let size: f64 = values.values().iter().map(|v| v.abs()).sum();
    if sum.abs() > 1e-9 * size.max(f64::MIN_POSITIVE) {
        return Err(Error::NotMeanZero { sum, allowed: 1e-9 * size });
    }
    let power_sum = values.values().iter().map(|v| libm::pow(v.abs(), alpha)).sum();
    Ok(ScalingKernel { alpha, cn, values, power_sum })
}

/// `⟨Ξₙ, f⟩ = Σ_x kₙ(x) σ(x)`.
pub fn pair_field(kernel: &ScalingKernel, sigma: &RealField) -> Result<f64> {
    if sigma.grid() != kernel.grid() {
        return Err(Error::ShapeMismatch { expected: kernel.grid().len(), got: sigma.grid().len() });
    }
    Ok(kernel.values.values().iter().zip(sigma.values()).map(|(k, s)| k * s).sum())
}

/// The same pairing through the odometer: `c_n Σ_z u(nz) H_n(z)` with `u`
/// the exact odometer of `s = 1 + σ - mean(σ)`.
pub fn pair_via_odometer(grid: &TorusGrid, f: &TestFunction, alpha: f64, sigma: &RealField) -> Result<f64> {
    check_alpha(alpha)?;
    if sigma.grid() != *grid {
        return Err(Error::ShapeMismatch { expected: grid.len(), got: sigma.grid().len() });
    }
    let avg = sigma.sum() / grid.len() as f64;
    let masses = sigma.values().iter().map(|s| 1.0 + (s - avg)).collect();
    let config = MassField::new(SiteDomain::Torus(*grid), masses)?;
    let u = odometer_exact(grid, &config)?;
    let cells = cell_field(f, grid)?;
    let cn = scaling_constant(grid.side(), grid.dim(), alpha);
    Ok(cn * u.values.iter().zip(cells.values()).map(|(a, b)| a * b).sum::<f64>())
}

/// `E exp(iθ⟨Ξₙ, f⟩) = exp(-𝔠^α |θ|^α Σ|kₙ|^α)` for SαS(𝔠) noise.
pub fn exact_cf_finite_n(kernel: &ScalingKernel, scale: f64, theta: f64) -> f64 {
    libm::exp(-libm::pow(scale * theta.abs(), kernel.alpha) * kernel.power_sum)
}

/// Monte Carlo estimate of `E exp(iθ⟨Ξₙ, f⟩)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McCf {
    pub estimate: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
    pub reps: usize,
}

/// Replica `r` fills the grid in site order from `Stream::new(seed, "mc-cf", r)`.
pub fn mc_cf(kernel: &ScalingKernel, law: &HeavyTailLaw, reps: usize, theta: f64, seed: u64) -> Result<McCf> {
    law.validate()?;
    if !law.is_symmetric() {
        return Err(Error::param("law", format!("{} is not symmetric", law.name())));
    }
    if reps < 2 {
        return Err(Error::param("reps", "need at least two replicas"));
    }
    let mut re = Vec::with_capacity(reps);
    let mut im = Vec::with_capacity(reps);
    let k = kernel.values.values();
    for r in 0..reps {
        let mut rng = Stream::new(seed, "mc-cf", r as u64);
        let p: f64 = k.iter().map(|kx| kx * law.sample(&mut rng)).sum();
        re.push(libm::cos(theta * p));
        im.push(libm::sin(theta * p));
    }
    let (mr, sr) = stats::mean_stderr(&re);
    let (mi, si) = stats::mean_stderr(&im);
    Ok(McCf { estimate: Complex64::new(mr, mi), stderr_re: sr, stderr_im: si, reps })
}

/// `L_α(f)` with an error estimate from doubling the rule order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitFunctional {
    pub value: f64,
    /// `|L(q) - L(2q)| / L(2q)`.
    pub relative_error: f64,
    pub order: usize,
}

/// Default Gauss–Legendre order per panel.
pub const DEFAULT_ORDER: usize = 64;

/// `L_α(f)`. The innermost axis (the one carrying the highest frequency)
/// is split at the zeros of the integrand's trigonometric polynomial and
/// each piece gets a `q`-point Gauss–Legendre rule; outer axes use adaptive
/// bisection with the same rule. The value returned uses `2q`.
pub fn limit_functional(f: &TestFunction, alpha: f64, q: usize) -> Result<LimitFunctional> {
    check_alpha(alpha)?;
    if q < 2 {
        return Err(Error::param("q", "need at least two nodes"));
    }
    if f.is_zero() {
        return Ok(LimitFunctional { value: 0.0, relative_error: 0.0, order: 2 * q });
    }
    let coarse = limit_quadrature(f, alpha, q);
    let fine = limit_quadrature(f, alpha, 2 * q);
    let relative_error = if fine == 0.0 { 0.0 } else { (coarse - fine).abs() / fine };
    Ok(LimitFunctional { value: fine, relative_error, order: 2 * q })
}

fn limit_quadrature(f: &TestFunction, alpha: f64, q: usize) -> f64 {
    let d = f.d;
    let inner = (0..d)
        .max_by_key(|&a| (f.modes.keys().map(|z| z[a].abs()).max().unwrap_or(0), core::cmp::Reverse(a)))
        .unwrap_or(0);
    // weights f̂(z)/‖z‖² grouped by the inner frequency
    let weighted: Vec<(Vec<i64>, Complex64)> = f
        .modes
        .iter()
        .map(|(z, c)| {
            let norm2: i64 = z.iter().map(|k| k * k).sum();
            (z.clone(), c / norm2 as f64)
        })
        .collect();
    let outer: Vec<usize> = (0..d).filter(|&a| a != inner).collect();
    let rule = GaussLegendre::new(q);
    let mut point = vec![0.0; d];
    integrate_axes(&outer, &mut point, &rule, &mut |pt| {
        inner_line(&weighted, inner, pt, alpha, &rule)
    })
}

fn integrate_axes(
    axes: &[usize],
    point: &mut Vec<f64>,
    rule: &GaussLegendre,
    inner: &mut impl FnMut(&[f64]) -> f64,
) -> f64 {
    let Some((&axis, rest)) = axes.split_first() else {
        return inner(point);
    };
    let mut g = |t: f64| {
        point[axis] = t;
        integrate_axes(rest, point, rule, inner)
    };
    quadrature::adaptive(rule, 0.0, 1.0, 1e-11, 18, &mut g)
}

/// `∫_0^1 |F|^α` along the inner axis with the other coordinates fixed.
fn inner_line(weighted: &[(Vec<i64>, Complex64)], axis: usize, pt: &[f64], alpha: f64, rule: &GaussLegendre) -> f64 {
    let mut coef: BTreeMap<i64, Complex64> = BTreeMap::new();
    for (z, w) in weighted {
        let phase: f64 = z
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != axis)
            .map(|(a, &k)| k as f64 * pt[a])
            .sum();
        *coef.entry(z[axis]).or_insert(Complex64::new(0.0, 0.0)) +=
            w * Complex64::from_polar(1.0, -2.0 * PI * phase);
    }
    let terms: Vec<(f64, Complex64)> = coef.into_iter().map(|(k, c)| (k as f64, c)).collect();
    let eval = |t: f64| -> f64 {
        terms.iter().map(|(k, c)| (c * Complex64::from_polar(1.0, -2.0 * PI * k * t)).re).sum()
    };
    let degree = terms.iter().map(|(k, _)| k.abs()).fold(0.0, f64::max) as usize;
    let samples = 64 * (degree + 1);
    let mut breaks = vec![0.0];
    let mut prev = eval(0.0);
    for i in 1..=samples {
        let t = i as f64 / samples as f64;
        let v = eval(t);
        if v == 0.0 && i < samples {
            breaks.push(t);
        } else if prev != 0.0 && (prev < 0.0) != (v < 0.0) {
            let (mut lo, mut hi, mut flo) = ((i - 1) as f64 / samples as f64, t, prev);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let fm = eval(mid);
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            breaks.push(0.5 * (lo + hi));
        }
        prev = v;
    }
    breaks.push(1.0);
    breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| rule.integrate(w[0], w[1], |t| libm::pow(eval(t).abs(), alpha)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub kn_sum: f64,
    pub limit: f64,
    /// `|Σ|kₙ|^α - L_α| / L_α`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceSweep {
    pub rows: Vec<SweepRow>,
    pub limit: LimitFunctional,
    /// `-slope` of `ln gap` against `ln n` over rows with positive gap.
    pub fitted_rate: Option<f64>,
}

fn check_ns(ns: &[usize]) -> Result<()> {
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] < 2 {
        return Err(Error::param("ns", "must be an increasing list of sizes ≥ 2"));
    }
    Ok(())
}

pub fn convergence_sweep(f: &TestFunction, alpha: f64, ns: &[usize]) -> Result<ConvergenceSweep> {
    check_ns(ns)?;
    let limit = limit_functional(f, alpha, DEFAULT_ORDER)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let kernel = kernel_kn(&TorusGrid::new(f.d, n)?, f, alpha)?;
        let gap = if limit.value == 0.0 {
            0.0
        } else {
            (kernel.power_sum - limit.value).abs() / limit.value
        };
        rows.push(SweepRow { n, kn_sum: kernel.power_sum, limit: limit.value, gap });
    }
    let usable: Vec<&SweepRow> = rows.iter().filter(|r| r.gap > 0.0).collect();
    let fitted_rate = (usable.len() >= 2).then(|| {
        let xs: Vec<f64> = usable.iter().map(|r| libm::log(r.n as f64)).collect();
        let ys: Vec<f64> = usable.iter().map(|r| libm::log(r.gap)).collect();
        -stats::linear_fit(&xs, &ys).1
    });
    Ok(ConvergenceSweep { rows, limit, fitted_rate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupCheck {
    /// `(n, n^{d/α} sup_x |kₙ(x)|)`.
    pub rows: Vec<(usize, f64)>,
    /// `max / min` of the normalized sups (1 when all vanish).
    pub band_ratio: f64,
}

pub fn kn_sup_check(f: &TestFunction, alpha: f64, ns: &[usize]) -> Result<SupCheck> {
    check_ns(ns)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let kernel = kernel_kn(&TorusGrid::new(f.d, n)?, f, alpha)?;
        let norm = libm::pow(n as f64, f.d as f64 / alpha);
        rows.push((n, norm * kernel.sup()));
    }
    let hi = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let band_ratio = if hi == 0.0 { 1.0 } else { hi / lo };
    Ok(SupCheck { rows, band_ratio })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierRow {
    pub n: usize,
    /// `max_{z ∈ supp f̂} |f̂ₙ(z) - f̂(z)|`.
    pub discrepancy: f64,
    /// `n` times the above.
    pub scaled: f64,
    /// Largest `|f̂ₙ(w)|` over grid frequencies `w` outside the support.
    pub alias: f64,
}

/// Riemann-sum coefficients `f̂ₙ(z) = n^{-d} Σ_{w ∈ T_n^d} f(w) e^{-2πi z·w}`
/// against the exact ones.
pub fn fourier_discrepancy(f: &TestFunction, ns: &[usize]) -> Result<Vec<FourierRow>> {
    check_ns(ns)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let grid = TorusGrid::new(f.d, n)?;
        let samples = RealField::from_fn(grid, |x| f.eval(&grid.torus_point(x)));
        let spec = dft_forward_real(&samples);
        let discrepancy = f
            .modes
            .iter()
            .map(|(z, c)| (spec.values()[grid.index(z)] - c).norm())
            .fold(0.0, f64::max);
        let alias = (0..grid.len())
            .filter(|&w| {
                let cz = grid.centered_coords(w);
                // frequencies that alias onto the support are not "outside"
                !f.modes.keys().any(|z| grid.index(z) == grid.index(&cz))
            })
            .map(|w| spec.values()[w].norm())
            .fold(0.0, f64::max);
        rows.push(FourierRow { n, discrepancy, scaled: n as f64 * discrepancy, alias });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingProbe {
    pub n: usize,
    /// `(ε, P(|R_n| > ε))`.
    pub exceed: Vec<(f64, f64)>,
    /// Mean of `n^{-d/α} Σ_x |σ(x) - ρ(x)|`.
    pub l1_distance: f64,
    /// `R_n` per replica.
    pub remainders: Vec<f64>,
    /// Uniforms that fell outside a quantile table and were extrapolated.
    pub clipped: usize,
}

/// `R_n = Σ_x kₙ(x)(σ(x) - ρ(x))` with `σ ~ law_a`, `ρ ~ law_b` built from
/// shared uniforms through their quantile functions.
///
/// Replica `r` draws one uniform per site from `Stream::new(seed, "coupling", r)`.
pub fn coupling_probe(
    kernel: &ScalingKernel,
    law_a: &HeavyTailLaw,
    law_b: &HeavyTailLaw,
    reps: usize,
    eps: &[f64],
    seed: u64,
) -> Result<CouplingProbe> {
    if reps == 0 {
        return Err(Error::param("reps", "need at least one replica"));
    }
    let qa = Quantiles::new(law_a)?;
    let qb = if law_a == law_b { None } else { Some(Quantiles::new(law_b)?) };
    let grid = kernel.grid();
    let norm = libm::pow(grid.side() as f64, -(grid.dim() as f64) / kernel.alpha);
    let k = kernel.values.values();
    let mut remainders = Vec::with_capacity(reps);
    let mut l1 = 0.0;
    let mut clipped = 0;
    for r in 0..reps {
        let mut rng = Stream::new(seed, "coupling", r as u64);
        let (mut rem, mut dist) = (0.0, 0.0);
        for kx in k {
            let u = rng.open_uniform();
            let (a, ca) = qa.quantile_checked(u)?;
            let (b, cb) = match &qb {
                Some(q) => q.quantile_checked(u)?,
                None => (a, false),
            };
            clipped += usize::from(ca) + usize::from(cb);
            rem += kx * (a - b);
            dist += (a - b).abs();
        }
        remainders.push(rem);
        l1 += norm * dist;
    }
    let exceed = eps
        .iter()
        .map(|&e| (e, remainders.iter().filter(|r| r.abs() > e).count() as f64 / reps as f64))
        .collect();
    Ok(CouplingProbe { n: grid.side(), exceed, l1_distance: l1 / reps as f64, remainders, clipped })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCheck {
    /// `(exp(-L(af))·exp(-L(bf)), exp(-L(cf)))` per test function,
    /// `c = (a^α + b^α)^{1/α}`.
    pub rows: Vec<(f64, f64)>,
    pub max_error: f64,
    pub passed: bool,
}

/// Functional form of α-stability: `exp(-L(af)) exp(-L(bf)) = exp(-L(cf))`.
pub fn stability_property_check(fs: &[TestFunction], alpha: f64, a: f64, b: f64) -> Result<StabilityCheck> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::param("a, b", "both scalings must be positive"));
    }
    check_alpha(alpha)?;
    let c = libm::pow(libm::pow(a, alpha) + libm::pow(b, alpha), 1.0 / alpha);
    let mut rows = Vec::with_capacity(fs.len());
    for f in fs {
        let la = limit_functional(&f.scaled(a), alpha, DEFAULT_ORDER)?.value;
        let lb = limit_functional(&f.scaled(b), alpha, DEFAULT_ORDER)?.value;
        let lc = limit_functional(&f.scaled(c), alpha, DEFAULT_ORDER)?.value;
        rows.push((libm::exp(-la) * libm::exp(-lb), libm::exp(-lc)));
    }
    let max_error = rows.iter().map(|(l, r)| (l - r).abs()).fold(0.0, f64::max);
    Ok(StabilityCheck { rows, max_error, passed: max_error < 1e-10 })
}

/// `∫_0^1 |cos 2πt|^α dt` by splitting at the zeros; an independent 1-d
/// reference for single-mode limits.
pub fn cos_power_integral(alpha: f64) -> f64 {
    let rule = GaussLegendre::new(64);
    // |cos| on [0, 1/4] repeated four times
    4.0 * rule.integrate(0.0, 0.25, |t| libm::pow(libm::cos(2.0 * PI * t), alpha))
}

/// Descriptive name used in reports.
pub fn describe(f: &TestFunction) -> String {
    format!("{f}")
}

/// Pareto law matched to SαS(`scale`) in the normal domain of attraction,
/// i.e. the inverse of [`HeavyTailLaw::attraction_scale`].
pub fn stable_partner(law: &HeavyTailLaw) -> Result<HeavyTailLaw> {
    let scale = law
        .attraction_scale()
        .ok_or_else(|| Error::param("law", format!("{} has no stable partner", law.name())))?;
    stable::HeavyTailLaw::stable(law.alpha(), scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::torus_green_row;
    use alloc::string::ToString;
    use crate::torus::circular_convolution;

    fn cos1() -> TestFunction {
        "1:0.5".parse().unwrap()
    }

    #[test]
    fn literal_parsing_and_closure() {
        let f = cos1();
        assert_eq!(f.coefficient(&[-1]), Complex64::new(0.5, 0.0));
        assert!((f.eval(&[0.0]) - 1.0).abs() < 1e-15);
        let g: TestFunction = "1,0:0.25,0.1;0,2:1".parse().unwrap();
        assert_eq!(g.coefficient(&[-1, 0]), Complex64::new(0.25, -0.1));
        assert_eq!(g.to_string().parse::<TestFunction>().unwrap(), g);
        assert!("0:1".parse::<TestFunction>().is_err());
        assert!("1:1;1,2:1".parse::<TestFunction>().is_err());
        assert!("1:1;-1:2".parse::<TestFunction>().is_err());
        assert!(TestFunction::zero(1).eval(&[0.3]) == 0.0);
    }

    #[test]
    fn evaluation_is_real_and_mean_zero() {
        let g: TestFunction = "1,0:0.25,0.1;1,-2:0.3,-0.7".parse().unwrap();
        let rule = GaussLegendre::new(16);
        let mut total = 0.0;
        for (x, wx) in rule.mapped(0.0, 1.0) {
            for (y, wy) in rule.mapped(0.0, 1.0) {
                total += wx * wy * eval_test_function(&g, &[x, y]).unwrap();
            }
        }
        assert!(total.abs() < 1e-10);
    }

    #[test]
    fn cell_integrals() {
        let g: TestFunction = "1,0:0.25,0.1;1,-2:0.3,-0.7".parse().unwrap();
        let grid = TorusGrid::new(2, 8).unwrap();
        let cells = cell_field(&g, &grid).unwrap();
        assert!(cells.sum().abs() < 1e-12);
        // against a tensor rule on one cell
        let site = grid.index(&[3, 5]);
        let rule = GaussLegendre::new(12);
        let h = 1.0 / 16.0;
        let mut direct = 0.0;
        for (x, wx) in rule.mapped(3.0 / 8.0 - h, 3.0 / 8.0 + h) {
            for (y, wy) in rule.mapped(5.0 / 8.0 - h, 5.0 / 8.0 + h) {
                direct += wx * wy * g.eval(&[x, y]);
            }
        }
        assert!((cells.values()[site] - direct).abs() < 1e-14);
        // n^d H_n(z) → f(z) with an O(1/n²) midpoint error
        let f = cos1();
        let fine = TorusGrid::new(1, 64).unwrap();
        for c in [0usize, 5, 17] {
            let z = c as f64 / 64.0;
            let err = (64.0 * cell_integral(&f, &fine, c).unwrap() - f.eval(&[z])).abs();
            assert!(err < 2.0 * PI * PI / (6.0 * 64.0 * 64.0));
        }
    }

    #[test]
    fn kernel_matches_green_convolution() {
        let g: TestFunction = "1,0:0.25,0.1;1,-2:0.3,-0.7".parse().unwrap();
        let grid = TorusGrid::new(2, 8).unwrap();
        let kernel = kernel_kn(&grid, &g, 1.5).unwrap();
        let row = torus_green_row(&grid, &[0, 0]).unwrap();
        let green = RealField::from_vec(grid, row.values).unwrap();
        let conv = circular_convolution(&green, &cell_field(&g, &grid).unwrap()).unwrap();
        for (k, c) in kernel.values.values().iter().zip(conv.values()) {
            assert!((k - kernel.cn / 4.0 * c).abs() < 1e-12);
        }
        assert!(kernel.values.sum().abs() < 1e-12);
    }

    #[test]
    fn parseval_closed_form() {
        let kernel = kernel_kn(&TorusGrid::new(1, 64).unwrap(), &cos1(), 2.0).unwrap();
        assert!((kernel.power_sum - 0.5).abs() < 0.01);
        assert!((exact_cf_finite_n(&kernel, 1.0, 1.0) - libm::exp(-0.5)).abs() < 0.02 * libm::exp(-0.5));
        let l2 = limit_functional(&cos1(), 2.0, DEFAULT_ORDER).unwrap();
        assert!((l2.value - 0.5).abs() < 1e-8);
        let g: TestFunction = "1,0:0.25,0.1;1,-2:0.3,-0.7".parse().unwrap();
        let parseval: f64 = g
            .modes()
            .map(|(z, c)| c.norm_sqr() / libm::pow(z.iter().map(|k| (k * k) as f64).sum::<f64>(), 2.0))
            .sum();
        let l = limit_functional(&g, 2.0, 32).unwrap();
        assert!((l.value - parseval).abs() < 1e-8 * parseval);
    }

    #[test]
    fn single_mode_limits() {
        let l1 = limit_functional(&cos1(), 1.0, DEFAULT_ORDER).unwrap();
        assert!((l1.value - 2.0 / PI).abs() < 1e-6);
        assert!((cos_power_integral(1.0) - 2.0 / PI).abs() < 1e-12);
        let f3: TestFunction = "3:0.5".parse().unwrap();
        let l = limit_functional(&f3, 1.5, DEFAULT_ORDER).unwrap();
        assert!((l.value - libm::pow(3.0, -3.0) * cos_power_integral(1.5)).abs() < 1e-9);
        for alpha in [1.0, 1.3, 1.5, 1.8, 2.0] {
            let g: TestFunction = "1,1:0.5;0,2:0.2,0.1".parse().unwrap();
            let base = limit_functional(&g, alpha, DEFAULT_ORDER).unwrap().value;
            let scaled = limit_functional(&g.scaled(2.5), alpha, DEFAULT_ORDER).unwrap().value;
            assert!((scaled - libm::pow(2.5, alpha) * base).abs() < 1e-10 * scaled);
        }
    }

    #[test]
    fn pairing_routes_agree() {
        let grid = TorusGrid::new(1, 8).unwrap();
        let f = cos1();
        let kernel = kernel_kn(&grid, &f, 1.5).unwrap();
        let mut rng = Stream::new(1, "test", 0);
        let sigma = RealField::from_fn(grid, |_| rng.normal());
        let a = pair_field(&kernel, &sigma).unwrap();
        let b = pair_via_odometer(&grid, &f, 1.5, &sigma).unwrap();
        assert!((a - b).abs() < 1e-8 * a.abs());
        let zero = RealField::constant(grid, 0.0);
        assert_eq!(pair_field(&kernel, &zero).unwrap(), 0.0);
    }

    #[test]
    fn sup_and_fourier_checks() {
        let f: TestFunction = "1:0.5".parse().unwrap();
        let sup = kn_sup_check(&f, 1.5, &[8, 16, 32, 64, 128]).unwrap();
        assert!(sup.band_ratio < 2.0);
        let zero = kn_sup_check(&TestFunction::zero(1), 1.5, &[8, 16]).unwrap();
        assert!(zero.rows.iter().all(|r| r.1 == 0.0));
        let rows = fourier_discrepancy(&"3:0.5;5:0.1,0.2".parse().unwrap(), &[4, 8, 16, 32]).unwrap();
        assert!(rows[0].discrepancy > 0.01 && rows[0].alias > 0.0);
        // 3 ≡ -5 (mod 8): aliasing persists up to n = 8
        assert!(rows[1].discrepancy > 0.01);
        assert!(rows.iter().skip(2).all(|r| r.scaled < 1e-12 * r.n as f64 && r.alias < 1e-13));
    }

    #[test]
    fn stability_identity() {
        let fs = vec![cos1(), "1:0.3;2:0.1,0.4".parse().unwrap()];
        let check = stability_property_check(&fs, 1.3, 0.7, 1.9).unwrap();
        assert!(check.passed, "{}", check.max_error);
        assert!(stability_property_check(&fs, 1.3, 0.0, 1.0).is_err());
    }

    #[test]
    fn identical_laws_give_zero_remainder() {
        let kernel = kernel_kn(&TorusGrid::new(1, 8).unwrap(), &cos1(), 1.5).unwrap();
        let law = HeavyTailLaw::pareto(1.5, 1.0).unwrap();
        let probe = coupling_probe(&kernel, &law, &law, 50, &[0.1], 3).unwrap();
        assert!(probe.remainders.iter().all(|r| *r == 0.0));
        assert_eq!(probe.exceed[0].1, 0.0);
    }
}
