//! Desk-scale invariant suite: a green `selftest` means the numerics agree
//! with their independent oracles.

use sandpile_core::green::spectral_identity_residual;
use sandpile_core::rng::{stream_key, Stream};
use sandpile_core::sandpile::{
    init_configuration, odometer_exact, topple_to_stability, Schedule, SiteDomain, ToppleOptions,
};
use sandpile_core::scaling::{exact_cf_finite_n, kernel_kn, limit_functional, mc_cf, TestFunction, DEFAULT_ORDER};
use sandpile_core::stable::{HeavyTailLaw, Quantiles};
use sandpile_core::torus::TorusGrid;

use crate::config::{invalid, ExperimentConfig};
use crate::report::{num, ExperimentReport, Table};
use crate::LabError;

/// Pass thresholds of the suite. Tightening one past what the numerics
/// deliver must produce a failure naming that check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `max |λ_a ĝ_x(a) + 2d n^{-d} χ_{-a}(x)|`.
    pub identity: f64,
    /// Simulated vs spectral odometer, sup norm.
    pub odometer: f64,
    /// Relative gap of `Σ|kₙ|²` to `1/2` at `n = 64`.
    pub parseval: f64,
    /// `|L₂(cos 2πx) - 1/2|`.
    pub limit: f64,
    /// Monte Carlo CF error in units of `1/√M`.
    pub mc_sigmas: f64,
    /// `|F(F^←(p)) - p|`.
    pub quantile: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { identity: 1e-12, odometer: 1e-6, parseval: 0.02, limit: 1e-8, mc_sigmas: 3.0, quantile: 1e-6 }
    }
}

impl Tolerances {
    /// Applies a `name=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), LabError> {
        let (name, value) = assignment
            .split_once('=')
            .ok_or_else(|| invalid("tolerance", format!("`{assignment}` is not name=value")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| invalid("tolerance", format!("`{value}` is not a number")))?;
        let slot = match name {
            "identity" => &mut self.identity,
            "odometer" => &mut self.odometer,
            "parseval" => &mut self.parseval,
            "limit" => &mut self.limit,
            "mc_sigmas" => &mut self.mc_sigmas,
            "quantile" => &mut self.quantile,
            other => return Err(invalid("tolerance", format!("unknown tolerance `{other}`"))),
        };
        *slot = value;
        Ok(())
    }
}

const MC_REPS: usize = 100_000;

fn record(r: &mut ExperimentReport, t: &mut Table, name: &str, value: f64, tol: f64) {
    let passed = value < tol;
    t.push(vec![name.into(), num(value), num(tol), passed.to_string()]);
    r.check(name, passed, format!("{value:e} (tolerance {tol:e})"));
}

pub(crate) fn run_checks(c: &ExperimentConfig, r: &mut ExperimentReport, tol: &Tolerances) -> Result<(), LabError> {
    let mut t = Table::new("selftest", &["check", "value", "tolerance", "passed"]);

    let mut identity = 0.0f64;
    for d in 1..=2 {
        for n in [4, 8, 16] {
            identity = identity.max(spectral_identity_residual(&TorusGrid::new(d, n)?)?);
        }
    }
    record(r, &mut t, "spectral-identity", identity, tol.identity);

    let grid = TorusGrid::new(2, 16)?;
    let law = HeavyTailLaw::gaussian(1.0)?;
    let mut odometer = 0.0f64;
    for i in 0..2 {
        let seed = stream_key(c.seed, "selftest-odometer", i);
        let config = init_configuration(SiteDomain::Torus(grid), &law, 1.0, true, seed)?;
        let exact = odometer_exact(&grid, &config)?;
        for schedule in [Schedule::Synchronous, Schedule::Checkerboard] {
            let done = topple_to_stability(&config, &ToppleOptions { schedule, ..Default::default() })?;
            if !done.stabilized {
                return Err(LabError::Format(format!("selftest configuration {i} did not stabilize")));
            }
            let err = done
                .odometer
                .normalized()
                .iter()
                .zip(&exact.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            odometer = odometer.max(err);
        }
    }
    record(r, &mut t, "odometer-cross-check", odometer, tol.odometer);

    let cosine: TestFunction = "1:0.5".parse()?;
    let kernel = kernel_kn(&TorusGrid::new(1, 64)?, &cosine, 2.0)?;
    record(r, &mut t, "parseval-kernel", (kernel.power_sum - 0.5).abs() / 0.5, tol.parseval);
    let limit = limit_functional(&cosine, 2.0, DEFAULT_ORDER)?;
    record(r, &mut t, "parseval-limit", (limit.value - 0.5).abs(), tol.limit);

    let stable = HeavyTailLaw::stable(1.5, 1.0)?;
    let kernel = kernel_kn(&TorusGrid::new(1, 32)?, &cosine, 1.5)?;
    let mc = mc_cf(&kernel, &stable, MC_REPS, 1.0, stream_key(c.seed, "selftest-mc", 0))?;
    let exact = exact_cf_finite_n(&kernel, 1.0, 1.0);
    let sigmas = (mc.estimate.re - exact).abs().max(mc.estimate.im.abs()) * (MC_REPS as f64).sqrt();
    record(r, &mut t, "mc-cf", sigmas, tol.mc_sigmas);

    let mut quantile = 0.0f64;
    let mut empirical = 0.0f64;
    for law in [stable, HeavyTailLaw::pareto(1.5, 1.0)?, HeavyTailLaw::gaussian(1.0)?] {
        let q = Quantiles::new(&law)?;
        let mut rng = Stream::new(c.seed, "selftest-quantile", 0);
        let xs = law.sample_n(&mut rng, 20_000);
        for p in [0.01, 0.1, 0.25, 0.4, 0.6, 0.75, 0.9, 0.99] {
            let x = q.quantile(p)?;
            quantile = quantile.max((law.cdf(x) - p).abs());
            // sampler and quantile function must describe the same law
            let below = xs.iter().filter(|&&v| v <= x).count() as f64 / xs.len() as f64;
            let sd = (p * (1.0 - p) / xs.len() as f64).sqrt();
            empirical = empirical.max((below - p).abs() / sd);
        }
    }
    record(r, &mut t, "quantile-consistency", quantile, tol.quantile);
    record(r, &mut t, "sampler-vs-quantile", empirical, 5.0);

    r.tables.push(t);
    Ok(())
}

/// Runs the suite with explicit tolerances.
pub fn selftest_with(seed: u64, tol: &Tolerances) -> Result<ExperimentReport, LabError> {
    let config = ExperimentConfig::new(crate::config::Command::Selftest, seed);
    let start = std::time::Instant::now();
    let mut report = ExperimentReport::new(config.clone());
    run_checks(&config, &mut report, tol)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}
