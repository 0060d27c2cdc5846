//! One function per command: run the core operation, tabulate, check.

use sandpile_core::green::{
    killed_green, killed_green_origin, torus_green_row, BoxDomain, CgReport, CG_TOL,
};
use sandpile_core::rng::Stream;
use sandpile_core::sandpile::{
    dichotomy_experiment, green_coefficients, init_configuration, last_ratio, nested_stabilize,
    odometer_exact, schedule_name, tail_bound_check, topple_to_stability, ve_series_probe,
    NestedOptions, SiteDomain, ToppleOptions,
};
use sandpile_core::scaling::{
    convergence_sweep, coupling_probe, exact_cf_finite_n, fourier_discrepancy, kernel_kn,
    kn_sup_check, mc_cf, stability_property_check, stable_partner, TestFunction,
};
use sandpile_core::stable::{empirical_cf, normalized_sum_probe, HeavyTailLaw};
use sandpile_core::torus::TorusGrid;

use crate::config::{invalid, Command, ExperimentConfig};
use crate::report::{num, ExperimentReport, FieldDump, Table};
use crate::LabError;

type Out = Result<(), LabError>;

pub(crate) fn dispatch(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    match c.command {
        Command::Sample => sample(c, r),
        Command::Cfprobe => cfprobe(c, r),
        Command::Normsum => normsum(c, r),
        Command::GreenTorus => green_torus(c, r),
        Command::GreenBox => green_box(c, r),
        Command::Nu => nu(c, r),
        Command::Stabilize => stabilize(c, r),
        Command::Nested => nested(c, r),
        Command::Dichotomy => dichotomy(c, r),
        Command::Veseries => veseries(c, r),
        Command::Tailbound => tailbound(c, r),
        Command::ScalingSweep => scaling_sweep(c, r),
        Command::ScalingMccf => scaling_mccf(c, r),
        Command::ScalingCouple => scaling_couple(c, r),
        Command::ScalingSup => scaling_sup(c, r),
        Command::ScalingFourier => scaling_fourier(c, r),
        Command::ScalingStability => scaling_stability(c, r),
        Command::Selftest => crate::selftest::run_checks(c, r, &crate::selftest::Tolerances::default()),
    }
}

fn count(c: &ExperimentConfig) -> usize {
    c.probe.count.unwrap_or(1000)
}

fn list<T: Clone>(v: &Option<Vec<T>>) -> Vec<T> {
    v.clone().unwrap_or_default()
}

fn sample(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let law = c.law()?;
    let mut rng = Stream::new(c.seed, "sample", 0);
    let mut t = Table::new("samples", &["x"]);
    for x in law.sample_n(&mut rng, count(c)) {
        t.push(vec![num(x)]);
    }
    r.set("law", law.name());
    r.tables.push(t);
    Ok(())
}

fn cfprobe(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let law = c.law()?;
    let mut rng = Stream::new(c.seed, "cfprobe", 0);
    let xs = law.sample_n(&mut rng, count(c));
    let thetas = list(&c.probe.thetas);
    let mut t = Table::new("cf", &["theta", "re", "im", "stderr"]);
    let mut worst_z = 0.0f64;
    for p in empirical_cf(&xs, &thetas)? {
        t.push(vec![num(p.theta), num(p.value.re), num(p.value.im), num(p.stderr)]);
        if let Some(exact) = law.cf(p.theta) {
            worst_z = worst_z.max((p.value - exact).norm() / p.stderr);
        }
    }
    r.tables.push(t);
    if law.cf(1.0).is_some() {
        r.set_f64("max_z", worst_z);
        r.check("cf-vs-exact", worst_z < 5.0, format!("largest |ECF - CF| / stderr = {worst_z:.3}"));
    }
    Ok(())
}

fn normsum(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let law = c.law()?;
    let ks = list(&c.probe.ns);
    let probe = normalized_sum_probe(&law, &ks, c.reps, &list(&c.probe.thetas), c.seed)?;
    let mut cf = Table::new("cf", &["k", "theta", "re", "im", "stderr"]);
    let mut fit = Table::new("scale", &["k", "fitted_scale"]);
    for row in &probe.rows {
        for p in &row.cf {
            cf.push(vec![row.k.to_string(), num(p.theta), num(p.value.re), num(p.value.im), num(p.stderr)]);
        }
        fit.push(vec![row.k.to_string(), num(row.fitted_scale)]);
    }
    if let Some(s) = law.attraction_scale() {
        r.set_f64("attraction_scale", s);
    }
    r.set("warnings", probe.warnings.clone());
    r.tables.extend([cf, fit]);
    Ok(())
}

fn site_of(c: &ExperimentConfig) -> Vec<i64> {
    c.probe.x.clone().unwrap_or_else(|| vec![0; c.d])
}

fn green_torus(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let n = c.n.ok_or_else(|| invalid("n", "missing"))?;
    let grid = TorusGrid::new(c.d, n)?;
    let x = site_of(c);
    let row = torus_green_row(&grid, &x)?;
    let sum: f64 = row.values.iter().sum();
    let at_x = row.values[grid.index(&x)];
    r.set_f64("sum", sum);
    r.set_f64("value_at_source", at_x);
    r.check("mean-zero", sum.abs() < 1e-9, format!("Σ g = {sum:e}"));
    let mut t = Table::new("green", &["site", "g"]);
    for (i, g) in row.values.iter().enumerate() {
        t.push(vec![i.to_string(), num(*g)]);
    }
    r.tables.push(t);
    r.fields.push(FieldDump::new("green", "torus", c.d, n, row.values));
    Ok(())
}

fn largest_radius(c: &ExperimentConfig) -> Result<usize, LabError> {
    c.radii.as_ref().and_then(|v| v.last().copied()).ok_or_else(|| invalid("radii", "missing"))
}

fn cg_check(r: &mut ExperimentReport, what: &str, report: &CgReport) {
    r.check(
        &format!("{what}-residual"),
        report.relative_residual <= 10.0 * CG_TOL,
        format!("{} iterations, relative residual {:e}", report.iterations, report.relative_residual),
    );
}

fn green_box(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let m = largest_radius(c)?;
    let domain = BoxDomain::new(c.d, m)?;
    let (row, report) = killed_green(&domain, &vec![0; c.d])?;
    cg_check(r, "cg", &report);
    r.set_f64("g_origin", row.values[domain.origin()]);
    r.set("iterations", report.iterations);
    r.fields.push(FieldDump::new("green", "box", c.d, domain.side(), row.values));
    Ok(())
}

fn nu(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let alpha = c.kernel_alpha()?;
    let mut t = Table::new("nu", &["m", "nu", "iterations"]);
    let mut prev: Option<f64> = None;
    let mut monotone = true;
    for &m in c.radii.as_deref().unwrap_or_default() {
        let row = killed_green_origin(&BoxDomain::new(c.d, m)?)?;
        let nu = row.power_sum(alpha).powf(1.0 / alpha);
        cg_check(r, &format!("cg-m{m}"), &row.report);
        monotone &= prev.is_none_or(|p| nu >= p);
        prev = Some(nu);
        t.push(vec![m.to_string(), num(nu), row.report.iterations.to_string()]);
    }
    r.check("monotone-in-m", monotone, "ν grows with the box");
    r.tables.push(t);
    Ok(())
}

fn stabilize(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let law = c.law()?;
    let conserve = c.probe.conserve.unwrap_or(false);
    let (domain, grid, side, label) = match c.n {
        Some(n) => {
            let g = TorusGrid::new(c.d, n)?;
            (SiteDomain::Torus(g), Some(g), n, "torus")
        }
        None => {
            let b = BoxDomain::new(c.d, largest_radius(c)?)?;
            (SiteDomain::Box(b), None, b.side(), "box")
        }
    };
    let config = init_configuration(domain, &law, c.mean, conserve, c.seed)?;
    let opts = ToppleOptions {
        tol: c.tol,
        max_rounds: c.probe.max_rounds.unwrap_or(1_000_000),
        schedule: c.schedule(),
    };
    let done = topple_to_stability(&config, &opts)?;
    let mut trace = Table::new("trace", &["schedule", "rounds", "stabilized", "max_excess", "identity_residual", "mass_drift"]);
    trace.push(vec![
        schedule_name(&opts.schedule),
        done.rounds.to_string(),
        done.stabilized.to_string(),
        num(done.max_excess),
        num(done.identity_residual),
        num(done.mass_drift),
    ]);
    let mut field = Table::new("odometer", &["site", "s0", "u", "s"]);
    for i in 0..config.masses.len() {
        field.push(vec![
            i.to_string(),
            num(config.masses[i]),
            num(done.odometer.values[i]),
            num(done.config.masses[i]),
        ]);
    }
    let classification = if done.stabilized { "stabilized" } else { "not-stabilized" };
    r.set("classification", classification);
    r.set("rounds", done.rounds);
    r.set_f64("max_excess", done.max_excess);
    r.set_f64("identity_residual", done.identity_residual);
    r.set_f64("mass_drift", done.mass_drift);
    r.set_f64("u_max", done.odometer.values.iter().copied().fold(0.0, f64::max));
    r.check("identity", done.identity_residual < 1e-9, format!("s0 + Δu - s residual {:e}", done.identity_residual));
    r.check("mass", done.mass_drift < 1e-9, format!("relative mass drift {:e}", done.mass_drift));
    if let Some(grid) = grid {
        // the exact odometer exists only for conserved configurations
        let total = config.total();
        if (total - grid.len() as f64).abs() <= 1e-9 * grid.len() as f64 && done.stabilized {
            let exact = odometer_exact(&grid, &config)?;
            let err = done
                .odometer
                .normalized()
                .iter()
                .zip(&exact.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let allowed = (1e4 * c.tol).max(1e-6);
            r.set_f64("exact_error", err);
            r.check("exact-odometer", err < allowed, format!("‖(u - min u) - u_exact‖∞ = {err:e}"));
        }
    }
    r.tables.extend([trace, field]);
    r.fields.push(FieldDump::new("odometer", label, c.d, side, done.odometer.values));
    Ok(())
}

fn nested_options(c: &ExperimentConfig) -> NestedOptions {
    NestedOptions { tol: c.tol, max_rounds: c.probe.max_rounds.unwrap_or(200_000) }
}

fn nested(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let radii = list(&c.radii);
    let trace = nested_stabilize(c.d, &c.law()?, c.mean, &radii, &nested_options(c), c.seed)?;
    let mut t = Table::new("trace", &["m", "u_origin", "rounds"]);
    for i in 0..trace.radii.len() {
        t.push(vec![trace.radii[i].to_string(), num(trace.origin_odometer[i]), trace.rounds[i].to_string()]);
    }
    let class = if trace.truncated {
        "inconclusive"
    } else {
        sandpile_core::sandpile::classify(&trace.origin_odometer).as_str()
    };
    r.set("classification", class);
    r.set("truncated", trace.truncated);
    if let Some(ratio) = last_ratio(&trace.origin_odometer) {
        r.set_f64("last_ratio", ratio);
    }
    r.check("monotone", trace.monotone, "u_m(o) is non-decreasing in m");
    r.tables.push(t);
    Ok(())
}

fn dichotomy(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let radii = list(&c.radii);
    let rep = dichotomy_experiment(c.d, &c.law()?, c.mean, &radii, c.reps, &nested_options(c), c.seed)?;
    let mut traces = Table::new("traces", &["replica", "m", "u_origin", "rounds"]);
    let mut classes = Table::new("classes", &["replica", "class", "last_ratio"]);
    let mut monotone = true;
    for o in &rep.replicas {
        for i in 0..o.trace.radii.len() {
            traces.push(vec![
                o.replica.to_string(),
                o.trace.radii[i].to_string(),
                num(o.trace.origin_odometer[i]),
                o.trace.rounds[i].to_string(),
            ]);
        }
        let ratio = last_ratio(&o.trace.origin_odometer).unwrap_or(f64::NAN);
        classes.push(vec![o.replica.to_string(), o.class.as_str().into(), num(ratio)]);
        monotone &= o.trace.monotone;
    }
    r.set_f64("plateau", rep.plateau);
    r.set_f64("growth", rep.growth);
    r.set_f64("inconclusive", rep.inconclusive);
    r.check("monotone", monotone, "every trace is non-decreasing in m");
    r.tables.extend([traces, classes]);
    Ok(())
}

fn veseries(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let probe = ve_series_probe(c.d, &c.law()?, count(c), c.reps, &list(&c.probe.thresholds), c.seed)?;
    let mut q = Table::new("quantiles", &["p", "v_n"]);
    for (p, v) in &probe.quantiles {
        q.push(vec![num(*p), num(*v)]);
    }
    let mut tail = Table::new("left_tail", &["threshold", "fraction"]);
    for (m, f) in &probe.left_tail {
        tail.push(vec![num(*m), num(*f)]);
    }
    r.set_f64("ks_n_vs_2n", probe.ks);
    r.set("terms", probe.terms);
    r.tables.extend([q, tail]);
    Ok(())
}

/// `c_j` from the `probe.coefficients` spec.
pub fn coefficients(spec: &str, d: usize, count: usize) -> Result<Vec<f64>, LabError> {
    if spec == "green" {
        return Ok(green_coefficients(d, count)?);
    }
    let p: f64 = spec
        .strip_prefix("power:")
        .and_then(|p| p.parse().ok())
        .ok_or_else(|| invalid("probe.coefficients", format!("`{spec}` is neither `green` nor `power:<p>`")))?;
    Ok((1..=count).map(|j| (j as f64).powf(-p)).collect())
}

fn tailbound(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let spec = c.probe.coefficients.as_deref().unwrap_or("power:2");
    let cs = coefficients(spec, c.d, count(c))?;
    let delta = c.probe.delta.unwrap_or(0.5);
    let check = tail_bound_check(&cs, &c.law()?, delta, &list(&c.probe.ms), c.reps, c.seed)?;
    let mut t = Table::new("tail", &["M", "n1", "probability", "stderr", "bound"]);
    for row in &check.rows {
        let n1 = row.n1.map_or_else(String::new, |v| v.to_string());
        t.push(vec![num(row.m), n1, num(row.probability), num(row.stderr), num(row.bound)]);
    }
    r.set_f64("x1", check.x1);
    r.set_f64("x2", check.x2);
    r.set("kept", check.kept);
    if let Some(a) = check.fitted_a {
        r.set_f64("fitted_a", a);
    }
    r.tables.push(t);
    Ok(())
}

fn scaling_sweep(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let f = c.test_function()?;
    let alpha = c.kernel_alpha()?;
    let sweep = convergence_sweep(&f, alpha, &list(&c.probe.ns))?;
    let mut t = Table::new("sweep", &["n", "knsum", "limit", "gap"]);
    for row in &sweep.rows {
        t.push(vec![row.n.to_string(), num(row.kn_sum), num(row.limit), num(row.gap)]);
    }
    r.set_f64("limit", sweep.limit.value);
    r.set_f64("limit_relative_error", sweep.limit.relative_error);
    if let Some(rate) = sweep.fitted_rate {
        r.set_f64("fitted_rate", rate);
    }
    r.check(
        "limit-quadrature",
        sweep.limit.relative_error < 1e-8,
        format!("order-doubling relative error {:e}", sweep.limit.relative_error),
    );
    if alpha == 2.0 {
        let parseval = parseval_limit(&f);
        let err = (sweep.limit.value - parseval).abs();
        r.check("parseval", err < 1e-8 * parseval.max(1.0), format!("|L₂ - Σ|f̂|²/|z|⁴| = {err:e}"));
    }
    r.tables.push(t);
    Ok(())
}

/// `Σ_z |f̂(z)|² / |z|⁴`, the value of the limit functional at `α = 2`.
pub fn parseval_limit(f: &TestFunction) -> f64 {
    f.modes()
        .map(|(z, c)| {
            let z2: f64 = z.iter().map(|&k| (k * k) as f64).sum();
            c.norm_sqr() / (z2 * z2)
        })
        .sum()
}

fn scaling_mccf(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let f = c.test_function()?;
    let law = c.law()?;
    let alpha = law.alpha();
    // the finite-n stable prediction uses the law's scale, or the scale of
    // the stable law it is attracted to
    let scale = match &law {
        HeavyTailLaw::SymmetricStable { scale, .. } => *scale,
        other => other.attraction_scale().ok_or_else(|| invalid("law", "no stable attraction scale"))?,
    };
    let stable = matches!(law, HeavyTailLaw::SymmetricStable { .. });
    let mut t = Table::new("mccf", &["n", "theta", "re", "im", "stderr_re", "exact", "diff"]);
    let mut worst: f64 = 0.0;
    for &n in c.probe.ns.as_deref().unwrap_or_default() {
        let kernel = kernel_kn(&TorusGrid::new(c.d, n)?, &f, alpha)?;
        for &theta in c.probe.thetas.as_deref().unwrap_or_default() {
            let mc = mc_cf(&kernel, &law, c.reps, theta, c.seed)?;
            let exact = exact_cf_finite_n(&kernel, scale, theta);
            let diff = (mc.estimate.re - exact).abs().max(mc.estimate.im.abs());
            worst = worst.max(diff);
            t.push(vec![
                n.to_string(),
                num(theta),
                num(mc.estimate.re),
                num(mc.estimate.im),
                num(mc.stderr_re),
                num(exact),
                num(diff),
            ]);
        }
    }
    r.set_f64("max_diff", worst);
    r.set_f64("stable_scale", scale);
    if stable {
        let allowed = 3.0 / (c.reps as f64).sqrt();
        r.check("mc-vs-exact", worst < allowed, format!("max |MC - exact| = {worst:.3e}, allowed {allowed:.3e}"));
    }
    r.tables.push(t);
    Ok(())
}

fn scaling_couple(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let f = c.test_function()?;
    let law = c.law()?;
    let partner = stable_partner(&law)?;
    let mut exceed = Table::new("exceed", &["n", "eps", "probability"]);
    let mut dist = Table::new("distance", &["n", "l1_distance", "clipped"]);
    for &n in c.probe.ns.as_deref().unwrap_or_default() {
        let kernel = kernel_kn(&TorusGrid::new(c.d, n)?, &f, law.alpha())?;
        let probe = coupling_probe(&kernel, &law, &partner, c.reps, c.probe.eps.as_deref().unwrap_or_default(), c.seed)?;
        for (e, p) in &probe.exceed {
            exceed.push(vec![n.to_string(), num(*e), num(*p)]);
        }
        dist.push(vec![n.to_string(), num(probe.l1_distance), probe.clipped.to_string()]);
    }
    r.set("partner", partner.name());
    r.tables.extend([exceed, dist]);
    Ok(())
}

fn scaling_sup(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let check = kn_sup_check(&c.test_function()?, c.kernel_alpha()?, &list(&c.probe.ns))?;
    let mut t = Table::new("sup", &["n", "scaled_sup"]);
    for (n, s) in &check.rows {
        t.push(vec![n.to_string(), num(*s)]);
    }
    r.set_f64("band_ratio", check.band_ratio);
    r.tables.push(t);
    Ok(())
}

fn scaling_fourier(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let rows = fourier_discrepancy(&c.test_function()?, &list(&c.probe.ns))?;
    let mut t = Table::new("fourier", &["n", "discrepancy", "scaled", "alias"]);
    for row in &rows {
        t.push(vec![row.n.to_string(), num(row.discrepancy), num(row.scaled), num(row.alias)]);
    }
    r.set_f64("max_scaled", rows.iter().map(|row| row.scaled).fold(0.0, f64::max));
    r.tables.push(t);
    Ok(())
}

fn scaling_stability(c: &ExperimentConfig, r: &mut ExperimentReport) -> Out {
    let [a, b] = c.probe.ab.unwrap_or([1.0, 2.0]);
    let check = stability_property_check(&[c.test_function()?], c.kernel_alpha()?, a, b)?;
    let mut t = Table::new("stability", &["product", "combined"]);
    for (lhs, rhs) in &check.rows {
        t.push(vec![num(*lhs), num(*rhs)]);
    }
    r.set_f64("max_error", check.max_error);
    r.check("stability", check.passed, format!("max error {:e}", check.max_error));
    r.tables.push(t);
    Ok(())
}
