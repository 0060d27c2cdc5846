use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sandpile_lab::{
    selftest_with, Command, ExperimentConfig, ExperimentReport, Format, LabError, LawKind, LawSpec,
    ScheduleKind, Tolerances,
};

/// Divisible sandpile laboratory: heavy-tailed toppling, Green's functions
/// and scaling-limit probes.
#[derive(Parser, Debug)]
#[command(name = "sandpile", version)]
struct Cli {
    /// Master seed (required unless it comes from --config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; stdout when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// TOML (or .json) experiment config instead of a subcommand
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved config as TOML and exit
    #[arg(long, global = true)]
    emit_config: bool,
    #[command(subcommand)]
    command: Option<Cmd>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LawArg {
    Sas,
    Pareto,
    Gaussian,
    Point,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScheduleArg {
    Synchronous,
    Checkerboard,
    Psor,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Draw i.i.d. samples, one per line
    Sample(ProbeArgs),
    /// Empirical characteristic function (theta, re, im, stderr)
    Cfprobe(ProbeArgs),
    /// Characteristic functions of normalized sums k^{-1/α} Σ X_j
    Normsum(ProbeArgs),
    /// Torus or killed Green's function as a site-field dump
    Green(GreenArgs),
    /// ν_{m,α} = (Σ_y g_m(o,y)^α)^{1/α} over box radii
    Nu(ProbeArgs),
    /// Topple one configuration to stability
    Stabilize(ProbeArgs),
    /// Origin odometer over nested boxes sharing one field
    Nested(ProbeArgs),
    /// Plateau/growth classification over replicas
    Dichotomy(ProbeArgs),
    /// Truncations of the Green-weighted noise series
    Veseries(ProbeArgs),
    /// Tail probabilities of truncated coefficient series
    Tailbound(ProbeArgs),
    /// Scaling-limit probes
    #[command(subcommand)]
    Scaling(ScalingCmd),
    /// Desk-scale invariant suite
    Selftest {
        /// Override a tolerance, e.g. `--set parseval=0.01`
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Run a config file (same as the top-level --config)
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum ScalingCmd {
    /// Σ|kₙ|^α against the limit functional (n, knsum, limit, gap)
    Sweep(ProbeArgs),
    /// Monte Carlo CF of the pairing against the finite-n stable CF
    Mccf(ProbeArgs),
    /// Quantile coupling of the law with its stable partner
    Couple(ProbeArgs),
    /// n^{d/α} sup|kₙ|
    Sup(ProbeArgs),
    /// Riemann-sum Fourier coefficients against the exact ones
    Fourier(ProbeArgs),
    /// Functional form of α-stability of the limit
    Stability(ProbeArgs),
}

#[derive(Args, Debug)]
struct GreenArgs {
    /// Torus row: side, dimension, source site (comma separated)
    #[arg(long, num_args = 3, value_names = ["N", "D", "X"], conflicts_with = "box_row")]
    torus: Option<Vec<String>>,
    /// Killed row from the origin: radius, dimension
    #[arg(long = "box", id = "box_row", num_args = 2, value_names = ["M", "D"])]
    box_row: Option<Vec<usize>>,
}

#[derive(Args, Debug, Default)]
struct ProbeArgs {
    #[arg(long)]
    d: Option<usize>,
    /// Torus side
    #[arg(long)]
    n: Option<usize>,
    /// Box radii
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    law: Option<LawArg>,
    /// Law index; the Green/kernel exponent when no --law is given
    #[arg(long)]
    alpha: Option<f64>,
    /// Law scale (standard deviation for gaussian)
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    mean: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    /// Kernel exponent when it differs from the law's
    #[arg(long)]
    kernel_alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    thetas: Option<Vec<f64>>,
    /// Grid sizes, or k values for normsum
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Test function literal, e.g. "1:0.5" or "1,0:0.5;0,1:0.25"
    #[arg(long)]
    modes: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<i64>>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    #[arg(long)]
    omega: Option<f64>,
    /// Rescale the torus configuration to total mass n^d
    #[arg(long)]
    conserve: bool,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    ms: Option<Vec<f64>>,
    #[arg(long)]
    delta: Option<f64>,
    /// "power:<p>" or "green"
    #[arg(long)]
    coefficients: Option<String>,
    /// Scalings a,b for the stability check
    #[arg(long, value_delimiter = ',', num_args = 2)]
    ab: Option<Vec<f64>>,
}

impl ProbeArgs {
    fn apply(self, c: &mut ExperimentConfig) {
        if let Some(d) = self.d {
            c.d = d;
        }
        c.n = self.n.or(c.n.take());
        c.radii = self.radii.or(c.radii.take());
        if let Some(v) = self.mean {
            c.mean = v;
        }
        if let Some(v) = self.tol {
            c.tol = v;
        }
        if let Some(v) = self.reps {
            c.reps = v;
        }
        match self.law {
            Some(kind) => {
                let kind = match kind {
                    LawArg::Sas => LawKind::Sas,
                    LawArg::Pareto => LawKind::Pareto,
                    LawArg::Gaussian => LawKind::Gaussian,
                    LawArg::Point => LawKind::Point,
                };
                c.law = LawSpec { kind, alpha: self.alpha, scale: self.scale };
            }
            None => c.probe.alpha = self.alpha,
        }
        let p = &mut c.probe;
        if self.kernel_alpha.is_some() {
            p.alpha = self.kernel_alpha;
        }
        p.count = self.count;
        p.thetas = self.thetas;
        p.ns = self.ns;
        p.modes = self.modes;
        p.x = self.x;
        p.schedule = self.schedule.map(|s| match s {
            ScheduleArg::Synchronous => ScheduleKind::Synchronous,
            ScheduleArg::Checkerboard => ScheduleKind::Checkerboard,
            ScheduleArg::Psor => ScheduleKind::Psor,
        });
        p.omega = self.omega;
        p.conserve = self.conserve.then_some(true);
        p.max_rounds = self.max_rounds;
        p.eps = self.eps;
        p.thresholds = self.thresholds;
        p.ms = self.ms;
        p.delta = self.delta;
        p.coefficients = self.coefficients;
        p.ab = self.ab.map(|v| [v[0], v[1]]);
    }
}

enum Plan {
    Run(ExperimentConfig),
    Selftest(u64, Tolerances),
}

fn usage(path: &str, reason: &str) -> LabError {
    LabError::Config { path: path.into(), reason: reason.into() }
}

fn plan(cli: Cli) -> Result<(Plan, Option<PathBuf>, Option<Format>, bool), LabError> {
    let format = cli.format.map(|f| match f {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    });
    let seed = || cli.seed.ok_or_else(|| usage("seed", "required (pass --seed)"));
    let from_file = |path: &PathBuf| -> Result<ExperimentConfig, LabError> {
        let mut c = ExperimentConfig::load(path)?;
        if let Some(s) = cli.seed {
            c.seed = s;
        }
        Ok(c)
    };
    let probe = |command: Command, args: ProbeArgs| -> Result<ExperimentConfig, LabError> {
        let mut c = ExperimentConfig::new(command, seed()?);
        args.apply(&mut c);
        Ok(c)
    };
    let config = match cli.command {
        None => match &cli.config {
            Some(path) => from_file(path)?,
            None => return Err(usage("command", "give a subcommand or --config FILE")),
        },
        Some(_) if cli.config.is_some() => {
            return Err(usage("config", "--config replaces the subcommand; give one or the other"))
        }
        Some(Cmd::Run { config }) => from_file(&config)?,
        Some(Cmd::Selftest { set }) => {
            let mut tol = Tolerances::default();
            for s in &set {
                tol.set(s)?;
            }
            // the suite has a fixed default seed so a bare `selftest` works
            let plan = Plan::Selftest(cli.seed.unwrap_or(1), tol);
            return Ok((plan, cli.out, format, cli.emit_config));
        }
        Some(Cmd::Green(g)) => match (g.torus, g.box_row) {
            (Some(t), None) => {
                let n = t[0].parse().map_err(|_| usage("n", "torus side must be an integer"))?;
                let d = t[1].parse().map_err(|_| usage("d", "dimension must be an integer"))?;
                let x = t[2]
                    .split(',')
                    .map(|s| s.trim().parse::<i64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| usage("probe.x", "source must be comma-separated integers"))?;
                let mut c = ExperimentConfig::new(Command::GreenTorus, cli.seed.unwrap_or(0));
                c.d = d;
                c.n = Some(n);
                c.probe.x = Some(x);
                c
            }
            (None, Some(b)) => {
                let mut c = ExperimentConfig::new(Command::GreenBox, cli.seed.unwrap_or(0));
                c.d = b[1];
                c.radii = Some(vec![b[0]]);
                c
            }
            _ => return Err(usage("green", "pass --torus N D X or --box M D")),
        },
        Some(Cmd::Sample(a)) => probe(Command::Sample, a)?,
        Some(Cmd::Cfprobe(a)) => probe(Command::Cfprobe, a)?,
        Some(Cmd::Normsum(a)) => probe(Command::Normsum, a)?,
        Some(Cmd::Nu(a)) => probe(Command::Nu, a)?,
        Some(Cmd::Stabilize(a)) => probe(Command::Stabilize, a)?,
        Some(Cmd::Nested(a)) => probe(Command::Nested, a)?,
        Some(Cmd::Dichotomy(a)) => probe(Command::Dichotomy, a)?,
        Some(Cmd::Veseries(a)) => probe(Command::Veseries, a)?,
        Some(Cmd::Tailbound(a)) => probe(Command::Tailbound, a)?,
        Some(Cmd::Scaling(s)) => match s {
            ScalingCmd::Sweep(a) => probe(Command::ScalingSweep, a)?,
            ScalingCmd::Mccf(a) => probe(Command::ScalingMccf, a)?,
            ScalingCmd::Couple(a) => probe(Command::ScalingCouple, a)?,
            ScalingCmd::Sup(a) => probe(Command::ScalingSup, a)?,
            ScalingCmd::Fourier(a) => probe(Command::ScalingFourier, a)?,
            ScalingCmd::Stability(a) => probe(Command::ScalingStability, a)?,
        },
    };
    Ok((Plan::Run(config), cli.out, format, cli.emit_config))
}

fn emit(report: &ExperimentReport, out: Option<&PathBuf>, format: Format) -> Result<(), LabError> {
    if let Some(dir) = out {
        return report.write_dir(dir, format);
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match report.fields.first() {
        // grid snapshots go to stdout as the raw dump format
        Some(field) if format == Format::Csv && report.manifest.config.command.name().starts_with("green") => {
            lock.write_all(&field.to_bytes())?
        }
        _ => report.write_stream(&mut lock, format)?,
    }
    lock.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = plan(cli).and_then(|(plan, out, format, emit_config)| {
        let report = match plan {
            Plan::Selftest(seed, tol) => selftest_with(seed, &tol)?,
            Plan::Run(mut config) => {
                if let Some(f) = format {
                    config.format = f;
                }
                if out.is_some() {
                    config.out = out.clone();
                }
                if emit_config {
                    print!("{}", config.resolve()?.to_toml()?);
                    return Ok(None);
                }
                sandpile_lab::run(config)?
            }
        };
        let format = format.unwrap_or(report.manifest.config.format);
        let out = out.or_else(|| report.manifest.config.out.clone());
        emit(&report, out.as_ref(), format)?;
        Ok(Some(report))
    });
    match outcome {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(report)) => {
            for c in report.failures() {
                eprintln!("check failed: {} ({})", c.name, c.detail);
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
