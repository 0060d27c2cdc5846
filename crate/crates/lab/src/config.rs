//! Experiment configuration: what the CLI flags and `--config` files parse into.
//!
//! A config is *resolved* before it runs: every probe-specific default is
//! filled in, so the manifest echoes exactly what was executed and can be
//! fed back through `--config` to reproduce the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sandpile_core::scaling::TestFunction;
use sandpile_core::sandpile::Schedule;
use sandpile_core::stable::HeavyTailLaw;

use crate::LabError;

/// Rough per-run memory ceiling used to reject oversized domains up front.
pub const MEMORY_BUDGET_BYTES: u64 = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Sample,
    Cfprobe,
    Normsum,
    GreenTorus,
    GreenBox,
    Nu,
    Stabilize,
    Nested,
    Dichotomy,
    Veseries,
    Tailbound,
    ScalingSweep,
    ScalingMccf,
    ScalingCouple,
    ScalingSup,
    ScalingFourier,
    ScalingStability,
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Cfprobe => "cfprobe",
            Command::Normsum => "normsum",
            Command::GreenTorus => "green-torus",
            Command::GreenBox => "green-box",
            Command::Nu => "nu",
            Command::Stabilize => "stabilize",
            Command::Nested => "nested",
            Command::Dichotomy => "dichotomy",
            Command::Veseries => "veseries",
            Command::Tailbound => "tailbound",
            Command::ScalingSweep => "scaling-sweep",
            Command::ScalingMccf => "scaling-mccf",
            Command::ScalingCouple => "scaling-couple",
            Command::ScalingSup => "scaling-sup",
            Command::ScalingFourier => "scaling-fourier",
            Command::ScalingStability => "scaling-stability",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawKind {
    /// Symmetric α-stable.
    Sas,
    /// Symmetric Pareto.
    Pareto,
    /// Centered normal; `scale` is the standard deviation.
    Gaussian,
    /// No noise at all.
    Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub kind: LawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl Default for LawSpec {
    fn default() -> Self {
        LawSpec { kind: LawKind::Point, alpha: None, scale: None }
    }
}

impl LawSpec {
    pub fn to_law(&self) -> Result<HeavyTailLaw, LabError> {
        let alpha = || self.alpha.ok_or_else(|| invalid("law.alpha", "required for this law"));
        let scale = self.scale.unwrap_or(1.0);
        let law = match self.kind {
            LawKind::Sas => HeavyTailLaw::stable(alpha()?, scale),
            LawKind::Pareto => HeavyTailLaw::pareto(alpha()?, scale),
            LawKind::Gaussian => HeavyTailLaw::gaussian(scale),
            LawKind::Point => Ok(HeavyTailLaw::Zero),
        };
        law.map_err(|e| invalid("law", e.to_string()))
    }

    fn resolve(&mut self) {
        if self.kind != LawKind::Point && self.scale.is_none() {
            self.scale = Some(1.0);
        }
        if self.kind == LawKind::Gaussian && self.alpha.is_none() {
            self.alpha = Some(2.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Synchronous,
    Checkerboard,
    Psor,
}

/// Probe-specific knobs. Unused ones stay `None` after resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeParams {
    /// Kernel or Green exponent when it differs from the law's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Test-function literal, e.g. `"1:0.5"` or `"1,0:0.5;0,2:0.25,0.1"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ns: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Source site of a torus Green row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conserve: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ms: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// `"power:p"` for `c_j = j^{-p}` or `"green"` for lattice Green values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<String>,
    /// Scalings `a, b` of the stability check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ab: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    /// Master seed. Mandatory: nothing is ever drawn from ambient entropy.
    pub seed: u64,
    #[serde(default = "default_d")]
    pub d: usize,
    /// Torus side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Box radii.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<usize>>,
    #[serde(default = "default_mean")]
    pub mean: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub law: LawSpec,
    #[serde(default)]
    pub probe: ProbeParams,
}

fn default_d() -> usize {
    1
}
fn default_mean() -> f64 {
    1.0
}
fn default_tol() -> f64 {
    1e-10
}
fn default_reps() -> usize {
    1000
}

pub(crate) fn invalid(path: &str, reason: impl Into<String>) -> LabError {
    LabError::Config { path: path.to_string(), reason: reason.into() }
}

impl ExperimentConfig {
    pub fn new(command: Command, seed: u64) -> Self {
        ExperimentConfig {
            command,
            seed,
            d: default_d(),
            n: None,
            radii: None,
            mean: default_mean(),
            tol: default_tol(),
            reps: default_reps(),
            out: None,
            format: Format::Csv,
            law: LawSpec::default(),
            probe: ProbeParams::default(),
        }
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Io { path: path.to_path_buf(), source: e })?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| invalid(&toml_path(&e), e.message().to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, LabError> {
        serde_json::from_str(text).map_err(|e| invalid("<json>", e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, LabError> {
        toml::to_string(self).map_err(|e| invalid("<config>", e.to_string()))
    }

    pub fn to_json(&self) -> Result<String, LabError> {
        serde_json::to_string_pretty(self).map_err(|e| invalid("<config>", e.to_string()))
    }

    pub fn law(&self) -> Result<HeavyTailLaw, LabError> {
        self.law.to_law()
    }

    pub fn test_function(&self) -> Result<TestFunction, LabError> {
        let text = self.probe.modes.as_deref().ok_or_else(|| invalid("probe.modes", "missing"))?;
        let f: TestFunction = text.parse().map_err(|e: sandpile_core::Error| invalid("probe.modes", e.to_string()))?;
        if f.dim() != self.d {
            return Err(invalid("probe.modes", format!("modes have dimension {}, d = {}", f.dim(), self.d)));
        }
        Ok(f)
    }

    pub fn schedule(&self) -> Schedule {
        match self.probe.schedule.unwrap_or(ScheduleKind::Synchronous) {
            ScheduleKind::Synchronous => Schedule::Synchronous,
            ScheduleKind::Checkerboard => Schedule::Checkerboard,
            ScheduleKind::Psor => Schedule::OverRelaxed { omega: self.probe.omega },
        }
    }

    /// Kernel exponent: `probe.alpha`, else the law's.
    pub fn kernel_alpha(&self) -> Result<f64, LabError> {
        self.probe
            .alpha
            .or(self.law.alpha)
            .ok_or_else(|| invalid("probe.alpha", "needed (no law alpha to fall back on)"))
    }

    /// Fills in probe defaults and validates ranges and the memory estimate.
    pub fn resolve(mut self) -> Result<Self, LabError> {
        use Command::*;
        let p = &mut self.probe;
        self.law.resolve();
        match self.command {
            Sample => {
                p.count.get_or_insert(1000);
            }
            Cfprobe => {
                p.count.get_or_insert(10_000);
                p.thetas.get_or_insert_with(|| vec![0.25, 0.5, 1.0, 2.0]);
            }
            Normsum => {
                p.ns.get_or_insert_with(|| vec![1, 10, 100]);
                p.thetas.get_or_insert_with(|| vec![0.25, 0.5, 1.0, 2.0]);
            }
            GreenTorus => {
                self.n.get_or_insert(8);
                let d = self.d;
                p.x.get_or_insert_with(|| vec![0; d]);
            }
            GreenBox | Nu => {
                self.radii.get_or_insert_with(|| vec![4]);
                if self.command == Nu {
                    p.alpha.get_or_insert(self.law.alpha.unwrap_or(1.5));
                }
            }
            Stabilize => {
                if self.n.is_none() && self.radii.is_none() {
                    self.n = Some(8);
                }
                p.schedule.get_or_insert(ScheduleKind::Synchronous);
                p.conserve.get_or_insert(false);
                p.max_rounds.get_or_insert(1_000_000);
            }
            Nested | Dichotomy => {
                self.radii.get_or_insert_with(|| vec![4, 8, 16]);
                p.max_rounds.get_or_insert(200_000);
            }
            Veseries => {
                p.count.get_or_insert(1000);
                p.thresholds.get_or_insert_with(|| vec![1.0, 2.0, 5.0]);
            }
            Tailbound => {
                p.count.get_or_insert(2000);
                p.delta.get_or_insert(0.8 * self.law.alpha.unwrap_or(1.5));
                p.ms.get_or_insert_with(|| vec![1.0, 2.0, 4.0, 8.0]);
                p.coefficients.get_or_insert_with(|| "power:2".into());
            }
            ScalingSweep | ScalingSup | ScalingFourier | ScalingStability => {
                p.modes.get_or_insert_with(|| if self.d == 1 { "1:0.5".into() } else { String::new() });
                p.alpha.get_or_insert(self.law.alpha.unwrap_or(1.5));
                p.ns.get_or_insert_with(|| vec![8, 16, 32, 64]);
                if self.command == ScalingStability {
                    p.ab.get_or_insert([1.0, 2.0]);
                }
            }
            ScalingMccf | ScalingCouple => {
                p.modes.get_or_insert_with(|| if self.d == 1 { "1:0.5".into() } else { String::new() });
                p.ns.get_or_insert_with(|| vec![16, 32]);
                p.thetas.get_or_insert_with(|| vec![1.0]);
                if self.command == ScalingCouple {
                    p.eps.get_or_insert_with(|| vec![0.05, 0.1, 0.2]);
                }
            }
            Selftest => {}
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        use Command::*;
        if self.d == 0 {
            return Err(invalid("d", "must be positive"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid("tol", "must be positive"));
        }
        if !self.mean.is_finite() {
            return Err(invalid("mean", "must be finite"));
        }
        if self.reps == 0 {
            return Err(invalid("reps", "must be positive"));
        }
        if let Some(n) = self.n {
            if n < 2 {
                return Err(invalid("n", "torus side must be at least 2"));
            }
        }
        if let Some(radii) = &self.radii {
            if radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid("radii", "must be a non-empty increasing list"));
            }
        }
        if self.command != Selftest && self.law.kind != LawKind::Point {
            self.law()?;
        }
        if let Some(a) = self.probe.alpha {
            if !(a > 0.0 && a <= 2.0) {
                return Err(invalid("probe.alpha", format!("{a} is outside (0, 2]")));
            }
        }
        if let Some(ns) = &self.probe.ns {
            if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
                return Err(invalid("probe.ns", "must be a non-empty increasing list of positive sizes"));
            }
        }
        match self.command {
            Sample | Cfprobe | Normsum | Tailbound | Veseries | ScalingMccf | ScalingCouple
                if self.law.kind == LawKind::Point =>
            {
                return Err(invalid("law.kind", "this probe needs a random law"));
            }
            Tailbound if self.law.kind != LawKind::Pareto => {
                return Err(invalid("law.kind", "the tail-bound check supports the Pareto law only"));
            }
            Stabilize if self.n.is_none() && self.radii.as_ref().is_some_and(|r| r.len() != 1) => {
                return Err(invalid("radii", "stabilize takes a torus side `n` or a single box radius"));
            }
            GreenTorus => {
                if self.probe.x.as_ref().is_some_and(|x| x.len() != self.d) {
                    return Err(invalid("probe.x", format!("needs {} coordinates", self.d)));
                }
            }
            c if c.name().starts_with("scaling") => {
                self.test_function()?;
            }
            _ => {}
        }
        let bytes = self.memory_estimate();
        if bytes > MEMORY_BUDGET_BYTES {
            return Err(invalid(
                if self.n.is_some() { "n" } else { "radii" },
                format!("needs about {} MiB, budget is {} MiB", bytes >> 20, MEMORY_BUDGET_BYTES >> 20),
            ));
        }
        Ok(())
    }

    /// Peak working-set estimate in bytes for the largest domain.
    pub fn memory_estimate(&self) -> u64 {
        let d = self.d as u32;
        let pow = |side: u64| side.checked_pow(d).unwrap_or(u64::MAX);
        let mut sites = 0u64;
        if let Some(n) = self.n {
            sites = sites.max(pow(n as u64));
        }
        if let Some(&r) = self.radii.as_ref().and_then(|r| r.last()) {
            // ν only solves on one reflected orthant
            let side = if self.command == Command::Nu { r + 1 } else { 2 * r + 1 };
            sites = sites.max(pow(side as u64));
        }
        if let Some(n) = self.probe.ns.as_ref().and_then(|ns| ns.last()) {
            if self.command.name().starts_with("scaling") {
                sites = sites.max(pow(*n as u64));
            }
        }
        // a handful of real and complex work arrays
        sites.saturating_mul(96)
    }
}

fn toml_path(e: &toml::de::Error) -> String {
    // toml reports spans rather than key paths; the message names the key
    e.span().map_or_else(|| "<toml>".into(), |s| format!("<toml bytes {}..{}>", s.start, s.end))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(Command::ScalingSweep, 7);
        c.law = LawSpec { kind: LawKind::Sas, alpha: Some(1.5), scale: Some(0.75) };
        c.probe.modes = Some("1:0.5".into());
        c.probe.ns = Some(vec![8, 16]);
        c.out = Some("runs/a".into());
        c.resolve().unwrap()
    }

    #[test]
    fn toml_and_json_round_trip() {
        let c = sample_config();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::from_toml("command = \"sample\"\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn errors_name_the_field() {
        let mut c = ExperimentConfig::new(Command::Cfprobe, 1);
        c.law = LawSpec { kind: LawKind::Sas, alpha: Some(2.5), scale: None };
        assert!(c.resolve().unwrap_err().to_string().contains("`law`"));

        let mut c = ExperimentConfig::new(Command::Stabilize, 1);
        c.d = 3;
        c.n = Some(2000);
        let err = c.resolve().unwrap_err();
        assert!(err.to_string().contains("`n`") && err.to_string().contains("MiB"), "{err}");

        let mut c = ExperimentConfig::new(Command::Tailbound, 1);
        c.law = LawSpec { kind: LawKind::Sas, alpha: Some(1.5), scale: None };
        assert!(c.resolve().unwrap_err().to_string().contains("law.kind"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("command = \"sample\"\nseed = 1\nsede = 2\n").unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
    }
}
