//! Declarative experiment files (TOML) and the built-in preset registry.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::controller::IncrementSeam;
use crate::harness::{Experiment, KernelSpec, ReferenceSchedule, RmseDenominator, SweepSpec, WarmupMode};
use crate::harness::frequency_grid;
use crate::linalg::{cholesky, Mat};
use crate::plants::{Disturbance, PlantKind, RigidBodyParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}{}: {message}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Parse { line: usize, field: Option<String>, message: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("'{0}' is neither a readable file nor a known preset")]
    UnknownSource(String),
}

const PRESETS: &[(&str, &str, &str)] = &[
    ("e1", "stable SISO command tracking", include_str!("../presets/e1.toml")),
    ("e2", "unstable NMP SISO stabilization", include_str!("../presets/e2.toml")),
    ("e2b", "disturbance-rejection frequency sweep", include_str!("../presets/e2b.toml")),
    ("e2b_lag", "disturbance rejection at ω = π/4", include_str!("../presets/e2b_lag.toml")),
    ("e2b_noise", "frequency sweep with measurement noise", include_str!("../presets/e2b_noise.toml")),
    ("e3", "underactuated MIMO tracking", include_str!("../presets/e3.toml")),
    ("e4", "quadratic NARX without cross terms", include_str!("../presets/e4.toml")),
    ("e5", "cubic cross-term NARX", include_str!("../presets/e5.toml")),
    ("e6", "Hammerstein benchmark", include_str!("../presets/e6.toml")),
    ("e6_noise", "Hammerstein with measurement noise", include_str!("../presets/e6_noise.toml")),
    ("e7", "rigid-body attitude stabilization", include_str!("../presets/e7.toml")),
];

/// `(name, description)` of every built-in preset.
pub fn list_presets() -> Vec<(&'static str, &'static str)> {
    PRESETS.iter().map(|(n, d, _)| (*n, *d)).collect()
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _, _)| *n == name).map(|(_, _, s)| *s)
}

pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config(preset_source(name).ok_or_else(|| ConfigError::UnknownSource(name.into()))?)
}

/// Loads a file path, falling back to a preset name.
pub fn load_config(source: &str) -> Result<ExperimentConfig, ConfigError> {
    let path = Path::new(source);
    if path.is_file() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.into(), message: e.to_string() })?;
        return parse_config(&text);
    }
    match preset_source(source) {
        Some(text) => parse_config(text),
        None => Err(ConfigError::UnknownSource(source.into())),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
        let message = e.message().to_string();
        let field = message.split('`').nth(1).map(str::to_string);
        ConfigError::Parse { line, field, message }
    })
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub plant: Option<PlantSection>,
    #[serde(default)]
    pub kernel: KernelSection,
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub weights: WeightsSection,
    pub run: Option<RunSection>,
    #[serde(default)]
    pub reference: ReferenceSection,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantName {
    SisoStable,
    SisoUnstable,
    MimoUnstable,
    NarxQuadratic,
    NarxCubicCross,
    Hammerstein,
    RigidBody,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub kind: PlantName,
    #[serde(default)]
    pub disturbance_amplitude: f64,
    #[serde(default)]
    pub disturbance_frequency: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub inertia: Option<[f64; 3]>,
    pub sample_time: Option<f64>,
    pub initial_attitude: Option<[f64; 4]>,
    pub initial_rate: Option<[f64; 3]>,
    pub desired_attitude: Option<[f64; 4]>,
}

fn default_alpha() -> f64 {
    1.6
}

fn default_beta() -> f64 {
    1.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    #[default]
    Unitary,
    Linear,
    Polynomial,
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default)]
    pub kind: KernelName,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default)]
    pub cross_terms: bool,
    #[serde(default = "default_centers")]
    pub centers: usize,
    #[serde(default = "default_width")]
    pub width: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            kind: KernelName::Unitary,
            degree: default_degree(),
            cross_terms: false,
            centers: default_centers(),
            width: default_width(),
        }
    }
}

fn default_degree() -> u32 {
    2
}

fn default_centers() -> usize {
    1
}

fn default_width() -> f64 {
    1e3
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub lag: usize,
    pub horizon: usize,
    #[serde(default = "one")]
    pub forgetting: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn one() -> f64 {
    1.0
}

fn default_ridge() -> f64 {
    1e-9
}

fn default_jitter() -> f64 {
    crate::linalg::DEFAULT_JITTER
}

/// Scalar (times identity), diagonal list, or full matrix.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum WeightValue {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl WeightValue {
    fn to_mat(&self, n: usize) -> Result<Mat, String> {
        match self {
            WeightValue::Scalar(v) => Ok(Mat::identity(n).scale(*v)),
            WeightValue::Diagonal(d) if d.len() == n => Ok(Mat::diag(d)),
            WeightValue::Diagonal(d) => Err(format!("diagonal has {} entries, expected {n}", d.len())),
            WeightValue::Matrix(rows) if rows.len() == n && rows.iter().all(|r| r.len() == n) => {
                Ok(Mat::from_rows(rows))
            }
            WeightValue::Matrix(_) => Err(format!("matrix must be {n}×{n}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    #[serde(default = "unit_weight")]
    pub output_weight: WeightValue,
    #[serde(default = "unit_weight")]
    pub input_weight: WeightValue,
}

impl Default for WeightsSection {
    fn default() -> Self {
        Self { output_weight: unit_weight(), input_weight: unit_weight() }
    }
}

fn unit_weight() -> WeightValue {
    WeightValue::Scalar(1.0)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub steps: usize,
    pub warmup: usize,
    #[serde(default)]
    pub warmup_mode: WarmupMode,
    #[serde(default = "default_prbs_amplitude")]
    pub prbs_amplitude: f64,
    #[serde(default = "default_dwell")]
    pub prbs_dwell: [usize; 2],
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub increment_seam: IncrementSeam,
    #[serde(default)]
    pub rmse_denominator: RmseDenominator,
    #[serde(default = "default_bound")]
    pub divergence_bound: f64,
    pub metrics_window: Option<[usize; 2]>,
}

fn default_prbs_amplitude() -> f64 {
    0.1
}

fn default_dwell() -> [usize; 2] {
    [5, 15]
}

fn default_bound() -> f64 {
    1e5
}

/// A scalar applies to every output channel.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ReferenceValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub value: ReferenceValue,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(default)]
    pub segment: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub step: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// Overrides applied on top of a file or preset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub kernel: Option<KernelSpec>,
}

/// `unitary`, `linear`, `poly<δ>` (noncross), `poly<δ>x` (cross terms) or
/// `rbf`.
pub fn parse_kernel_flag(text: &str, rbf_width: f64) -> Result<KernelSpec, String> {
    match text {
        "unitary" => Ok(KernelSpec::Unitary),
        "linear" => Ok(KernelSpec::Linear),
        "rbf" => Ok(KernelSpec::Rbf { centers: 1, width: rbf_width }),
        other => {
            let rest = other.strip_prefix("poly").ok_or_else(|| format!("unknown kernel '{other}'"))?;
            let (digits, cross) = match rest.strip_suffix('x') {
                Some(d) => (d, true),
                None => (rest, false),
            };
            let degree = if digits.is_empty() { 2 } else { digits.parse().map_err(|_| format!("bad degree in '{other}'"))? };
            Ok(KernelSpec::Polynomial { degree, cross_terms: cross })
        }
    }
}

impl ExperimentConfig {
    pub fn output_dir(&self) -> Option<&Path> {
        self.output.dir.as_deref()
    }

    /// Validates every constraint and resolves the config into an
    /// [`Experiment`]. All violations are reported together.
    pub fn resolve(&self, overrides: &Overrides) -> Result<Experiment, ConfigError> {
        let mut errs = Vec::new();
        let check = |cond: bool, msg: String, errs: &mut Vec<String>| {
            if !cond {
                errs.push(msg);
            }
        };

        let plant = match &self.plant {
            None => {
                errs.push("missing [plant] section".into());
                None
            }
            Some(p) => Some(self.resolve_plant(p, &mut errs)),
        };
        if self.model.is_none() {
            errs.push("missing [model] section".into());
        }
        if self.run.is_none() {
            errs.push("missing [run] section".into());
        }
        let (Some(plant), Some(model), Some(run)) = (plant, self.model.as_ref(), self.run.as_ref()) else {
            return Err(ConfigError::Validation(errs));
        };
        let (p, m) = (plant.outputs(), plant.inputs());

        check(model.lag >= 1, format!("model.lag must be ≥ 1, got {}", model.lag), &mut errs);
        check(model.horizon >= 1, format!("model.horizon must be ≥ 1, got {}", model.horizon), &mut errs);
        check(
            model.forgetting > 0.0 && model.forgetting <= 1.0,
            format!("model.forgetting must lie in (0, 1], got {}", model.forgetting),
            &mut errs,
        );
        check(model.ridge > 0.0 && model.ridge.is_finite(), format!("model.ridge must be > 0, got {}", model.ridge), &mut errs);
        check(model.jitter >= 0.0 && model.jitter.is_finite(), format!("model.jitter must be ≥ 0, got {}", model.jitter), &mut errs);

        let kernel = match &overrides.kernel {
            Some(k) => k.clone(),
            None => match self.kernel.kind {
                KernelName::Unitary => KernelSpec::Unitary,
                KernelName::Linear => KernelSpec::Linear,
                KernelName::Polynomial => KernelSpec::Polynomial {
                    degree: self.kernel.degree,
                    cross_terms: self.kernel.cross_terms,
                },
                KernelName::Rbf => KernelSpec::Rbf { centers: self.kernel.centers, width: self.kernel.width },
            },
        };
        match &kernel {
            KernelSpec::Polynomial { degree, .. } => {
                check(*degree >= 1, format!("kernel.degree must be ≥ 1, got {degree}"), &mut errs)
            }
            KernelSpec::Rbf { centers, width } => {
                check(*centers >= 1, "kernel.centers must be ≥ 1".into(), &mut errs);
                check(*width > 0.0 && width.is_finite(), format!("kernel.width must be > 0, got {width}"), &mut errs);
            }
            _ => {}
        }

        let output_weight = self.weights.output_weight.to_mat(p).map_err(|e| format!("weights.output_weight: {e}"));
        let input_weight = self.weights.input_weight.to_mat(m).map_err(|e| format!("weights.input_weight: {e}"));
        if let Ok(w) = &output_weight {
            let sym = w.symmetrized().expect("square");
            let ok = w.is_finite()
                && sym.sub(w).expect("square").max_abs() <= 1e-12 * (1.0 + w.max_abs())
                && cholesky(&sym, 1e-12 * (1.0 + w.max_abs())).is_ok();
            check(ok, "weights.output_weight must be symmetric positive semidefinite".into(), &mut errs);
        }
        if let Ok(w) = &input_weight {
            let sym = w.symmetrized().expect("square");
            let ok = w.is_finite() && sym.sub(w).expect("square").max_abs() <= 1e-12 * (1.0 + w.max_abs()) && cholesky(w, 0.0).is_ok();
            check(ok, "weights.input_weight must be symmetric positive definite".into(), &mut errs);
        }
        for e in [&output_weight, &input_weight].into_iter().filter_map(|r| r.as_ref().err()) {
            errs.push(e.clone());
        }

        check(run.steps >= 1, "run.steps must be ≥ 1".into(), &mut errs);
        check(run.warmup <= run.steps, format!("run.warmup ({}) exceeds run.steps ({})", run.warmup, run.steps), &mut errs);
        check(run.prbs_amplitude >= 0.0 && run.prbs_amplitude.is_finite(), "run.prbs_amplitude must be ≥ 0".into(), &mut errs);
        check(
            run.prbs_dwell[0] >= 1 && run.prbs_dwell[0] <= run.prbs_dwell[1],
            format!("run.prbs_dwell must satisfy 1 ≤ min ≤ max, got {:?}", run.prbs_dwell),
            &mut errs,
        );
        check(run.noise_std >= 0.0 && run.noise_std.is_finite(), "run.noise_std must be ≥ 0".into(), &mut errs);
        check(run.divergence_bound > 0.0, "run.divergence_bound must be > 0".into(), &mut errs);
        if let Some([a, b]) = run.metrics_window {
            check(
                a >= 1 && a <= b && b <= run.steps,
                format!("run.metrics_window [{a}, {b}] must lie within [1, {}]", run.steps),
                &mut errs,
            );
        }

        let segments = self
            .reference
            .segment
            .iter()
            .map(|s| {
                let v = match &s.value {
                    ReferenceValue::Scalar(x) => vec![*x; p],
                    ReferenceValue::Vector(v) => v.clone(),
                };
                (s.start, s.end, v)
            })
            .collect();
        let reference = ReferenceSchedule { dim: p, segments };
        errs.extend(reference.problems());

        let sweep = self.sweep.as_ref().map(|s| {
            let grid = match (&s.grid, s.step) {
                (Some(g), _) => g.clone(),
                (None, Some(step)) if step > 0.0 => frequency_grid(step),
                _ => {
                    errs.push("sweep needs either grid or a positive step".into());
                    Vec::new()
                }
            };
            if grid.iter().any(|w| !(0.0..=std::f64::consts::PI).contains(w)) {
                errs.push("sweep frequencies must lie in [0, π]".into());
            }
            if !matches!(plant, PlantKind::SisoUnstable(_)) {
                errs.push("sweep requires plant.kind = \"siso_unstable\"".into());
            }
            SweepSpec { grid, amplitude: s.amplitude }
        });

        if !errs.is_empty() {
            return Err(ConfigError::Validation(errs));
        }
        Ok(Experiment {
            name: self.name.clone(),
            seed: overrides.seed.unwrap_or(self.seed),
            plant,
            kernel,
            lag: model.lag,
            horizon: model.horizon,
            forgetting: model.forgetting,
            ridge: model.ridge,
            jitter: model.jitter,
            output_weight: output_weight.expect("validated"),
            input_weight: input_weight.expect("validated"),
            steps: run.steps,
            warmup: run.warmup,
            warmup_mode: run.warmup_mode,
            prbs_amplitude: run.prbs_amplitude,
            prbs_dwell: (run.prbs_dwell[0], run.prbs_dwell[1]),
            noise_std: run.noise_std,
            seam: run.increment_seam,
            rmse_denominator: run.rmse_denominator,
            divergence_bound: run.divergence_bound,
            metrics_window: run.metrics_window.map(|[a, b]| (a, b)),
            reference,
            sweep,
        })
    }

    fn resolve_plant(&self, p: &PlantSection, errs: &mut Vec<String>) -> PlantKind {
        let rigid = p.inertia.is_some()
            || p.sample_time.is_some()
            || p.initial_attitude.is_some()
            || p.initial_rate.is_some()
            || p.desired_attitude.is_some();
        if rigid && p.kind != PlantName::RigidBody {
            errs.push("attitude parameters are only valid for plant.kind = \"rigid_body\"".into());
        }
        if (p.disturbance_amplitude != 0.0 || p.disturbance_frequency != 0.0) && p.kind != PlantName::SisoUnstable {
            errs.push("disturbance parameters are only valid for plant.kind = \"siso_unstable\"".into());
        }
        if !(0.0..=std::f64::consts::PI).contains(&p.disturbance_frequency) {
            errs.push(format!("plant.disturbance_frequency must lie in [0, π], got {}", p.disturbance_frequency));
        }
        match p.kind {
            PlantName::SisoStable => PlantKind::SisoStable,
            PlantName::SisoUnstable => PlantKind::SisoUnstable(Disturbance {
                amplitude: p.disturbance_amplitude,
                frequency: p.disturbance_frequency,
            }),
            PlantName::MimoUnstable => PlantKind::MimoUnstable,
            PlantName::NarxQuadratic => PlantKind::NarxQuadratic,
            PlantName::NarxCubicCross => PlantKind::NarxCubicCross,
            PlantName::Hammerstein => PlantKind::Hammerstein { alpha: p.alpha, beta: p.beta },
            PlantName::RigidBody => {
                let d = RigidBodyParams::default();
                let params = RigidBodyParams {
                    inertia: p.inertia.unwrap_or(d.inertia),
                    ts: p.sample_time.unwrap_or(d.ts),
                    q0: p.initial_attitude.unwrap_or(d.q0),
                    omega0: p.initial_rate.unwrap_or(d.omega0),
                    q_desired: p.desired_attitude.unwrap_or(d.q_desired),
                };
                if params.inertia.iter().any(|j| !(*j > 0.0)) {
                    errs.push("plant.inertia entries must be > 0".into());
                }
                if !(params.ts > 0.0) {
                    errs.push("plant.sample_time must be > 0".into());
                }
                for (name, q) in [("initial_attitude", params.q0), ("desired_attitude", params.q_desired)] {
                    if q.iter().map(|v| v * v).sum::<f64>() < 1e-12 {
                        errs.push(format!("plant.{name} must be nonzero"));
                    }
                }
                PlantKind::RigidBody(params)
            }
        }
    }
}
