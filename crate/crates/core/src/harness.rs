//! Closed-loop experiments: warm-up excitation, the receding-horizon loop,
//! metrics and the disturbance-frequency sweep.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::{AdaptiveController, AdaptiveSettings};
use crate::controller::{ControlWeights, IncrementSeam};
use crate::features::{window_dim, KernelDictionary, KernelKind};
use crate::linalg::Mat;
use crate::lpv::LpvCoefficients;
use crate::plants::{add_noise, Disturbance, Plant, PlantKind};
use crate::Error;

const STREAM_CENTERS: u64 = 1;
const STREAM_PRBS: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("metrics window [{start}, {end}] is empty or outside the run")]
    EmptyWindow { start: usize, end: usize },
}

/// Deterministic generator for a named sub-stream of an experiment seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Two-level `±amplitude` sequence with uniformly drawn dwell lengths;
/// each channel is drawn independently. Returns `length` samples of
/// `channels` values.
pub fn prbs<R: Rng + ?Sized>(
    amplitude: f64,
    dwell: (usize, usize),
    length: usize,
    channels: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, HarnessError> {
    if dwell.0 < 1 || dwell.0 > dwell.1 {
        return Err(HarnessError::InvalidParameter(format!(
            "dwell range must satisfy 1 ≤ min ≤ max, got [{}, {}]",
            dwell.0, dwell.1
        )));
    }
    if !amplitude.is_finite() || amplitude < 0.0 {
        return Err(HarnessError::InvalidParameter(format!("amplitude must be ≥ 0, got {amplitude}")));
    }
    let mut out = vec![vec![0.0; channels]; length];
    for c in 0..channels {
        let mut sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut k = 0;
        while k < length {
            let d = rng.random_range(dwell.0..=dwell.1);
            for row in out.iter_mut().skip(k).take(d) {
                row[c] = sign * amplitude;
            }
            k += d;
            sign = -sign;
        }
    }
    Ok(out)
}

/// Piecewise-constant reference; steps not covered by a segment are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSchedule {
    pub dim: usize,
    /// `(first step, last step, value)`, inclusive.
    pub segments: Vec<(usize, usize, Vec<f64>)>,
}

impl ReferenceSchedule {
    pub fn zero(dim: usize) -> Self {
        Self { dim, segments: Vec::new() }
    }

    pub fn at(&self, k: usize) -> Vec<f64> {
        self.segments
            .iter()
            .find(|(a, b, _)| *a <= k && k <= *b)
            .map(|(_, _, v)| v.clone())
            .unwrap_or_else(|| vec![0.0; self.dim])
    }

    /// Constraint violations: wrong value dimension, reversed or overlapping
    /// segments.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (a, b, v) in &self.segments {
            if v.len() != self.dim {
                out.push(format!("reference segment [{a}, {b}] has {} values, expected {}", v.len(), self.dim));
            }
            if a > b {
                out.push(format!("reference segment [{a}, {b}] ends before it starts"));
            }
        }
        let mut sorted: Vec<_> = self.segments.iter().map(|(a, b, _)| (*a, *b)).collect();
        sorted.sort();
        for w in sorted.windows(2) {
            if w[1].0 <= w[0].1 {
                out.push(format!("reference segments [{}, {}] and [{}, {}] overlap", w[0].0, w[0].1, w[1].0, w[1].1));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WarmupMode {
    #[default]
    Prbs,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RmseDenominator {
    /// Divide by the number of samples in the window.
    #[default]
    Window,
    /// Divide by the disturbance period `⌈2π/ω⌉`.
    Period,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Unitary,
    Linear,
    Polynomial { degree: u32, cross_terms: bool },
    Rbf { centers: usize, width: f64 },
}

impl KernelSpec {
    pub fn label(&self) -> String {
        match self {
            KernelSpec::Unitary => "unitary".into(),
            KernelSpec::Linear => "linear".into(),
            KernelSpec::Polynomial { degree, cross_terms: false } => format!("poly{degree}"),
            KernelSpec::Polynomial { degree, cross_terms: true } => format!("poly{degree}x"),
            KernelSpec::Rbf { .. } => "rbf".into(),
        }
    }

    pub fn build(&self, r: usize, seed: u64) -> Result<KernelDictionary, Error> {
        let dict = match self {
            KernelSpec::Unitary => KernelDictionary::unitary(r),
            KernelSpec::Linear => KernelDictionary::linear(r),
            KernelSpec::Polynomial { degree, cross_terms } => KernelDictionary::new(
                KernelKind::Polynomial { degree: *degree, cross_terms: *cross_terms },
                r,
            )?,
            KernelSpec::Rbf { centers, width } => {
                KernelDictionary::rbf_sampled(*centers, *width, r, &mut stream_rng(seed, STREAM_CENTERS))?
            }
        };
        Ok(dict)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub grid: Vec<f64>,
    pub amplitude: f64,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub plant: PlantKind,
    pub kernel: KernelSpec,
    pub lag: usize,
    pub horizon: usize,
    pub forgetting: f64,
    pub ridge: f64,
    pub jitter: f64,
    pub output_weight: Mat,
    pub input_weight: Mat,
    pub steps: usize,
    pub warmup: usize,
    pub warmup_mode: WarmupMode,
    pub prbs_amplitude: f64,
    pub prbs_dwell: (usize, usize),
    pub noise_std: f64,
    pub seam: IncrementSeam,
    pub rmse_denominator: RmseDenominator,
    pub divergence_bound: f64,
    pub metrics_window: Option<(usize, usize)>,
    pub reference: ReferenceSchedule,
    pub sweep: Option<SweepSpec>,
}

impl Experiment {
    pub fn outputs(&self) -> usize {
        self.plant.outputs()
    }

    pub fn inputs(&self) -> usize {
        self.plant.inputs()
    }

    /// Control-phase window `[T_warm + 1, T]` unless overridden.
    pub fn control_window(&self) -> (usize, usize) {
        self.metrics_window.unwrap_or((self.warmup + 1, self.steps))
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_lag(mut self, lag: usize) -> Self {
        self.lag = lag;
        self
    }

    pub fn with_disturbance(mut self, amplitude: f64, frequency: f64) -> Self {
        if let PlantKind::SisoUnstable(d) = &mut self.plant {
            *d = Disturbance { amplitude, frequency };
        }
        self
    }

    pub fn dictionary(&self) -> Result<KernelDictionary, Error> {
        self.kernel.build(window_dim(self.outputs(), self.inputs(), self.lag), self.seed)
    }

    pub fn controller(&self, y_init: &[f64]) -> Result<AdaptiveController, Error> {
        let weights = ControlWeights::per_step(&self.output_weight, &self.input_weight, self.horizon)?;
        let settings = AdaptiveSettings {
            lag: self.lag,
            horizon: self.horizon,
            forgetting: self.forgetting,
            ridge: self.ridge,
            jitter: self.jitter,
            seam: self.seam,
            weights,
        };
        AdaptiveController::new(self.outputs(), self.inputs(), self.dictionary()?, settings, y_init)
    }
}

/// One row of the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub y_noisy: Option<Vec<f64>>,
    pub yhat_prior: Vec<f64>,
    pub pred_err_norm: f64,
    /// Cost of the solve performed at this step (absent during warm-up).
    pub cost: Option<f64>,
    pub chol_diag_ratio: Option<f64>,
    /// Cost of holding `u_k` over the horizon under the same predictor.
    pub hold_cost: Option<f64>,
    /// Flattened `{A_i, B_i, C}` compiled at this step.
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub step: usize,
    pub message: String,
    /// Whether the failure was numerical (as opposed to divergence).
    pub numerical: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub name: String,
    pub outputs: usize,
    pub inputs: usize,
    pub lag: usize,
    pub noisy: bool,
    pub records: Vec<StepRecord>,
    pub failure: Option<StepFailure>,
    /// Quaternion norm after every step, for attitude plants.
    pub quaternion_norms: Vec<f64>,
}

impl RunLog {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn coeff_headers(&self) -> Vec<String> {
        LpvCoefficients::headers(self.outputs, self.inputs, self.lag)
    }

    pub fn record(&self, k: usize) -> Option<&StepRecord> {
        self.records.get(k.checked_sub(1)?).filter(|r| r.k == k)
    }

    pub fn max_abs_output(&self) -> f64 {
        self.records.iter().flat_map(|r| r.y.iter()).fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Runs warm-up followed by the closed loop. Numerical failures and
/// divergence stop the run; the log keeps every step completed before.
pub fn run_closed_loop(exp: &Experiment) -> Result<RunLog, Error> {
    let mut plant = Plant::new(exp.plant.clone());
    let (p, m) = (exp.outputs(), exp.inputs());
    let y_init = plant.initial_output();
    let mut ctl = exp.controller(&y_init)?;
    let warm_inputs = match exp.warmup_mode {
        WarmupMode::Prbs => prbs(
            exp.prbs_amplitude,
            exp.prbs_dwell,
            exp.warmup,
            m,
            &mut stream_rng(exp.seed, STREAM_PRBS),
        )?,
        WarmupMode::Zero => vec![vec![0.0; m]; exp.warmup],
    };
    let mut noise_rng = stream_rng(exp.seed, STREAM_NOISE);
    let mut log = RunLog {
        name: exp.name.clone(),
        outputs: p,
        inputs: m,
        lag: exp.lag,
        noisy: exp.noise_std > 0.0,
        records: Vec::with_capacity(exp.steps),
        failure: None,
        quaternion_norms: Vec::new(),
    };

    let mut u_next = vec![0.0; m];
    for k in 1..=exp.steps {
        let u = if k <= exp.warmup { warm_inputs[k - 1].clone() } else { u_next.clone() };
        let fail = |message: String, numerical: bool| StepFailure { step: k, message, numerical };
        if let Err(e) = ctl.push_input(&u) {
            log.failure = Some(fail(e.to_string(), true));
            break;
        }
        let y = plant.step(&u, k)?;
        if let Some(st) = plant.attitude() {
            log.quaternion_norms.push(st.q.norm());
        }
        let y_meas = if exp.noise_std > 0.0 { Some(add_noise(&y, exp.noise_std, &mut noise_rng)) } else { None };
        let obs = match ctl.observe(y_meas.as_deref().unwrap_or(&y)) {
            Ok(o) => o,
            Err(e) => {
                log.failure = Some(fail(e.to_string(), true));
                break;
            }
        };
        let mut record = StepRecord {
            k,
            r: exp.reference.at(k),
            u,
            y: y.clone(),
            y_noisy: y_meas,
            yhat_prior: obs.yhat_prior,
            pred_err_norm: obs.prediction_error_norm,
            cost: None,
            chol_diag_ratio: None,
            hold_cost: None,
            coeffs: ctl.coefficients().flatten(),
        };
        let diverged = y.iter().any(|v| !v.is_finite() || v.abs() > exp.divergence_bound);
        if k >= exp.warmup && k < exp.steps && !diverged {
            match ctl.compute(&exp.reference.at(k + 1)) {
                Ok(step) => {
                    record.cost = Some(step.solution.cost_value);
                    record.chol_diag_ratio = Some(step.solution.h_cond_proxy);
                    record.hold_cost = Some(step.hold_cost);
                    u_next = step.solution.u_next;
                }
                Err(e) => {
                    log.records.push(record);
                    log.failure = Some(fail(e.to_string(), true));
                    break;
                }
            }
        }
        log.records.push(record);
        if diverged {
            log.failure = Some(fail(
                format!("output magnitude exceeded {} (diverged)", exp.divergence_bound),
                false,
            ));
            break;
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub iae: f64,
    pub tv_u: f64,
    pub peak_u: f64,
    pub window: (usize, usize),
}

/// Tracking and input-activity metrics over `[start, end]` (inclusive
/// step indices) using noise-free outputs.
pub fn metrics(log: &RunLog, window: (usize, usize)) -> Result<Metrics, HarnessError> {
    let (start, end) = window;
    let rows: Vec<&StepRecord> = log.records.iter().filter(|r| r.k >= start && r.k <= end).collect();
    if start > end || rows.len() != end - start + 1 {
        return Err(HarnessError::EmptyWindow { start, end });
    }
    let n = rows.len() as f64;
    let mut sq = 0.0;
    let mut iae = 0.0;
    let mut peak: f64 = 0.0;
    for r in &rows {
        for (a, b) in r.r.iter().zip(&r.y) {
            sq += (a - b) * (a - b);
            iae += (a - b).abs();
        }
        peak = r.u.iter().fold(peak, |acc, v| acc.max(v.abs()));
    }
    let tv_u = rows
        .windows(2)
        .map(|w| w[1].u.iter().zip(&w[0].u).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum();
    Ok(Metrics { rmse: (sq / n).sqrt(), iae, tv_u, peak_u: peak, window })
}

/// Whether every logged output is finite and within `bound`, and the run
/// finished.
pub fn bounded(log: &RunLog, bound: f64) -> bool {
    log.completed() && log.records.iter().all(|r| r.y.iter().all(|v| v.is_finite() && v.abs() <= bound))
}

/// `0, step, 2·step, …` below π, then π itself.
pub fn frequency_grid(step: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..).map(|i| i as f64 * step).take_while(|w| *w < PI - 1e-12).collect();
    grid.push(PI);
    grid
}

/// Disturbance period `⌈2π/ω⌉`, or `None` for the static case.
pub fn disturbance_period(omega: f64) -> Option<usize> {
    (omega > 0.0).then(|| (2.0 * PI / omega).ceil() as usize)
}

/// Evaluation window length: `max(400, 20·T_ω)`, or 1000 for `ω = 0`.
pub fn sweep_window_len(omega: f64) -> usize {
    match disturbance_period(omega) {
        Some(t) => (20 * t).max(400),
        None => 1000,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub omega: f64,
    pub rmse: f64,
    pub bounded: bool,
}

/// Windowed output RMSE about the origin at the end of a run.
pub fn sweep_rmse(log: &RunLog, steps: usize, omega: f64, denominator: RmseDenominator) -> f64 {
    let w = sweep_window_len(omega).min(steps);
    let start = steps + 1 - w;
    let sq: f64 = log
        .records
        .iter()
        .filter(|r| r.k >= start)
        .flat_map(|r| r.y.iter())
        .map(|v| v * v)
        .sum();
    let denom = match (denominator, disturbance_period(omega)) {
        (RmseDenominator::Period, Some(t)) => t,
        _ => w,
    };
    (sq / denom as f64).sqrt()
}

/// Runs the experiment once per grid frequency, in parallel. Failed or
/// divergent runs are flagged unbounded with an infinite RMSE.
pub fn frequency_sweep(exp: &Experiment, grid: &[f64], amplitude: f64) -> Vec<SweepPoint> {
    grid.par_iter()
        .map(|&omega| {
            let e = exp.clone().with_disturbance(amplitude, omega);
            match run_closed_loop(&e) {
                Ok(log) if bounded(&log, e.divergence_bound) => SweepPoint {
                    omega,
                    rmse: sweep_rmse(&log, e.steps, omega, e.rmse_denominator),
                    bounded: true,
                },
                _ => SweepPoint { omega, rmse: f64::INFINITY, bounded: false },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(k: usize, r: f64, y: f64, u: f64) -> StepRecord {
        StepRecord {
            k,
            r: vec![r],
            u: vec![u],
            y: vec![y],
            y_noisy: None,
            yhat_prior: vec![0.0],
            pred_err_norm: 0.0,
            cost: None,
            chol_diag_ratio: None,
            hold_cost: None,
            coeffs: vec![],
        }
    }

    fn log(records: Vec<StepRecord>) -> RunLog {
        RunLog { name: "t".into(), outputs: 1, inputs: 1, lag: 1, noisy: false, records, failure: None, quaternion_norms: vec![] }
    }

    #[test]
    fn constant_error_rmse() {
        let l = log((1..=10).map(|k| record(k, 1.0, 0.5, 0.0)).collect());
        let m = metrics(&l, (3, 8)).unwrap();
        assert!((m.rmse - 0.5).abs() < 1e-15);
        assert!((m.iae - 3.0).abs() < 1e-15);
    }

    #[test]
    fn input_activity() {
        let l = log([0.0, 1.0, 0.0].iter().enumerate().map(|(i, u)| record(i + 1, 0.0, 0.0, *u)).collect());
        let m = metrics(&l, (1, 3)).unwrap();
        assert_eq!(m.tv_u, 2.0);
        assert_eq!(m.peak_u, 1.0);
        assert!(metrics(&l, (2, 5)).is_err());
        assert!(metrics(&l, (3, 2)).is_err());
    }

    #[test]
    fn grid_has_64_points() {
        let g = frequency_grid(0.05);
        assert_eq!(g.len(), 64);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), PI);
    }

    #[test]
    fn sweep_windows() {
        assert_eq!(sweep_window_len(0.0), 1000);
        assert_eq!(sweep_window_len(PI), 400);
        assert_eq!(disturbance_period(0.05), Some(126));
        assert_eq!(sweep_window_len(0.05), 2520);
    }

    #[test]
    fn reference_schedule_lookup() {
        let s = ReferenceSchedule { dim: 1, segments: vec![(51, 100, vec![1.0]), (101, 150, vec![-0.5])] };
        assert_eq!(s.at(50), vec![0.0]);
        assert_eq!(s.at(51), vec![1.0]);
        assert_eq!(s.at(150), vec![-0.5]);
        assert!(s.problems().is_empty());
        let bad = ReferenceSchedule { dim: 1, segments: vec![(1, 10, vec![1.0]), (10, 20, vec![0.0, 1.0])] };
        assert_eq!(bad.problems().len(), 2);
    }

    #[test]
    fn prbs_rejects_bad_dwell() {
        let mut rng = stream_rng(0, 0);
        assert!(prbs(0.1, (0, 3), 10, 1, &mut rng).is_err());
        assert!(prbs(0.1, (5, 3), 10, 1, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn prbs_is_two_level(seed in 0u64..10_000, amp in 0.01f64..2.0, lo in 1usize..6, extra in 0usize..10, len in 1usize..300, ch in 1usize..4) {
            let mut rng = stream_rng(seed, 7);
            let seq = prbs(amp, (lo, lo + extra), len, ch, &mut rng).unwrap();
            prop_assert_eq!(seq.len(), len);
            for row in &seq {
                prop_assert!(row.iter().all(|v| v.abs() == amp));
            }
            for c in 0..ch {
                let mut run = 1;
                for k in 1..len {
                    if seq[k][c] == seq[k - 1][c] {
                        run += 1;
                        prop_assert!(run <= lo + extra);
                    } else {
                        prop_assert!(run >= lo);
                        run = 1;
                    }
                }
            }
        }

        #[test]
        fn fixed_dwell_is_deterministic(seed in 0u64..1000, n in 1usize..8) {
            let seq = prbs(0.3, (n, n), 5 * n, 1, &mut stream_rng(seed, 2)).unwrap();
            for k in 1..seq.len() {
                prop_assert_eq!(seq[k][0] == seq[k - 1][0], k % n != 0);
            }
        }
    }
}
