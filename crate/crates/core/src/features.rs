//! Kernel dictionaries and the block-structured regressor.
//!
//! The past window `s_k` and the base vector `ψ_k` share one canonical
//! ordering: outputs newest first (`y_{k-1}, …, y_{k-ℓ}`), then inputs newest
//! first (`u_k, …, u_{k-ℓ}`), channels contiguous within each sample. The
//! regressor `z_k` stacks kernel-weighted copies of `ψ_k`; [`RegressorLayout`]
//! is the single source of truth for where every block lives, and both the
//! LPV compiler and coefficient recovery derive their offsets from it.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("regressor window is not full")]
    WindowNotFull,
    #[error("invalid kernel dictionary: {0}")]
    InvalidDictionary(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `γ(s) = 1`: plain LPV-free ARX.
    Unitary,
    /// `[1; s]`.
    Linear,
    /// `[1; s; s^2; …; s^δ]`; with `cross_terms` every monomial of total
    /// degree `1..=δ` in graded-lexicographic order instead of pure powers.
    Polynomial { degree: u32, cross_terms: bool },
    /// Gaussian bumps `exp(-‖s − c_j‖² / (2σ²))`, no constant feature.
    Rbf { centers: Vec<Vec<f64>>, width: f64 },
}

/// A validated kernel dictionary over past windows of dimension `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDictionary {
    kind: KernelKind,
    r: usize,
    /// Exponent vectors of the non-constant polynomial features, cached.
    exponents: Vec<Vec<u32>>,
}

impl KernelDictionary {
    pub fn new(kind: KernelKind, r: usize) -> Result<Self, FeatureError> {
        if r == 0 {
            return Err(FeatureError::InvalidDictionary("window dimension r must be positive".into()));
        }
        let exponents = match &kind {
            KernelKind::Unitary | KernelKind::Rbf { .. } => Vec::new(),
            KernelKind::Linear => pure_powers(r, 1),
            KernelKind::Polynomial { degree, cross_terms } => {
                if *degree < 1 {
                    return Err(FeatureError::InvalidDictionary(
                        "polynomial degree must be at least 1".into(),
                    ));
                }
                if *cross_terms {
                    (1..=*degree).flat_map(|d| graded_lex(r, d)).collect()
                } else {
                    pure_powers(r, *degree)
                }
            }
        };
        if let KernelKind::Rbf { centers, width } = &kind {
            if !(*width > 0.0) || !width.is_finite() {
                return Err(FeatureError::InvalidDictionary(format!(
                    "rbf width must be positive, got {width}"
                )));
            }
            if centers.is_empty() {
                return Err(FeatureError::InvalidDictionary("rbf needs at least one center".into()));
            }
            if let Some(c) = centers.iter().find(|c| c.len() != r) {
                return Err(FeatureError::InvalidDictionary(format!(
                    "rbf center has dimension {}, expected {r}",
                    c.len()
                )));
            }
        }
        Ok(Self { kind, r, exponents })
    }

    pub fn unitary(r: usize) -> Self {
        Self::new(KernelKind::Unitary, r).expect("unitary is always valid")
    }

    pub fn linear(r: usize) -> Self {
        Self::new(KernelKind::Linear, r).expect("linear is always valid")
    }

    /// RBF dictionary whose centers are drawn once from `N(0, I_r)`.
    pub fn rbf_sampled<R: Rng + ?Sized>(
        n_centers: usize,
        width: f64,
        r: usize,
        rng: &mut R,
    ) -> Result<Self, FeatureError> {
        let centers = (0..n_centers)
            .map(|_| (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Self::new(KernelKind::Rbf { centers, width }, r)
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn window_dim(&self) -> usize {
        self.r
    }

    /// Whether `γ_1 ≡ 1` leads the feature vector (all but RBF).
    pub fn include_intercept(&self) -> bool {
        !matches!(self.kind, KernelKind::Rbf { .. })
    }

    /// Number of features `q`.
    pub fn feature_count(&self) -> usize {
        match &self.kind {
            KernelKind::Rbf { centers, .. } => centers.len(),
            _ => 1 + self.exponents.len(),
        }
    }

    /// Evaluates `g(s)`.
    pub fn eval_features(&self, s: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if s.len() != self.r {
            return Err(FeatureError::DimensionMismatch {
                expected: self.r,
                found: s.len(),
            });
        }
        let g = match &self.kind {
            KernelKind::Unitary => vec![1.0],
            KernelKind::Linear => std::iter::once(1.0).chain(s.iter().copied()).collect(),
            KernelKind::Polynomial { .. } => std::iter::once(1.0)
                .chain(self.exponents.iter().map(|e| eval_monomial(s, e)))
                .collect(),
            KernelKind::Rbf { centers, width } => {
                let denom = 2.0 * width * width;
                centers
                    .iter()
                    .map(|c| {
                        let d2: f64 = s.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                        (-d2 / denom).exp()
                    })
                    .collect()
            }
        };
        Ok(g)
    }

    /// Exponent vectors (over the `r` window coordinates) of each feature,
    /// or `None` when some feature is not a monomial.
    pub fn feature_exponents(&self) -> Option<Vec<Vec<u32>>> {
        match &self.kind {
            KernelKind::Rbf { .. } => None,
            _ => Some(
                std::iter::once(vec![0; self.r])
                    .chain(self.exponents.iter().cloned())
                    .collect(),
            ),
        }
    }
}

/// `[s^1; s^2; …; s^δ]` as exponent vectors.
fn pure_powers(r: usize, degree: u32) -> Vec<Vec<u32>> {
    (1..=degree)
        .flat_map(|d| {
            (0..r).map(move |i| {
                let mut e = vec![0; r];
                e[i] = d;
                e
            })
        })
        .collect()
}

/// All exponent vectors of total degree `d` in graded-lexicographic order,
/// e.g. for r=3, d=2: s1², s1s2, s1s3, s2², s2s3, s3².
fn graded_lex(r: usize, d: u32) -> Vec<Vec<u32>> {
    fn rec(start: usize, left: u32, r: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..r {
            cur[i] += 1;
            rec(i, left - 1, r, cur, out);
            cur[i] -= 1;
        }
    }
    let mut out = Vec::new();
    rec(0, d, r, &mut vec![0; r], &mut out);
    out
}

fn eval_monomial(s: &[f64], exps: &[u32]) -> f64 {
    s.iter()
        .zip(exps)
        .filter(|(_, e)| **e > 0)
        .map(|(v, e)| v.powi(*e as i32))
        .product()
}

/// One coordinate of the past window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Signal {
    /// `y_{k-lag}` channel `channel` (0-based), `lag ≥ 1`.
    Output { lag: usize, channel: usize },
    /// `u_{k-lag}` channel `channel` (0-based), `lag ≥ 0`.
    Input { lag: usize, channel: usize },
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, lag, ch) = match *self {
            Signal::Output { lag, channel } => ('y', lag, channel),
            Signal::Input { lag, channel } => ('u', lag, channel),
        };
        if ch == 0 {
            write!(f, "{name}{lag}")
        } else {
            write!(f, "{name}{lag}[{}]", ch + 1)
        }
    }
}

/// Product of window signals with positive exponents; the empty product is
/// the constant `1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Monomial(Vec<(Signal, u32)>);

impl Monomial {
    pub fn constant() -> Self {
        Self::default()
    }

    pub fn from_factors(factors: impl IntoIterator<Item = (Signal, u32)>) -> Self {
        let mut v: Vec<(Signal, u32)> = Vec::new();
        for (s, e) in factors {
            if e == 0 {
                continue;
            }
            match v.iter_mut().find(|(t, _)| *t == s) {
                Some((_, acc)) => *acc += e,
                None => v.push((s, e)),
            }
        }
        v.sort();
        Self(v)
    }

    pub fn factors(&self) -> &[(Signal, u32)] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| e).sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial::from_factors(self.0.iter().chain(other.0.iter()).copied())
    }

    /// Parses `1`, `y1`, `u0^2`, `y1*u1^2`, `y2[3]` (1-based channel).
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        if text == "1" {
            return Ok(Self::constant());
        }
        let mut factors = Vec::new();
        for part in text.split('*') {
            let part = part.trim();
            let (base, exp) = match part.split_once('^') {
                Some((b, e)) => (
                    b.trim(),
                    e.trim()
                        .parse::<u32>()
                        .map_err(|_| format!("bad exponent in '{part}'"))?,
                ),
                None => (part, 1),
            };
            let mut chars = base.chars();
            let kind = chars.next().ok_or_else(|| format!("empty factor in '{text}'"))?;
            let rest: String = chars.collect();
            let (lag_str, channel) = match rest.split_once('[') {
                Some((l, c)) => {
                    let c = c
                        .strip_suffix(']')
                        .ok_or_else(|| format!("unterminated channel in '{part}'"))?
                        .parse::<usize>()
                        .map_err(|_| format!("bad channel in '{part}'"))?;
                    if c == 0 {
                        return Err(format!("channels are 1-based in '{part}'"));
                    }
                    (l, c - 1)
                }
                None => (rest.as_str(), 0),
            };
            let lag = lag_str
                .parse::<usize>()
                .map_err(|_| format!("bad lag in '{part}'"))?;
            let signal = match kind {
                'y' if lag >= 1 => Signal::Output { lag, channel },
                'y' => return Err(format!("output lags start at 1 in '{part}'")),
                'u' => Signal::Input { lag, channel },
                _ => return Err(format!("unknown signal '{kind}' in '{part}'")),
            };
            factors.push((signal, exp));
        }
        Ok(Self::from_factors(factors))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for (i, (s, e)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            if *e == 1 {
                write!(f, "{s}")?;
            } else {
                write!(f, "{s}^{e}")?;
            }
        }
        Ok(())
    }
}

/// Dimensions and block offsets of `z_k` for a given `(p, m, ℓ, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegressorLayout {
    pub p: usize,
    pub m: usize,
    pub lag: usize,
    pub q: usize,
    pub intercept: bool,
}

impl RegressorLayout {
    pub fn new(p: usize, m: usize, lag: usize, dict: &KernelDictionary) -> Self {
        Self {
            p,
            m,
            lag,
            q: dict.feature_count(),
            intercept: dict.include_intercept(),
        }
    }

    /// Window dimension `r = pℓ + m(ℓ+1)`.
    pub fn r(&self) -> usize {
        window_dim(self.p, self.m, self.lag)
    }

    /// `d₀ = 1 + r`.
    pub fn d0(&self) -> usize {
        1 + self.r()
    }

    pub fn n_z(&self) -> usize {
        if self.intercept {
            self.q * (self.d0() - 1) + 1
        } else {
            self.q * self.d0()
        }
    }

    /// Parameter count `d = p·n_z`.
    pub fn d(&self) -> usize {
        self.p * self.n_z()
    }

    /// Position of `y_{k-lag}` channel `ch` within `ψ̄` (0-based).
    pub fn psi_bar_output(&self, lag: usize, ch: usize) -> usize {
        debug_assert!(lag >= 1 && lag <= self.lag && ch < self.p);
        (lag - 1) * self.p + ch
    }

    /// Position of `u_{k-lag}` channel `ch` within `ψ̄` (0-based).
    pub fn psi_bar_input(&self, lag: usize, ch: usize) -> usize {
        debug_assert!(lag <= self.lag && ch < self.m);
        self.p * self.lag + lag * self.m + ch
    }

    /// Window signals in `ψ̄` (equivalently `s`) order.
    pub fn signals(&self) -> Vec<Signal> {
        let ys = (1..=self.lag)
            .flat_map(|lag| (0..self.p).map(move |channel| Signal::Output { lag, channel }));
        let us = (0..=self.lag)
            .flat_map(|lag| (0..self.m).map(move |channel| Signal::Input { lag, channel }));
        ys.chain(us).collect()
    }

    /// Feature blocks of `z`: for each feature `j`, the offset in `z` of its
    /// copy of `ψ̄`, and the index of its constant column when one exists.
    ///
    /// Intercept-aware: feature 0 owns `z[0]` (constant) and `z[1..d₀]`;
    /// feature `j ≥ 1` owns `ψ̄` only at `d₀ + (j-1)(d₀-1)`.
    /// Plain: feature `j` owns `[1; ψ̄]` at `j·d₀`.
    pub fn feature_blocks(&self) -> Vec<FeatureBlock> {
        let d0 = self.d0();
        (0..self.q)
            .map(|j| {
                if self.intercept {
                    if j == 0 {
                        FeatureBlock { constant: Some(0), psi_bar: 1 }
                    } else {
                        FeatureBlock { constant: None, psi_bar: d0 + (j - 1) * (d0 - 1) }
                    }
                } else {
                    FeatureBlock { constant: Some(j * d0), psi_bar: j * d0 + 1 }
                }
            })
            .collect()
    }

    /// Symbolic monomial of every `z` coordinate, or `None` when the
    /// dictionary has non-monomial features.
    pub fn z_monomials(&self, dict: &KernelDictionary) -> Option<Vec<Monomial>> {
        let exps = dict.feature_exponents()?;
        let signals = self.signals();
        let feature_monos: Vec<Monomial> = exps
            .iter()
            .map(|e| {
                Monomial::from_factors(signals.iter().copied().zip(e.iter().copied()))
            })
            .collect();
        let mut out = vec![Monomial::constant(); self.n_z()];
        for (j, block) in self.feature_blocks().into_iter().enumerate() {
            let g = &feature_monos[j];
            if let Some(c) = block.constant {
                out[c] = g.clone();
            }
            for (i, s) in signals.iter().enumerate() {
                out[block.psi_bar + i] = g.mul(&Monomial::from_factors([(*s, 1)]));
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureBlock {
    pub constant: Option<usize>,
    pub psi_bar: usize,
}

pub fn window_dim(p: usize, m: usize, lag: usize) -> usize {
    p * lag + m * (lag + 1)
}

/// Which sample the window expects next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// Holds `u_k, …, u_{k-ℓ}` and `y_{k-1}, …, y_{k-ℓ}`: ready for the regressor.
    AwaitingOutput,
    /// Holds `u_k, …` and `y_k, …`: ready for prediction, waiting for `u_{k+1}`.
    AwaitingInput,
}

/// Ring buffer of the last `ℓ` outputs and `ℓ+1` inputs.
///
/// Inputs and outputs must alternate: `push_input(u_k)`, then
/// `push_output(y_k)`, then `push_input(u_{k+1})`, and so on.
#[derive(Debug, Clone)]
pub struct RegressorWindow {
    p: usize,
    m: usize,
    lag: usize,
    y_hist: VecDeque<Vec<f64>>,
    u_hist: VecDeque<Vec<f64>>,
    phase: Phase,
}

impl RegressorWindow {
    pub fn new(p: usize, m: usize, lag: usize) -> Self {
        assert!(p >= 1 && m >= 1 && lag >= 1, "window dimensions must be positive");
        Self {
            p,
            m,
            lag,
            y_hist: VecDeque::with_capacity(lag + 1),
            u_hist: VecDeque::with_capacity(lag + 2),
            phase: Phase::AwaitingInput,
        }
    }

    /// Window pre-loaded with a known past: `y_recent = (y_k, y_{k-1}, …)` and
    /// `u_recent = (u_k, u_{k-1}, …)`, newest first, each at least `ℓ` long.
    /// The result is ready for prediction and expects `u_{k+1}` next.
    pub fn from_history(
        p: usize,
        m: usize,
        lag: usize,
        y_recent: &[Vec<f64>],
        u_recent: &[Vec<f64>],
    ) -> Result<Self, FeatureError> {
        let mut w = Self::new(p, m, lag);
        if y_recent.len() < lag || u_recent.len() < lag {
            return Err(FeatureError::WindowNotFull);
        }
        for y in y_recent.iter().take(lag).rev() {
            check_len(y, p)?;
            w.y_hist.push_front(y.clone());
        }
        for u in u_recent.iter().take(lag + 1).rev() {
            check_len(u, m)?;
            w.u_hist.push_front(u.clone());
        }
        Ok(w)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.p, self.m, self.lag)
    }

    pub fn push_input(&mut self, u: &[f64]) -> Result<(), FeatureError> {
        check_len(u, self.m)?;
        assert_eq!(self.phase, Phase::AwaitingInput, "push_input called twice");
        self.u_hist.push_front(u.to_vec());
        self.u_hist.truncate(self.lag + 1);
        self.phase = Phase::AwaitingOutput;
        Ok(())
    }

    pub fn push_output(&mut self, y: &[f64]) -> Result<(), FeatureError> {
        check_len(y, self.p)?;
        assert_eq!(self.phase, Phase::AwaitingOutput, "push_output before push_input");
        self.y_hist.push_front(y.to_vec());
        self.y_hist.truncate(self.lag);
        self.phase = Phase::AwaitingInput;
        Ok(())
    }

    /// Whether the regressor for the pending output can be formed.
    pub fn is_full(&self) -> bool {
        self.phase == Phase::AwaitingOutput
            && self.y_hist.len() == self.lag
            && self.u_hist.len() == self.lag + 1
    }

    /// Whether the measured history needed by the horizon predictor
    /// (`y_k…y_{k+1-ℓ}`, `u_k…u_{k+1-ℓ}`) is available.
    pub fn has_prediction_history(&self) -> bool {
        self.phase == Phase::AwaitingInput
            && self.y_hist.len() == self.lag
            && self.u_hist.len() >= self.lag
    }

    /// Outputs newest first.
    pub fn outputs(&self) -> impl Iterator<Item = &[f64]> {
        self.y_hist.iter().map(Vec::as_slice)
    }

    /// Inputs newest first.
    pub fn inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.u_hist.iter().map(Vec::as_slice)
    }

    pub fn latest_input(&self) -> Option<&[f64]> {
        self.u_hist.front().map(Vec::as_slice)
    }

    /// Past window `s_k` (equal to `ψ̄_k`).
    pub fn past_window(&self) -> Result<Vec<f64>, FeatureError> {
        if !self.is_full() {
            return Err(FeatureError::WindowNotFull);
        }
        let mut s = Vec::with_capacity(window_dim(self.p, self.m, self.lag));
        for y in &self.y_hist {
            s.extend_from_slice(y);
        }
        for u in &self.u_hist {
            s.extend_from_slice(u);
        }
        Ok(s)
    }

    /// Base vector `ψ_k = [1; s_k]`.
    pub fn psi(&self) -> Result<Vec<f64>, FeatureError> {
        let s = self.past_window()?;
        Ok(std::iter::once(1.0).chain(s).collect())
    }
}

fn check_len(v: &[f64], expected: usize) -> Result<(), FeatureError> {
    if v.len() != expected {
        return Err(FeatureError::DimensionMismatch {
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

/// Features, base vector and regressor for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub g: Vec<f64>,
    pub psi: Vec<f64>,
    pub z: Vec<f64>,
    pub layout: RegressorLayout,
}

impl Regressor {
    /// `(p, d)`: shape of the implicit `φ_k = z_kᵀ ⊗ I_p`.
    pub fn phi_dims(&self) -> (usize, usize) {
        (self.layout.p, self.layout.d())
    }
}

/// Builds `g_k`, `ψ_k` and `z_k` from a full window.
pub fn build_regressor(
    dict: &KernelDictionary,
    window: &RegressorWindow,
) -> Result<Regressor, FeatureError> {
    let (p, m, lag) = window.dims();
    let layout = RegressorLayout::new(p, m, lag, dict);
    let psi = window.psi()?;
    let g = dict.eval_features(&psi[1..])?;
    let z = assemble_z(&layout, &g, &psi);
    Ok(Regressor { g, psi, z, layout })
}

fn assemble_z(layout: &RegressorLayout, g: &[f64], psi: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; layout.n_z()];
    let psi_bar = &psi[1..];
    for (gj, block) in g.iter().zip(layout.feature_blocks()) {
        if let Some(c) = block.constant {
            z[c] = *gj;
        }
        for (dst, v) in z[block.psi_bar..block.psi_bar + psi_bar.len()].iter_mut().zip(psi_bar) {
            *dst = gj * v;
        }
    }
    z
}

/// `φ_k θ` with `φ_k = z_kᵀ ⊗ I_p`, i.e. `Θ z` for `Θ = unvec(θ)` (p×n_z,
/// column-major), without materializing `φ_k`.
pub fn phi_row_apply(z: &[f64], theta: &[f64], p: usize) -> Result<Vec<f64>, FeatureError> {
    if theta.len() != p * z.len() {
        return Err(FeatureError::DimensionMismatch {
            expected: p * z.len(),
            found: theta.len(),
        });
    }
    let mut out = vec![0.0; p];
    for (j, zj) in z.iter().enumerate() {
        if *zj == 0.0 {
            continue;
        }
        for (c, o) in out.iter_mut().enumerate() {
            *o += zj * theta[j * p + c];
        }
    }
    Ok(out)
}
