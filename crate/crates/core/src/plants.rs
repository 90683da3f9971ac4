//! Ground-truth simulators for the benchmark studies.

use std::collections::VecDeque;
use std::ops::Neg;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("clock skew: plant expected step {expected}, got {found}")]
    ClockSkew { expected: usize, found: usize },
    #[error("input dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Unit quaternion `(η, ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub eta: f64,
    pub eps: [f64; 3],
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { eta: 1.0, eps: [0.0; 3] };

    pub fn new(eta: f64, eps: [f64; 3]) -> Self {
        Self { eta, eps }
    }

    pub fn from_array(q: [f64; 4]) -> Self {
        Self::new(q[0], [q[1], q[2], q[3]])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.eta, self.eps[0], self.eps[1], self.eps[2]]
    }

    pub fn norm(self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.eta / n, self.eps.map(|v| v / n))
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.eta, self.eps.map(|v| -v))
    }

    /// Inverse of a unit quaternion.
    pub fn inverse(self) -> Self {
        let n2 = self.norm().powi(2);
        let c = self.conjugate();
        Self::new(c.eta / n2, c.eps.map(|v| v / n2))
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Self {
        Self::new(-self.eta, self.eps.map(|v| -v))
    }
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Hamilton product `p ⊗ q`.
pub fn hamilton(p: Quaternion, q: Quaternion) -> Quaternion {
    let c = cross(p.eps, q.eps);
    Quaternion::new(
        p.eta * q.eta - dot3(p.eps, q.eps),
        [0, 1, 2].map(|i| p.eta * q.eps[i] + q.eta * p.eps[i] + c[i]),
    )
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyParams {
    /// Principal moments of inertia (kg·m²).
    pub inertia: [f64; 3],
    /// Sampling period (s).
    pub ts: f64,
    pub q0: [f64; 4],
    pub omega0: [f64; 3],
    pub q_desired: [f64; 4],
}

impl Default for RigidBodyParams {
    fn default() -> Self {
        Self {
            inertia: [0.5, 1.5, 1.0],
            ts: 0.05,
            q0: [0.95, -0.04, 0.17, 0.25],
            omega0: [0.0; 3],
            q_desired: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeState {
    pub q: Quaternion,
    pub omega: [f64; 3],
}

/// One discrete step of the exponential-map quaternion update and explicit
/// Euler rigid-body dynamics.
pub fn attitude_step(state: AttitudeState, torque: [f64; 3], params: &RigidBodyParams) -> AttitudeState {
    let (w, ts, j) = (state.omega, params.ts, params.inertia);
    let theta = dot3(w, w).sqrt() * ts;
    let k = 0.5 * ts * sinc(0.5 * theta);
    let dq = Quaternion::new((0.5 * theta).cos(), w.map(|v| k * v));
    let q = hamilton(dq, state.q).normalized();
    let jw = [j[0] * w[0], j[1] * w[1], j[2] * w[2]];
    let gyro = cross(w, jw);
    let omega = [0, 1, 2].map(|i| w[i] + ts * (torque[i] - gyro[i]) / j[i]);
    AttitudeState { q, omega }
}

/// Attitude error vector part and body rate: `(ε̃, ω)` with `η̃ ≥ 0`.
pub fn attitude_output(state: AttitudeState, q_desired: Quaternion) -> [f64; 6] {
    let mut e = hamilton(q_desired.inverse(), state.q);
    if e.eta < 0.0 {
        e = -e;
    }
    [e.eps[0], e.eps[1], e.eps[2], state.omega[0], state.omega[1], state.omega[2]]
}

/// Additive output disturbance `A cos(ω k)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Disturbance {
    pub amplitude: f64,
    pub frequency: f64,
}

impl Disturbance {
    pub fn at(&self, k: usize) -> f64 {
        if self.amplitude == 0.0 {
            0.0
        } else {
            self.amplitude * (self.frequency * k as f64).cos()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantKind {
    /// Stable second-order SISO with feedthrough.
    SisoStable,
    /// Unstable nonminimum-phase SISO, optional output sinusoid.
    SisoUnstable(Disturbance),
    /// Three outputs, two inputs, one unstable mode, feedthrough.
    MimoUnstable,
    /// Stable backbone plus noncross squares.
    NarxQuadratic,
    /// Stable backbone plus `y·u²` cross terms.
    NarxCubicCross,
    /// Static cubic input map feeding the unstable SISO backbone.
    Hammerstein { alpha: f64, beta: f64 },
    /// Quaternion attitude dynamics with torque input.
    RigidBody(RigidBodyParams),
}

impl PlantKind {
    pub fn outputs(&self) -> usize {
        match self {
            PlantKind::MimoUnstable => 3,
            PlantKind::RigidBody(_) => 6,
            _ => 1,
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            PlantKind::MimoUnstable => 2,
            PlantKind::RigidBody(_) => 3,
            _ => 1,
        }
    }
}

pub fn mimo_matrices() -> (Vec<Mat>, Vec<Mat>) {
    let a = vec![Mat::diag(&[1.7, 1.473, 1.8]), Mat::diag(&[-0.6, -0.7225, -0.81])];
    let b = vec![
        Mat::from_rows(&[vec![0.4, -0.1], vec![0.2, 0.3], vec![-0.1, 0.5]]),
        Mat::from_rows(&[vec![0.1, 0.0], vec![-0.05, 0.2], vec![0.0, -0.1]]),
        Mat::from_rows(&[vec![0.0, 0.05], vec![0.0, 0.0], vec![0.08, 0.0]]),
    ];
    (a, b)
}

/// `w = u + αu² + βu³`.
pub fn hammerstein_map(u: f64, alpha: f64, beta: f64) -> f64 {
    u + alpha * u * u + beta * u * u * u
}

/// A plant instance with its own clock. `step(u, k)` applies `u_k` and
/// returns `y_k`; `k` starts at 1 and increases by one per call.
#[derive(Debug, Clone)]
pub struct Plant {
    kind: PlantKind,
    clock: usize,
    /// `y_{k-1}, y_{k-2}`.
    y_hist: VecDeque<Vec<f64>>,
    /// `u_{k-1}, u_{k-2}` (or `w` for the Hammerstein plant).
    u_hist: VecDeque<Vec<f64>>,
    attitude: Option<AttitudeState>,
    mimo: Option<(Vec<Mat>, Vec<Mat>)>,
}

impl Plant {
    pub fn new(kind: PlantKind) -> Self {
        let (p, m) = (kind.outputs(), kind.inputs());
        let attitude = match &kind {
            PlantKind::RigidBody(params) => Some(AttitudeState {
                q: Quaternion::from_array(params.q0).normalized(),
                omega: params.omega0,
            }),
            _ => None,
        };
        let mimo = matches!(kind, PlantKind::MimoUnstable).then(mimo_matrices);
        Self {
            kind,
            clock: 0,
            y_hist: VecDeque::from(vec![vec![0.0; p]; 2]),
            u_hist: VecDeque::from(vec![vec![0.0; m]; 2]),
            attitude,
            mimo,
        }
    }

    pub fn kind(&self) -> &PlantKind {
        &self.kind
    }

    pub fn outputs(&self) -> usize {
        self.kind.outputs()
    }

    pub fn inputs(&self) -> usize {
        self.kind.inputs()
    }

    /// Index of the last simulated step (0 before the first call).
    pub fn clock(&self) -> usize {
        self.clock
    }

    pub fn attitude(&self) -> Option<AttitudeState> {
        self.attitude
    }

    /// Output at the initial instant `k = 0`.
    pub fn initial_output(&self) -> Vec<f64> {
        match (&self.kind, self.attitude) {
            (PlantKind::RigidBody(params), Some(_)) => {
                let st = AttitudeState {
                    q: Quaternion::from_array(params.q0).normalized(),
                    omega: params.omega0,
                };
                attitude_output(st, Quaternion::from_array(params.q_desired).normalized()).to_vec()
            }
            _ => vec![0.0; self.outputs()],
        }
    }

    pub fn step(&mut self, u: &[f64], k: usize) -> Result<Vec<f64>, PlantError> {
        if k != self.clock + 1 {
            return Err(PlantError::ClockSkew { expected: self.clock + 1, found: k });
        }
        if u.len() != self.inputs() {
            return Err(PlantError::DimensionMismatch { expected: self.inputs(), found: u.len() });
        }
        let (y1, y2) = (&self.y_hist[0], &self.y_hist[1]);
        let (u1, u2) = (&self.u_hist[0], &self.u_hist[1]);
        let mut stored_input = u.to_vec();
        let y = match &self.kind {
            PlantKind::SisoStable => vec![1.5 * y1[0] - 0.7 * y2[0] + 0.5 * u[0] + 0.3 * u1[0]],
            PlantKind::SisoUnstable(dist) => {
                vec![2.0 * y1[0] - 1.01 * y2[0] + 0.5 * u1[0] - 0.65 * u2[0] + dist.at(k)]
            }
            PlantKind::NarxQuadratic => vec![
                1.5 * y1[0] - 0.7 * y2[0] + 0.5 * u[0] + 0.3 * u1[0] - 0.10 * y1[0].powi(2)
                    - 0.05 * y2[0].powi(2)
                    + 0.20 * u[0].powi(2)
                    + 0.10 * u1[0].powi(2),
            ],
            PlantKind::NarxCubicCross => vec![
                1.5 * y1[0] - 0.7 * y2[0] + 0.5 * u[0] + 0.3 * u1[0] + 6.5 * y1[0] * u1[0].powi(2)
                    - 3.85 * y2[0] * u2[0].powi(2),
            ],
            PlantKind::Hammerstein { alpha, beta } => {
                stored_input = vec![hammerstein_map(u[0], *alpha, *beta)];
                vec![2.0 * y1[0] - 1.01 * y2[0] + 0.5 * u1[0] - 0.65 * u2[0]]
            }
            PlantKind::MimoUnstable => {
                let (a, b) = self.mimo.as_ref().expect("mimo matrices");
                let mut y = vec![0.0; 3];
                let terms = [
                    a[0].matvec(y1),
                    a[1].matvec(y2),
                    b[0].matvec(u),
                    b[1].matvec(u1),
                    b[2].matvec(u2),
                ];
                for t in terms {
                    for (acc, v) in y.iter_mut().zip(t.expect("mimo dims")) {
                        *acc += v;
                    }
                }
                y
            }
            PlantKind::RigidBody(params) => {
                let st = attitude_step(self.attitude.expect("attitude state"), [u[0], u[1], u[2]], params);
                self.attitude = Some(st);
                attitude_output(st, Quaternion::from_array(params.q_desired).normalized()).to_vec()
            }
        };
        self.y_hist.push_front(y.clone());
        self.y_hist.truncate(2);
        self.u_hist.push_front(stored_input);
        self.u_hist.truncate(2);
        self.clock = k;
        Ok(y)
    }
}

/// `y + ν` with `ν ~ N(0, σ² I)`.
pub fn add_noise<R: Rng + ?Sized>(y: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return y.to_vec();
    }
    y.iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
