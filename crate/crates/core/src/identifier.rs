//! Recursive least squares with exponential forgetting over the implicit
//! Kronecker regressor `φ_k = z_kᵀ ⊗ I_p`.

use thiserror::Error;

use crate::features::{phi_row_apply, FeatureError, KernelDictionary, Monomial, RegressorLayout};
use crate::linalg::{kron, LinalgError, Mat};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlsError {
    #[error("invalid RLS parameter: {0}")]
    InvalidParameter(String),
    #[error("inner p×p solve failed at step {step}: {source}")]
    InnerSolveFailure { step: usize, source: LinalgError },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("monomial '{0}' is not representable in the current dictionary")]
    UnresolvableMonomial(String),
}

impl From<FeatureError> for RlsError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::DimensionMismatch { expected, found } => {
                RlsError::DimensionMismatch { expected, found }
            }
            other => RlsError::InvalidParameter(other.to_string()),
        }
    }
}

/// Parameter estimate `θ = vec(Θ)` and covariance `P`.
#[derive(Debug, Clone)]
pub struct RlsState {
    theta: Vec<f64>,
    p_z: Mat,
    outputs: usize,
    lambda: f64,
    rho: f64,
    step: usize,
}

impl RlsState {
    /// `θ = θ₀`, `P = ρ⁻¹ I_d`. `outputs` is the output dimension `p`, and
    /// `θ₀.len()` must be a multiple of it.
    pub fn new(theta0: Vec<f64>, outputs: usize, rho: f64, lambda: f64) -> Result<Self, RlsError> {
        let mut problems = Vec::new();
        if !(rho > 0.0) || !rho.is_finite() {
            problems.push(format!("ridge must be positive and finite, got {rho}"));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            problems.push(format!("forgetting factor must lie in (0, 1], got {lambda}"));
        }
        if outputs == 0 || theta0.is_empty() || theta0.len() % outputs != 0 {
            problems.push(format!(
                "parameter length {} is not a positive multiple of p = {outputs}",
                theta0.len()
            ));
        }
        if !problems.is_empty() {
            return Err(RlsError::InvalidParameter(problems.join("; ")));
        }
        let d = theta0.len();
        Ok(Self {
            theta: theta0,
            p_z: Mat::identity(d / outputs).scale(1.0 / rho),
            outputs,
            lambda,
            rho,
            step: 0,
        })
    }

    /// Zero-initialized state of dimension `d`.
    pub fn zeros(d: usize, outputs: usize, rho: f64, lambda: f64) -> Result<Self, RlsError> {
        Self::new(vec![0.0; d], outputs, rho, lambda)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// The full `d × d` covariance `P_z ⊗ I_p`.
    pub fn covariance(&self) -> Mat {
        kron(&self.p_z, &Mat::identity(self.outputs))
    }

    /// The `n_z × n_z` factor `P_z` of the covariance.
    pub fn regressor_covariance(&self) -> &Mat {
        &self.p_z
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn forgetting(&self) -> f64 {
        self.lambda
    }

    pub fn ridge(&self) -> f64 {
        self.rho
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> usize {
        self.step
    }

    /// A-priori prediction `φ θ` with the current estimate.
    pub fn predict_prior(&self, z: &[f64]) -> Result<Vec<f64>, RlsError> {
        Ok(phi_row_apply(z, &self.theta, self.outputs)?)
    }

    /// One recursion with regressor `z` (length `n_z`) and measurement `y`.
    ///
    /// Every output shares `z`, so `P = P_z ⊗ I_p` holds from `P₀ = ρ⁻¹I`
    /// onwards and only `P_z` is stored. The inner matrix
    /// `I_p + φLφᵀ = (1 + zᵀL_z z) I_p` is factored through its scalar.
    pub fn update(&mut self, z: &[f64], y: &[f64]) -> Result<(), RlsError> {
        let p = self.outputs;
        let nz = self.p_z.rows();
        if z.len() != nz {
            return Err(RlsError::DimensionMismatch { expected: nz, found: z.len() });
        }
        if y.len() != p {
            return Err(RlsError::DimensionMismatch { expected: p, found: y.len() });
        }
        let inv_lambda = 1.0 / self.lambda;

        // k = L_z z.
        let k: Vec<f64> = (0..nz)
            .map(|i| inv_lambda * self.p_z.row(i).iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let s = 1.0 + z.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>();
        if !(s > 0.0) || !s.is_finite() {
            return Err(RlsError::InnerSolveFailure {
                step: self.step,
                source: LinalgError::NotPositiveDefinite { pivot: 0, value: s },
            });
        }

        let prior = self.predict_prior(z)?;
        // θ⁺ = θ + P⁺φᵀ e with P⁺φᵀ = (k ⊗ I_p) / s.
        for (j, kj) in k.iter().enumerate() {
            for c in 0..p {
                self.theta[j * p + c] += kj * (y[c] - prior[c]) / s;
            }
        }

        // P_z⁺ = L_z − k kᵀ / s, symmetrized.
        for i in 0..nz {
            for j in i..nz {
                let a = (self.p_z[(i, j)] + self.p_z[(j, i)]) * 0.5 * inv_lambda - k[i] * k[j] / s;
                self.p_z[(i, j)] = a;
                self.p_z[(j, i)] = a;
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Exponentially weighted regularized objective
/// `Σ_i λ^{n-1-i} ‖y_i − φ_i θ‖² + λ^n ρ ‖θ − θ₀‖²` over `n` rows, whose
/// minimizer is exactly the RLS estimate after `n` updates from `(θ₀, ρ⁻¹I)`.
pub fn weighted_objective(
    theta: &[f64],
    theta0: &[f64],
    rows: &[(Vec<f64>, Vec<f64>)],
    outputs: usize,
    lambda: f64,
    rho: f64,
) -> Result<f64, RlsError> {
    let n = rows.len();
    let mut j = 0.0;
    for (i, (z, y)) in rows.iter().enumerate() {
        let pred = phi_row_apply(z, theta, outputs)?;
        let r2: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
        j += lambda.powi((n - 1 - i) as i32) * r2;
    }
    let reg: f64 = theta.iter().zip(theta0).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(j + lambda.powi(n as i32) * rho * reg)
}

/// A known model term: output channel, monomial and its true value.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTerm {
    pub output: usize,
    pub monomial: Monomial,
    pub value: f64,
}

impl CoefficientTerm {
    /// Parses `(descriptor, value)` pairs for the first output channel.
    pub fn parse_siso(terms: &[(&str, f64)]) -> Result<Vec<Self>, RlsError> {
        terms
            .iter()
            .map(|(text, value)| {
                Ok(Self {
                    output: 0,
                    monomial: Monomial::parse(text)
                        .map_err(|e| RlsError::UnresolvableMonomial(format!("{text}: {e}")))?,
                    value: *value,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedCoefficient {
    pub descriptor: String,
    pub theta_index: usize,
    pub estimate: f64,
    pub truth: f64,
}

impl MatchedCoefficient {
    pub fn abs_error(&self) -> f64 {
        (self.estimate - self.truth).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredCoefficients {
    pub matched: Vec<MatchedCoefficient>,
    /// Euclidean norm of every θ entry not claimed by a matched term.
    pub residual_norm: f64,
}

impl RecoveredCoefficients {
    pub fn max_abs_error(&self) -> f64 {
        self.matched.iter().map(MatchedCoefficient::abs_error).fold(0.0, f64::max)
    }
}

/// Locates each term in the canonical `z` layout and reads its estimate from
/// `θ`. A monomial that occurs in several `z` coordinates resolves to the
/// first occurrence.
pub fn recover_coefficients(
    theta: &[f64],
    layout: &RegressorLayout,
    dict: &KernelDictionary,
    terms: &[CoefficientTerm],
) -> Result<RecoveredCoefficients, RlsError> {
    if theta.len() != layout.d() {
        return Err(RlsError::DimensionMismatch { expected: layout.d(), found: theta.len() });
    }
    let monos = layout
        .z_monomials(dict)
        .ok_or_else(|| RlsError::UnresolvableMonomial("dictionary has non-monomial features".into()))?;
    let p = layout.p;
    let mut claimed = vec![false; theta.len()];
    let mut matched = Vec::with_capacity(terms.len());
    for term in terms {
        let descriptor = if p == 1 {
            term.monomial.to_string()
        } else {
            format!("{}@{}", term.monomial, term.output + 1)
        };
        if term.output >= p {
            return Err(RlsError::UnresolvableMonomial(descriptor));
        }
        let j = monos
            .iter()
            .position(|m| *m == term.monomial)
            .ok_or_else(|| RlsError::UnresolvableMonomial(descriptor.clone()))?;
        let idx = j * p + term.output;
        if claimed[idx] {
            return Err(RlsError::InvalidParameter(format!("term '{descriptor}' listed twice")));
        }
        claimed[idx] = true;
        matched.push(MatchedCoefficient {
            descriptor,
            theta_index: idx,
            estimate: theta[idx],
            truth: term.value,
        });
    }
    let residual_norm = theta
        .iter()
        .zip(&claimed)
        .filter(|(_, c)| !**c)
        .map(|(t, _)| t * t)
        .sum::<f64>()
        .sqrt();
    Ok(RecoveredCoefficients { matched, residual_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{window_dim, KernelKind};
    use crate::linalg::{cholesky, kron};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_values() {
        let s = RlsState::zeros(2, 1, 1.0, 1.0).unwrap();
        assert_eq!(s.covariance(), Mat::identity(2));
        assert_eq!(s.theta(), &[0.0, 0.0]);
        let s = RlsState::zeros(3, 1, 1e-9, 1.0).unwrap();
        assert!((s.covariance()[(1, 1)] - 1e9).abs() <= 1e9 * f64::EPSILON);
        assert!(matches!(RlsState::zeros(2, 1, 1.0, 1.1), Err(RlsError::InvalidParameter(_))));
        assert!(matches!(RlsState::zeros(2, 1, 0.0, 1.0), Err(RlsError::InvalidParameter(_))));
        assert!(matches!(RlsState::zeros(3, 2, 1.0, 1.0), Err(RlsError::InvalidParameter(_))));
    }

    #[test]
    fn scalar_hand_update() {
        let mut s = RlsState::zeros(1, 1, 1.0, 1.0).unwrap();
        s.update(&[1.0], &[2.0]).unwrap();
        assert!((s.covariance()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s.theta()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_regressor_only_inflates_covariance() {
        let mut s = RlsState::new(vec![0.3, -0.2, 0.1, 0.4], 2, 2.0, 0.9).unwrap();
        let before = s.clone();
        s.update(&[0.0, 0.0], &[5.0, -1.0]).unwrap();
        assert_eq!(s.theta(), before.theta());
        let expected = before.covariance().scale(1.0 / 0.9);
        assert!(s.covariance().sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn predict_prior_cases() {
        let s = RlsState::zeros(3, 1, 1.0, 1.0).unwrap();
        assert_eq!(s.predict_prior(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0]);
        let s = RlsState::new(vec![0.5, 7.0, -1.0], 1, 1.0, 1.0).unwrap();
        assert_eq!(s.predict_prior(&[0.0, 1.0, 0.0]).unwrap(), vec![7.0]);
        assert!(s.predict_prior(&[1.0]).is_err());
    }

    /// Explicit-matrix RLS used as an independent reference.
    fn explicit_update(theta: &[f64], p_mat: &Mat, z: &[f64], y: &[f64], p: usize, lambda: f64) -> (Vec<f64>, Mat) {
        let phi = kron(&Mat::from_row_major(1, z.len(), z.to_vec()).unwrap(), &Mat::identity(p));
        let l = p_mat.scale(1.0 / lambda);
        let lphit = l.matmul(&phi.transpose()).unwrap();
        let inner = Mat::identity(p).add(&phi.matmul(&lphit).unwrap()).unwrap();
        let inv = invert_small(&inner);
        let p_new = l.sub(&lphit.matmul(&inv).unwrap().matmul(&phi.matmul(&l).unwrap()).unwrap()).unwrap();
        let pred = phi.matvec(theta).unwrap();
        let e: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let corr = p_new.matmul(&phi.transpose()).unwrap().matvec(&e).unwrap();
        let th: Vec<f64> = theta.iter().zip(&corr).map(|(a, b)| a + b).collect();
        (th, p_new)
    }

    fn invert_small(a: &Mat) -> Mat {
        let n = a.rows();
        let mut aug = Mat::zeros(n, 2 * n);
        aug.set_block(0, 0, a);
        aug.set_block(0, n, &Mat::identity(n));
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| aug[(i, col)].abs().total_cmp(&aug[(j, col)].abs())).unwrap();
            for c in 0..2 * n {
                let t = aug[(col, c)];
                aug[(col, c)] = aug[(piv, c)];
                aug[(piv, c)] = t;
            }
            let d = aug[(col, col)];
            for c in 0..2 * n {
                aug[(col, c)] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[(r, col)];
                    for c in 0..2 * n {
                        aug[(r, c)] -= f * aug[(col, c)];
                    }
                }
            }
        }
        aug.block(0, n, n, n)
    }

    #[test]
    fn implicit_update_matches_explicit_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 1..=3 {
            let nz = 4;
            let mut s = RlsState::zeros(p * nz, p, 0.5, 0.97).unwrap();
            let mut theta = s.theta().to_vec();
            let mut pm = s.covariance();
            for _ in 0..25 {
                let z: Vec<f64> = (0..nz).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
                s.update(&z, &y).unwrap();
                (theta, pm) = explicit_update(&theta, &pm, &z, &y, p, 0.97);
            }
            for (a, b) in s.theta().iter().zip(&theta) {
                assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
            assert!(s.covariance().sub(&pm).unwrap().max_abs() < 1e-9 * (1.0 + pm.max_abs()));
        }
    }

    #[test]
    fn objective_is_minimized_by_rls() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, nz, lambda, rho) = (2, 3, 0.95, 0.1);
        let mut s = RlsState::zeros(p * nz, p, rho, lambda).unwrap();
        let mut rows = Vec::new();
        for _ in 0..12 {
            let z: Vec<f64> = (0..nz).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            s.update(&z, &y).unwrap();
            rows.push((z, y));
        }
        let th0 = vec![0.0; p * nz];
        let best = weighted_objective(s.theta(), &th0, &rows, p, lambda, rho).unwrap();
        for _ in 0..50 {
            let pert: Vec<f64> = s.theta().iter().map(|t| t + 1e-3 * rng.random_range(-1.0..1.0)).collect();
            assert!(weighted_objective(&pert, &th0, &rows, p, lambda, rho).unwrap() >= best);
        }
    }

    fn linear_siso() -> (RegressorLayout, KernelDictionary) {
        let dict = KernelDictionary::linear(window_dim(1, 1, 2));
        (RegressorLayout::new(1, 1, 2, &dict), dict)
    }

    #[test]
    fn recovery_reads_canonical_positions() {
        let (layout, dict) = linear_siso();
        let mut theta = vec![0.0; layout.d()];
        theta[1] = 1.5;
        theta[6] = -0.1;
        theta[30] = 0.25;
        let terms = CoefficientTerm::parse_siso(&[("y1", 1.5), ("y1^2", -0.1), ("1", 0.0)]).unwrap();
        let rec = recover_coefficients(&theta, &layout, &dict, &terms).unwrap();
        assert_eq!(rec.matched[0].theta_index, 1);
        assert_eq!(rec.matched[1].theta_index, 6);
        assert_eq!(rec.max_abs_error(), 0.0);
        assert!((rec.residual_norm - 0.25).abs() < 1e-15);
    }

    #[test]
    fn recovery_all_zero() {
        let (layout, dict) = linear_siso();
        let terms = CoefficientTerm::parse_siso(&[("y1", 0.0), ("u0^2", 0.0)]).unwrap();
        let rec = recover_coefficients(&vec![0.0; layout.d()], &layout, &dict, &terms).unwrap();
        assert!(rec.matched.iter().all(|m| m.estimate == 0.0));
        assert_eq!(rec.residual_norm, 0.0);
    }

    #[test]
    fn recovery_unresolvable() {
        let (layout, dict) = linear_siso();
        let terms = CoefficientTerm::parse_siso(&[("y1*u1^2", 6.5)]).unwrap();
        assert!(matches!(
            recover_coefficients(&vec![0.0; layout.d()], &layout, &dict, &terms),
            Err(RlsError::UnresolvableMonomial(_))
        ));
        let rbf = KernelDictionary::new(
            KernelKind::Rbf { centers: vec![vec![0.0; 5]], width: 1.0 },
            5,
        )
        .unwrap();
        let layout = RegressorLayout::new(1, 1, 2, &rbf);
        let terms = CoefficientTerm::parse_siso(&[("y1", 1.0)]).unwrap();
        assert!(recover_coefficients(&vec![0.0; layout.d()], &layout, &rbf, &terms).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn covariance_stays_symmetric_pd(seed in 0u64..1000, forget in prop::sample::select(vec![0.999, 1.0])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, nz) = (1 + (seed % 2) as usize, 5);
            let mut s = RlsState::zeros(p * nz, p, 1e-2, forget).unwrap();
            for _ in 0..5000 {
                let z: Vec<f64> = (0..nz).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
                s.update(&z, &y).unwrap();
            }
            let pm = s.covariance();
            prop_assert!(pm.sub(&pm.transpose()).unwrap().norm_inf() <= 1e-10);
            prop_assert!(cholesky(&pm, 0.0).is_ok());
        }
    }
}
