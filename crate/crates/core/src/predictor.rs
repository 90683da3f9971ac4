//! Finite-horizon affine predictor `Y = S + G U` from frozen LPV coefficients.

use crate::features::{FeatureError, RegressorWindow};
use crate::linalg::{first_rows_selector, kron, shift_matrix, LinalgError, Mat};
use crate::lpv::LpvCoefficients;

#[derive(Debug, Clone, PartialEq)]
pub struct StackedPredictor {
    pub horizon: usize,
    pub outputs: usize,
    pub inputs: usize,
    /// Free response, length `pN`.
    pub s: Vec<f64>,
    /// Forced response, `pN × mN`, block lower triangular.
    pub g: Mat,
}

/// Horizon operators before the triangular solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzOperators {
    pub t_y: Mat,
    pub t_u: Mat,
    pub sigma: Vec<f64>,
}

/// `N×i` matrix selecting the first rows; for `i > N` the selected block is
/// truncated to the horizon.
fn init_selector(n: usize, i: usize) -> Mat {
    if i <= n {
        first_rows_selector(n, i).expect("1 ≤ i ≤ N")
    } else {
        Mat::from_fn(n, i, |r, c| if r == c { 1.0 } else { 0.0 })
    }
}

/// Assembles `T_y = Σ S_i ⊗ A_i`, `T_u = Σ S_i ⊗ B_i` and the offset `σ`
/// from measured history given newest first: `y_recent = (y_k, y_{k-1}, …)`,
/// `u_recent = (u_k, u_{k-1}, …)`, each at least `ℓ` long.
pub fn toeplitz_operators(
    coeffs: &LpvCoefficients,
    y_recent: &[&[f64]],
    u_recent: &[&[f64]],
    horizon: usize,
) -> Result<ToeplitzOperators, LinalgError> {
    let (p, m, lag) = (coeffs.outputs(), coeffs.inputs(), coeffs.lag());
    if horizon == 0 {
        return Err(LinalgError::InvalidDimension("horizon must be at least 1".into()));
    }
    if y_recent.len() < lag || u_recent.len() < lag {
        return Err(LinalgError::DimensionMismatch {
            expected: lag,
            found: y_recent.len().min(u_recent.len()),
        });
    }
    if let Some(v) = y_recent.iter().take(lag).find(|v| v.len() != p) {
        return Err(LinalgError::DimensionMismatch { expected: p, found: v.len() });
    }
    if let Some(v) = u_recent.iter().take(lag).find(|v| v.len() != m) {
        return Err(LinalgError::DimensionMismatch { expected: m, found: v.len() });
    }

    let n = horizon;
    let mut t_y = Mat::zeros(p * n, p * n);
    for (i, a) in coeffs.a.iter().enumerate() {
        t_y.add_assign_scaled(&kron(&shift_matrix(n, i + 1), a), 1.0)?;
    }
    let mut t_u = Mat::zeros(p * n, m * n);
    for (i, b) in coeffs.b.iter().enumerate() {
        t_u.add_assign_scaled(&kron(&shift_matrix(n, i), b), 1.0)?;
    }

    let mut sigma = kron(&Mat::column(&vec![1.0; n]), &Mat::column(&coeffs.c)).as_slice().to_vec();
    for i in 1..=lag {
        let f = init_selector(n, i);
        // Oldest first: (y_{k+1-i}, …, y_k).
        let y_init: Vec<f64> = y_recent[..i].iter().rev().flat_map(|v| v.iter().copied()).collect();
        let u_init: Vec<f64> = u_recent[..i].iter().rev().flat_map(|v| v.iter().copied()).collect();
        let ya = kron(&f, &coeffs.a[i - 1]).matvec(&y_init)?;
        let ub = kron(&f, &coeffs.b[i]).matvec(&u_init)?;
        for ((s, a), b) in sigma.iter_mut().zip(ya).zip(ub) {
            *s += a + b;
        }
    }
    Ok(ToeplitzOperators { t_y, t_u, sigma })
}

impl StackedPredictor {
    /// Builds the predictor from explicit newest-first history.
    pub fn build(
        coeffs: &LpvCoefficients,
        y_recent: &[&[f64]],
        u_recent: &[&[f64]],
        horizon: usize,
    ) -> Result<Self, LinalgError> {
        let ops = toeplitz_operators(coeffs, y_recent, u_recent, horizon)?;
        let (p, m, lag) = (coeffs.outputs(), coeffs.inputs(), coeffs.lag());
        let n = horizon;
        // Solve (I − T_y)[S | G] = [σ | T_u] one block row at a time; block
        // row j only couples to rows j−1, …, j−ℓ.
        let width = 1 + m * n;
        let mut x = Mat::zeros(p * n, width);
        for j in 0..n {
            for r in 0..p {
                let row = j * p + r;
                x[(row, 0)] = ops.sigma[row];
                for c in 0..m * n {
                    x[(row, 1 + c)] = ops.t_u[(row, c)];
                }
            }
            for l in j.saturating_sub(lag)..j {
                for r in 0..p {
                    let row = j * p + r;
                    for t in 0..p {
                        let coef = ops.t_y[(row, l * p + t)];
                        if coef == 0.0 {
                            continue;
                        }
                        for c in 0..width {
                            let v = x[(l * p + t, c)];
                            x[(row, c)] += coef * v;
                        }
                    }
                }
            }
        }
        let s = (0..p * n).map(|row| x[(row, 0)]).collect();
        let g = x.block(0, 1, p * n, m * n);
        Ok(Self { horizon: n, outputs: p, inputs: m, s, g })
    }

    /// Builds the predictor from a window that has just received `y_k`.
    pub fn from_window(
        coeffs: &LpvCoefficients,
        window: &RegressorWindow,
        horizon: usize,
    ) -> Result<Self, PredictorError> {
        if !window.has_prediction_history() {
            return Err(PredictorError::Feature(FeatureError::WindowNotFull));
        }
        let ys: Vec<&[f64]> = window.outputs().collect();
        let us: Vec<&[f64]> = window.inputs().collect();
        Ok(Self::build(coeffs, &ys, &us, horizon)?)
    }

    /// `S + G U`.
    pub fn predict(&self, u: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let gu = self.g.matvec(u)?;
        Ok(self.s.iter().zip(gu).map(|(a, b)| a + b).collect())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictorError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{naive_recursion, random_coefficients};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: &[f64], b: &[f64], c: f64) -> LpvCoefficients {
        LpvCoefficients {
            c: vec![c],
            a: a.iter().map(|v| Mat::diag(&[*v])).collect(),
            b: b.iter().map(|v| Mat::diag(&[*v])).collect(),
        }
    }

    #[test]
    fn first_order_hand_unrolled() {
        let coeffs = scalar(&[0.5], &[1.0, 0.0], 0.0);
        let pred = StackedPredictor::build(&coeffs, &[&[1.0]], &[&[0.0]], 2).unwrap();
        assert_eq!(pred.s, vec![0.5, 0.25]);
        assert_eq!(pred.g, Mat::from_rows(&[vec![1.0, 0.0], vec![0.5, 1.0]]));
        assert_eq!(pred.predict(&[1.0, 0.0]).unwrap(), vec![1.5, 0.75]);
        assert_eq!(pred.predict(&[0.0, 0.0]).unwrap(), pred.s);
    }

    #[test]
    fn no_autoregression_gives_t_u() {
        let coeffs = scalar(&[0.0, 0.0], &[0.5, 0.3, -0.2], 0.1);
        let ops = toeplitz_operators(&coeffs, &[&[1.0], &[2.0]], &[&[3.0], &[4.0]], 4).unwrap();
        let pred = StackedPredictor::build(&coeffs, &[&[1.0], &[2.0]], &[&[3.0], &[4.0]], 4).unwrap();
        assert_eq!(pred.g, ops.t_u);
        // y1 = C + B1 u_k + B2 u_{k-1}; y2 = C + B2 u_k; y3 = y4 = C.
        let expected = [0.1 + 0.3 * 3.0 - 0.2 * 4.0, 0.1 - 0.2 * 3.0, 0.1, 0.1];
        for (a, b) in pred.s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn one_step_without_feedthrough_is_measured_prediction() {
        let coeffs = scalar(&[1.5, -0.7], &[0.0, 0.3, 0.1], 0.2);
        let pred = StackedPredictor::build(&coeffs, &[&[1.0], &[-1.0]], &[&[0.5], &[2.0]], 1).unwrap();
        let exact = coeffs.one_step(&[&[1.0], &[-1.0]], &[&[0.0], &[0.5], &[2.0]]);
        assert_eq!(pred.s, exact);
        assert_eq!(pred.g.max_abs(), 0.0);
    }

    #[test]
    fn zero_horizon_rejected() {
        let coeffs = scalar(&[0.5], &[1.0, 0.0], 0.0);
        assert!(StackedPredictor::build(&coeffs, &[&[1.0]], &[&[0.0]], 0).is_err());
    }

    proptest! {
        #[test]
        fn stacked_matches_recursion(seed in 0u64..100_000, p in 1usize..=3, m in 1usize..=3, lag in 1usize..=4, n in 1usize..=30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs = random_coefficients(p, m, lag, &mut rng);
            let ys: Vec<Vec<f64>> = (0..lag).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let us: Vec<Vec<f64>> = (0..lag).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let u: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
            let ur: Vec<&[f64]> = us.iter().map(Vec::as_slice).collect();
            let pred = StackedPredictor::build(&coeffs, &yr, &ur, n).unwrap();
            let stacked = pred.predict(&u).unwrap();
            let naive = naive_recursion(&coeffs, &yr, &ur, &u, n);
            for (a, b) in stacked.iter().zip(&naive) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            // Diagonal blocks of G are B_0; strictly upper blocks vanish.
            for j in 0..n {
                for l in j..n {
                    let blk = pred.g.block(j * p, l * m, p, m);
                    if l == j {
                        prop_assert_eq!(&blk, &coeffs.b[0]);
                    } else {
                        prop_assert_eq!(blk.max_abs(), 0.0);
                    }
                }
            }
        }

        #[test]
        fn t_y_is_nilpotent(seed in 0u64..10_000, p in 1usize..=2, lag in 1usize..=3, n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs = random_coefficients(p, 1, lag, &mut rng);
            let ys: Vec<Vec<f64>> = vec![vec![0.0; p]; lag];
            let us: Vec<Vec<f64>> = vec![vec![0.0; 1]; lag];
            let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
            let ur: Vec<&[f64]> = us.iter().map(Vec::as_slice).collect();
            let ops = toeplitz_operators(&coeffs, &yr, &ur, n).unwrap();
            let mut pow = ops.t_y.clone();
            for _ in 1..n {
                pow = pow.matmul(&ops.t_y).unwrap();
            }
            prop_assert!(pow.norm_inf() <= 1e-10);
        }

        #[test]
        fn predict_is_affine(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs = random_coefficients(2, 2, 2, &mut rng);
            let ys = [vec![0.3, -0.1], vec![0.2, 0.4]];
            let us = [vec![0.1, 0.0], vec![-0.5, 0.5]];
            let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
            let ur: Vec<&[f64]> = us.iter().map(Vec::as_slice).collect();
            let pred = StackedPredictor::build(&coeffs, &yr, &ur, 5).unwrap();
            let u1: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u2: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sum: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + b).collect();
            let lhs: Vec<f64> = pred.predict(&sum).unwrap().iter().zip(pred.predict(&u2).unwrap()).map(|(a, b)| a - b).collect();
            let rhs = pred.g.matvec(&u1).unwrap();
            for (a, b) in lhs.iter().zip(&rhs) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
