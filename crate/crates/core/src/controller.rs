//! Quadratic tracking cost over the stacked predictor and its closed-form
//! minimizer via Cholesky.

use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky, kron, norm2, solve_lower, solve_upper_transposed, LinalgError, LowerTriangular, Mat};
use crate::predictor::StackedPredictor;

/// How the first input increment `u_{1|k} − u_k` enters the linear term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncrementSeam {
    /// Gradient of the full cost, including `−Dᵀ R_u d_k`.
    #[default]
    Exact,
    /// `h = Gᵀ Q_y (S − R)` only; the seam to the applied input is ignored.
    Dropped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlWeights {
    pub q_y: Mat,
    pub r_u: Mat,
}

impl ControlWeights {
    /// `Q_y = I_N ⊗ W_y`, `R_u = I_N ⊗ W_u`.
    pub fn per_step(w_y: &Mat, w_u: &Mat, horizon: usize) -> Result<Self, LinalgError> {
        if !w_y.is_square() || !w_u.is_square() {
            return Err(LinalgError::InvalidDimension("weights must be square".into()));
        }
        if horizon == 0 {
            return Err(LinalgError::InvalidDimension("horizon must be at least 1".into()));
        }
        let sym_y = w_y.symmetrized()?;
        if sym_y.sub(w_y)?.max_abs() > 1e-12 * (1.0 + w_y.max_abs()) {
            return Err(LinalgError::InvalidDimension("output weight must be symmetric".into()));
        }
        cholesky(&sym_y, 1e-12 * (1.0 + sym_y.max_abs()))?;
        cholesky(w_u, 0.0)?;
        let eye = Mat::identity(horizon);
        Ok(Self { q_y: kron(&eye, w_y), r_u: kron(&eye, w_u) })
    }

    /// `Q_y = q·I`, `R_u = ρ_u·I`.
    pub fn scalar(q: f64, rho_u: f64, p: usize, m: usize, horizon: usize) -> Result<Self, LinalgError> {
        Self::per_step(&Mat::identity(p).scale(q), &Mat::identity(m).scale(rho_u), horizon)
    }
}

/// `mN × mN` block bidiagonal first-difference operator.
pub fn difference_operator(horizon: usize, m: usize) -> Mat {
    let mut d = Mat::identity(horizon * m);
    for j in 1..horizon {
        for c in 0..m {
            d[(j * m + c, (j - 1) * m + c)] = -1.0;
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub u_star: Vec<f64>,
    pub u_next: Vec<f64>,
    /// `max L_ii / min L_ii` of the Cholesky factor of `H`.
    pub h_cond_proxy: f64,
    pub cost_value: f64,
    /// Diagonal shift actually added to `H` before factoring.
    pub jitter_used: f64,
}

/// `H`, `h` and `J₀` such that `J(U) = ½UᵀHU + hᵀU + J₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub hessian: Mat,
    pub gradient: Vec<f64>,
    pub offset: f64,
}

fn check_dims(pred: &StackedPredictor, weights: &ControlWeights, r_ref: &[f64], u_prev: &[f64]) -> Result<(), LinalgError> {
    let (pn, mn) = (pred.outputs * pred.horizon, pred.inputs * pred.horizon);
    for (expected, found) in [
        (pn, r_ref.len()),
        (pred.inputs, u_prev.len()),
        (pn, weights.q_y.rows()),
        (mn, weights.r_u.rows()),
    ] {
        if expected != found {
            return Err(LinalgError::DimensionMismatch { expected, found });
        }
    }
    Ok(())
}

fn seam_vector(u_prev: &[f64], mn: usize) -> Vec<f64> {
    let mut d = vec![0.0; mn];
    d[..u_prev.len()].copy_from_slice(u_prev);
    d
}

/// Expands the tracking cost into `(H, h, J₀)`; with [`IncrementSeam::Exact`]
/// the constant also carries `½ d_kᵀ R_u d_k`.
pub fn quadratic_form(
    pred: &StackedPredictor,
    weights: &ControlWeights,
    r_ref: &[f64],
    u_prev: &[f64],
    seam: IncrementSeam,
) -> Result<QuadraticForm, LinalgError> {
    check_dims(pred, weights, r_ref, u_prev)?;
    let mn = pred.inputs * pred.horizon;
    let d = difference_operator(pred.horizon, pred.inputs);
    let qg = weights.q_y.matmul(&pred.g)?;
    let rd = weights.r_u.matmul(&d)?;
    let hessian = pred.g.tr_matmul(&qg)?.add(&d.tr_matmul(&rd)?)?.symmetrized()?;

    let e0: Vec<f64> = pred.s.iter().zip(r_ref).map(|(s, r)| s - r).collect();
    let mut gradient = qg.tr_matvec(&e0)?;
    let q_e0 = weights.q_y.matvec(&e0)?;
    let mut offset = 0.5 * e0.iter().zip(&q_e0).map(|(a, b)| a * b).sum::<f64>();
    if seam == IncrementSeam::Exact {
        let dk = seam_vector(u_prev, mn);
        let r_dk = weights.r_u.matvec(&dk)?;
        for (g, v) in gradient.iter_mut().zip(d.tr_matvec(&r_dk)?) {
            *g -= v;
        }
        offset += 0.5 * dk.iter().zip(&r_dk).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(QuadraticForm { hessian, gradient, offset })
}

/// Evaluates the tracking cost directly from its definition.
pub fn tracking_cost(
    pred: &StackedPredictor,
    weights: &ControlWeights,
    r_ref: &[f64],
    u_prev: &[f64],
    seam: IncrementSeam,
    u: &[f64],
) -> Result<f64, LinalgError> {
    check_dims(pred, weights, r_ref, u_prev)?;
    let y = pred.predict(u)?;
    let e: Vec<f64> = y.iter().zip(r_ref).map(|(a, b)| a - b).collect();
    let mut du = difference_operator(pred.horizon, pred.inputs).matvec(u)?;
    if seam == IncrementSeam::Exact {
        for (a, b) in du.iter_mut().zip(u_prev) {
            *a -= b;
        }
    }
    let qe = weights.q_y.matvec(&e)?;
    let rdu = weights.r_u.matvec(&du)?;
    Ok(0.5 * e.iter().zip(&qe).map(|(a, b)| a * b).sum::<f64>()
        + 0.5 * du.iter().zip(&rdu).map(|(a, b)| a * b).sum::<f64>())
}

/// Factors `H + εI` starting from `ε = jitter`. When rounding makes the
/// factorization fail, `ε` is raised in decades from `n·eps·(1 + ‖H‖_∞)`
/// for up to nine attempts before the error is returned.
pub fn factor_hessian(h: &Mat, jitter: f64) -> Result<(LowerTriangular, f64), LinalgError> {
    let first = match cholesky(h, jitter) {
        Ok(l) => return Ok((l, jitter)),
        Err(e @ LinalgError::NotPositiveDefinite { .. }) => e,
        Err(e) => return Err(e),
    };
    let floor = h.rows() as f64 * f64::EPSILON * (1.0 + h.norm_inf());
    let mut last = first;
    for j in 0..9 {
        let eps = jitter.max(floor * 10f64.powi(j));
        match cholesky(h, eps) {
            Ok(l) => return Ok((l, eps)),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Minimizes the tracking cost and returns the receding-horizon input.
pub fn solve_step(
    pred: &StackedPredictor,
    weights: &ControlWeights,
    r_ref: &[f64],
    u_prev: &[f64],
    jitter: f64,
    seam: IncrementSeam,
) -> Result<ControlSolution, LinalgError> {
    let form = quadratic_form(pred, weights, r_ref, u_prev, seam)?;
    let (l, jitter_used) = factor_hessian(&form.hessian, jitter)?;
    let neg_h: Vec<f64> = form.gradient.iter().map(|v| -v).collect();
    let z = solve_lower(&l, &neg_h)?;
    let u_star = solve_upper_transposed(&l, &z)?;
    let hu = form.hessian.matvec(&u_star)?;
    let cost_value = 0.5 * u_star.iter().zip(&hu).map(|(a, b)| a * b).sum::<f64>()
        + form.gradient.iter().zip(&u_star).map(|(a, b)| a * b).sum::<f64>()
        + form.offset;
    Ok(ControlSolution {
        u_next: u_star[..pred.inputs].to_vec(),
        h_cond_proxy: l.diag_ratio(),
        cost_value,
        u_star,
        jitter_used,
    })
}

/// `‖H U + h‖₂` for a candidate minimizer.
pub fn normal_equation_residual(form: &QuadraticForm, u: &[f64]) -> Result<f64, LinalgError> {
    let hu = form.hessian.matvec(u)?;
    Ok(norm2(&hu.iter().zip(&form.gradient).map(|(a, b)| a + b).collect::<Vec<_>>()))
}
