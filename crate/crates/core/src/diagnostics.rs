//! Independent reference computations used to audit the solver stack.
//!
//! Each oracle recomputes a quantity by a route that shares no code with the
//! production path (naive recursion, dense Gaussian elimination, random
//! perturbation) and reports the worst discrepancy it found.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::controller::{quadratic_form, solve_step, tracking_cost, ControlWeights, IncrementSeam};
use crate::features::phi_row_apply;
use crate::identifier::RlsState;
use crate::linalg::{cholesky, Mat};
use crate::lpv::LpvCoefficients;
use crate::plants::mimo_matrices;
use crate::predictor::StackedPredictor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub instances_checked: usize,
    pub pass: bool,
}

impl OracleReport {
    fn new(name: &str, max_abs_error: f64, tolerance: f64, instances_checked: usize) -> Self {
        Self {
            name: name.into(),
            max_abs_error,
            tolerance,
            instances_checked,
            pass: max_abs_error.is_finite() && max_abs_error <= tolerance,
        }
    }
}

/// Propagates the LPV recursion step by step over the horizon. History is
/// newest first: `y_recent[0] = y_k`, `u_recent[0] = u_k`; `u` stacks
/// `u_{k+1}, …, u_{k+N}`. Returns `y_{k+1}, …, y_{k+N}` stacked.
pub fn naive_recursion(
    coeffs: &LpvCoefficients,
    y_recent: &[&[f64]],
    u_recent: &[&[f64]],
    u: &[f64],
    horizon: usize,
) -> Vec<f64> {
    let (p, m, lag) = (coeffs.outputs(), coeffs.inputs(), coeffs.lag());
    // Chronological buffers, oldest first.
    let mut ys: Vec<Vec<f64>> = y_recent[..lag].iter().rev().map(|v| v.to_vec()).collect();
    let mut us: Vec<Vec<f64>> = u_recent[..lag].iter().rev().map(|v| v.to_vec()).collect();
    let mut out = Vec::with_capacity(p * horizon);
    for j in 0..horizon {
        us.push(u[j * m..(j + 1) * m].to_vec());
        let mut y = coeffs.c.clone();
        for i in 1..=lag {
            let prev = &ys[ys.len() - i];
            for r in 0..p {
                for c in 0..p {
                    y[r] += coeffs.a[i - 1][(r, c)] * prev[c];
                }
            }
        }
        for i in 0..=lag {
            let prev = &us[us.len() - 1 - i];
            for r in 0..p {
                for c in 0..m {
                    y[r] += coeffs.b[i][(r, c)] * prev[c];
                }
            }
        }
        out.extend_from_slice(&y);
        ys.push(y);
    }
    out
}

/// Random coefficients with `‖A_i‖∞ ≤ 0.5/ℓ`, so long horizons stay bounded.
pub fn random_coefficients(p: usize, m: usize, lag: usize, rng: &mut ChaCha8Rng) -> LpvCoefficients {
    let scale = 0.5 / (p * lag) as f64;
    let mut c = LpvCoefficients::zeros(p, m, lag);
    for a in &mut c.a {
        *a = Mat::from_fn(p, p, |_, _| rng.random_range(-scale..scale));
    }
    for b in &mut c.b {
        *b = Mat::from_fn(p, m, |_, _| rng.random_range(-1.0..1.0));
    }
    c.c = (0..p).map(|_| rng.random_range(-0.5..0.5)).collect();
    c
}

fn random_vecs(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Stacked predictor against step-by-step propagation.
pub fn oracle_stacked_vs_recursion(seed: u64, instances: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let p = rng.random_range(1..=3);
        let m = rng.random_range(1..=3);
        let lag = rng.random_range(1..=4);
        let n = rng.random_range(1..=30);
        let coeffs = random_coefficients(p, m, lag, &mut rng);
        let ys = random_vecs(lag, p, &mut rng);
        let us = random_vecs(lag, m, &mut rng);
        let u: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        let ur: Vec<&[f64]> = us.iter().map(Vec::as_slice).collect();
        let err = match StackedPredictor::build(&coeffs, &yr, &ur, n).and_then(|pr| pr.predict(&u)) {
            Ok(stacked) => stacked
                .iter()
                .zip(naive_recursion(&coeffs, &yr, &ur, &u, n))
                .fold(0.0_f64, |a, (s, v)| a.max((s - v).abs())),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(err);
    }
    OracleReport::new("stacked_vs_recursion", worst, 1e-9, instances)
}

/// Dense Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Minimizer of the exponentially weighted ridge objective from its normal
/// equations, built entry by entry.
pub fn batch_weighted_ridge(
    theta0: &[f64],
    rows: &[(Vec<f64>, Vec<f64>)],
    outputs: usize,
    lambda: f64,
    rho: f64,
) -> Option<Vec<f64>> {
    let d = theta0.len();
    let n = rows.len();
    let reg = lambda.powi(n as i32) * rho;
    let mut a = vec![vec![0.0; d]; d];
    let mut b: Vec<f64> = theta0.iter().map(|t| reg * t).collect();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = reg;
    }
    for (i, (z, y)) in rows.iter().enumerate() {
        let w = lambda.powi((n - 1 - i) as i32);
        // Output c depends on θ[j·p + c] with weight z_j.
        for c in 0..outputs {
            for (j1, z1) in z.iter().enumerate() {
                let r = j1 * outputs + c;
                b[r] += w * z1 * y[c];
                for (j2, z2) in z.iter().enumerate() {
                    a[r][j2 * outputs + c] += w * z1 * z2;
                }
            }
        }
    }
    gauss_solve(a, b)
}

/// Recursive estimate against the batch minimizer, relative error.
pub fn oracle_rls_vs_batch(seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &lambda in &[1.0, 0.99] {
        for &(nz, p, rows) in &[(4usize, 1usize, 0usize), (5, 1, 30), (6, 2, 60), (8, 3, 120)] {
            let theta0: Vec<f64> = (0..nz * p).map(|_| rng.random_range(-0.5..0.5)).collect();
            let truth: Vec<f64> = (0..nz * p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rho = 1e-2;
            let data: Vec<(Vec<f64>, Vec<f64>)> = (0..rows)
                .map(|_| {
                    let z: Vec<f64> = (0..nz).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let mut y = phi_row_apply(&z, &truth, p).expect("dims");
                    for v in &mut y {
                        *v += 0.1 * rng.random_range(-1.0..1.0);
                    }
                    (z, y)
                })
                .collect();
            let err = (|| {
                let mut rls = RlsState::new(theta0.clone(), p, rho, lambda).ok()?;
                for (z, y) in &data {
                    rls.update(z, y).ok()?;
                }
                let batch = batch_weighted_ridge(&theta0, &data, p, lambda, rho)?;
                let diff = rls.theta().iter().zip(&batch).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
                let scale = 1.0 + batch.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                Some(diff / scale)
            })()
            .unwrap_or(f64::INFINITY);
            worst = worst.max(err);
            count += 1;
        }
    }
    OracleReport::new("rls_vs_batch", worst, 1e-6, count)
}

fn random_predictor(p: usize, m: usize, n: usize, rng: &mut ChaCha8Rng) -> StackedPredictor {
    let mut g = Mat::zeros(p * n, m * n);
    for j in 0..n {
        for l in 0..=j {
            for r in 0..p {
                for c in 0..m {
                    g[(j * p + r, l * m + c)] = rng.random_range(-1.0..1.0);
                }
            }
        }
    }
    StackedPredictor { horizon: n, outputs: p, inputs: m, s: (0..p * n).map(|_| rng.random_range(-1.0..1.0)).collect(), g }
}

/// Closed-form minimizer against random perturbations and the normal
/// equations; also checks `Q_y = 0`, whose minimizer holds `u_prev`.
pub fn oracle_controller_optimality(seed: u64, perturbations: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..20 {
        let p = rng.random_range(1..=3);
        let m = rng.random_range(1..=2);
        let n = rng.random_range(1..=12);
        let pred = random_predictor(p, m, n, &mut rng);
        let weights = ControlWeights::scalar(1.0, rng.random_range(1e-3..10.0), p, m, n).expect("weights");
        let r_ref: Vec<f64> = (0..p * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u_prev: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seam = if rng.random_bool(0.5) { IncrementSeam::Exact } else { IncrementSeam::Dropped };
        let Ok(sol) = solve_step(&pred, &weights, &r_ref, &u_prev, 0.0, seam) else {
            return OracleReport::new("controller_optimality", f64::INFINITY, 1e-8, count);
        };
        let form = quadratic_form(&pred, &weights, &r_ref, &u_prev, seam).expect("dims");
        // Normal equations H U = −h, evaluated densely.
        let mut scale: f64 = 1.0;
        for (i, h) in form.gradient.iter().enumerate() {
            let hu: f64 = (0..sol.u_star.len()).map(|j| form.hessian[(i, j)] * sol.u_star[j]).sum();
            scale = scale.max(h.abs()).max(form.hessian.row(i).iter().fold(0.0_f64, |a, v| a.max(v.abs())));
            worst = worst.max((hu + h).abs() / scale);
        }
        let j_star = tracking_cost(&pred, &weights, &r_ref, &u_prev, seam, &sol.u_star).expect("dims");
        worst = worst.max((j_star - sol.cost_value).abs() / (1.0 + j_star.abs()));
        for _ in 0..perturbations / 20 {
            let eps = 10f64.powf(rng.random_range(-4.0..0.0));
            let du: Vec<f64> = sol.u_star.iter().map(|v| v + eps * rng.random_range(-1.0..1.0)).collect();
            let j = tracking_cost(&pred, &weights, &r_ref, &u_prev, seam, &du).expect("dims");
            worst = worst.max((j_star - j).max(0.0) / (1.0 + j_star.abs()));
            count += 1;
        }
    }
    let (p, m, n) = (2, 2, 6);
    let pred = random_predictor(p, m, n, &mut rng);
    let weights = ControlWeights::per_step(&Mat::zeros(p, p), &Mat::identity(m), n).expect("weights");
    let u_prev = vec![0.3, -0.7];
    let r_ref = vec![1.0; p * n];
    if let Ok(sol) = solve_step(&pred, &weights, &r_ref, &u_prev, 0.0, IncrementSeam::Exact) {
        for (j, v) in sol.u_star.iter().enumerate() {
            worst = worst.max((v - u_prev[j % m]).abs());
        }
    } else {
        worst = f64::INFINITY;
    }
    OracleReport::new("controller_optimality", worst, 1e-8, count + 1)
}

/// Factorization of random SPD matrices: reconstruction and solve residual.
pub fn oracle_cholesky(seed: u64, instances: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(1..=40);
        let b = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = b.tr_matmul(&b).expect("square").add(&Mat::identity(n).scale(1e-2)).expect("square");
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let Ok(l) = cholesky(&h, 0.0) else {
            return OracleReport::new("cholesky", f64::INFINITY, 1.0, instances);
        };
        let hnorm = h.norm_inf();
        let rec = l.reconstruct().sub(&h).expect("square").max_abs() / (1e-10 * (1.0 + hnorm));
        let x = crate::linalg::cholesky_solve(&l, &rhs).expect("dims");
        let res = h.matvec(&x).expect("dims").iter().zip(&rhs).fold(0.0_f64, |a, (v, r)| a.max((v - r).abs()));
        let xnorm = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let res_ratio = res / (1e-8 * (1.0 + hnorm * xnorm));
        worst = worst.max(rec).max(res_ratio);
    }
    // Reported as the worst ratio to the per-instance tolerance.
    OracleReport::new("cholesky", worst, 1.0, instances)
}

/// Steady-state gain `(I − A₁ − A₂)⁻¹(B₀ + B₁ + B₂)` of the MIMO plant.
pub fn mimo_dc_gain() -> Mat {
    let (a, b) = mimo_matrices();
    let p = a[0].rows();
    let mut lhs = Mat::identity(p);
    for ai in &a {
        lhs = lhs.sub(ai).expect("square");
    }
    let mut rhs = Mat::zeros(p, b[0].cols());
    for bi in &b {
        rhs = rhs.add(bi).expect("dims");
    }
    // Diagonal A matrices: row-wise scaling.
    Mat::from_fn(p, rhs.cols(), |r, c| rhs[(r, c)] / lhs[(r, r)])
}

/// Numerical rank from Gaussian elimination with full pivoting.
pub fn numerical_rank(m: &Mat, tol: f64) -> usize {
    let mut a: Vec<Vec<f64>> = (0..m.rows()).map(|r| m.row(r).to_vec()).collect();
    let (rows, cols) = (m.rows(), m.cols());
    let mut rank = 0;
    let mut used_cols = vec![false; cols];
    let mut used_rows = vec![false; rows];
    loop {
        let mut best = (0.0, 0, 0);
        for r in (0..rows).filter(|&r| !used_rows[r]) {
            for c in (0..cols).filter(|&c| !used_cols[c]) {
                if a[r][c].abs() > best.0 {
                    best = (a[r][c].abs(), r, c);
                }
            }
        }
        if best.0 <= tol {
            return rank;
        }
        let (_, pr, pc) = best;
        used_rows[pr] = true;
        used_cols[pc] = true;
        rank += 1;
        for r in (0..rows).filter(|&r| !used_rows[r]) {
            let f = a[r][pc] / a[pr][pc];
            for c in 0..cols {
                a[r][c] -= f * a[pr][c];
            }
        }
    }
}

/// With three outputs and two inputs at most two output directions can be
/// held at steady state; reports `|rank − 2|`.
pub fn oracle_mimo_reachability() -> OracleReport {
    let rank = numerical_rank(&mimo_dc_gain(), 1e-10);
    OracleReport::new("mimo_dc_gain_rank", (rank as f64 - 2.0).abs(), 0.0, 1)
}

pub fn run_all(seed: u64) -> Vec<OracleReport> {
    vec![
        oracle_stacked_vs_recursion(seed, 300),
        oracle_rls_vs_batch(seed),
        oracle_controller_optimality(seed, 200),
        oracle_cholesky(seed, 500),
        oracle_mimo_reachability(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_recursion_by_hand() {
        // y_{k+1} = 0.5 y_k + 2 u_{k+1} + 1, y_k = 1, u = (1, 0).
        let mut c = LpvCoefficients::zeros(1, 1, 1);
        c.a[0] = Mat::diag(&[0.5]);
        c.b[0] = Mat::diag(&[2.0]);
        c.c = vec![1.0];
        let y = naive_recursion(&c, &[&[1.0]], &[&[0.0]], &[1.0, 0.0], 2);
        assert_eq!(y, vec![3.5, 2.75]);
    }

    #[test]
    fn gauss_solve_small_system() {
        let x = gauss_solve(vec![vec![0.0, 2.0], vec![3.0, 1.0]], vec![4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn all_oracles_pass() {
        for report in run_all(7) {
            assert!(report.pass, "{report:?}");
        }
    }

    #[test]
    fn dc_gain_rank_two() {
        let g = mimo_dc_gain();
        assert_eq!((g.rows(), g.cols()), (3, 2));
        assert_eq!(numerical_rank(&g, 1e-10), 2);
        assert_eq!(numerical_rank(&Mat::zeros(3, 2), 1e-10), 0);
    }
}
