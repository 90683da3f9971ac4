//! Compilation of `Θ` and the kernel features into frozen LPV–ARX
//! coefficients `{C_k, A_{k,i}, B_{k,i}}`.

use crate::features::{FeatureError, RegressorLayout};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct LpvCoefficients {
    pub c: Vec<f64>,
    /// `A_1, …, A_ℓ`, each p×p.
    pub a: Vec<Mat>,
    /// `B_0, …, B_ℓ`, each p×m; `B_0` is the feedthrough.
    pub b: Vec<Mat>,
}

impl LpvCoefficients {
    pub fn zeros(p: usize, m: usize, lag: usize) -> Self {
        Self {
            c: vec![0.0; p],
            a: (0..lag).map(|_| Mat::zeros(p, p)).collect(),
            b: (0..=lag).map(|_| Mat::zeros(p, m)).collect(),
        }
    }

    pub fn outputs(&self) -> usize {
        self.c.len()
    }

    pub fn inputs(&self) -> usize {
        self.b[0].cols()
    }

    pub fn lag(&self) -> usize {
        self.a.len()
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|v| v.is_finite())
            && self.a.iter().all(Mat::is_finite)
            && self.b.iter().all(Mat::is_finite)
    }

    /// `C + Σ_i A_i y_{-i} + Σ_i B_i u_{-i}` with `ys[i-1] = y_{-i}` and
    /// `us[i] = u_{-i}`.
    pub fn one_step(&self, ys: &[&[f64]], us: &[&[f64]]) -> Vec<f64> {
        let mut out = self.c.clone();
        for (a, y) in self.a.iter().zip(ys) {
            for (o, v) in out.iter_mut().zip(a.matvec(y).expect("output dims")) {
                *o += v;
            }
        }
        for (b, u) in self.b.iter().zip(us) {
            for (o, v) in out.iter_mut().zip(b.matvec(u).expect("input dims")) {
                *o += v;
            }
        }
        out
    }

    /// Column names matching [`Self::flatten`]: `A{i}_{rc}`, `B{i}_{rc}`, `C_{r}`
    /// with 1-based row/column indices.
    pub fn headers(p: usize, m: usize, lag: usize) -> Vec<String> {
        let rc = |r: usize, c: usize| {
            if r < 9 && c < 9 {
                format!("{}{}", r + 1, c + 1)
            } else {
                format!("{}_{}", r + 1, c + 1)
            }
        };
        let mut h = Vec::new();
        for i in 1..=lag {
            for r in 0..p {
                for c in 0..p {
                    h.push(format!("A{i}_{}", rc(r, c)));
                }
            }
        }
        for i in 0..=lag {
            for r in 0..p {
                for c in 0..m {
                    h.push(format!("B{i}_{}", rc(r, c)));
                }
            }
        }
        h.extend((1..=p).map(|r| format!("C_{r}")));
        h
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.a
            .iter()
            .chain(&self.b)
            .flat_map(|m| m.as_slice().iter().copied())
            .chain(self.c.iter().copied())
            .collect()
    }
}

/// Builds `C_k`, `A_{k,i}`, `B_{k,i}` as `γ`-weighted sums of the blocks of
/// `Θ = unvec(θ)`, following the offsets in `layout`.
pub fn compile(theta: &[f64], g: &[f64], layout: &RegressorLayout) -> Result<LpvCoefficients, FeatureError> {
    if theta.len() != layout.d() {
        return Err(FeatureError::DimensionMismatch { expected: layout.d(), found: theta.len() });
    }
    if g.len() != layout.q {
        return Err(FeatureError::DimensionMismatch { expected: layout.q, found: g.len() });
    }
    let (p, m, lag) = (layout.p, layout.m, layout.lag);
    let col = |j: usize, row: usize| theta[j * p + row];
    let mut out = LpvCoefficients::zeros(p, m, lag);
    for (gj, block) in g.iter().zip(layout.feature_blocks()) {
        if *gj == 0.0 {
            continue;
        }
        if let Some(cidx) = block.constant {
            for (r, c) in out.c.iter_mut().enumerate() {
                *c += gj * col(cidx, r);
            }
        }
        for i in 1..=lag {
            for ch in 0..p {
                let j = block.psi_bar + layout.psi_bar_output(i, ch);
                for r in 0..p {
                    out.a[i - 1][(r, ch)] += gj * col(j, r);
                }
            }
        }
        for i in 0..=lag {
            for ch in 0..m {
                let j = block.psi_bar + layout.psi_bar_input(i, ch);
                for r in 0..p {
                    out.b[i][(r, ch)] += gj * col(j, r);
                }
            }
        }
    }
    Ok(out)
}
