//! The online identify–compile–predict–solve loop for a single plant.

use crate::controller::{solve_step, tracking_cost, ControlSolution, ControlWeights, IncrementSeam};
use crate::features::{build_regressor, FeatureError, KernelDictionary, RegressorLayout, RegressorWindow};
use crate::identifier::RlsState;
use crate::lpv::{compile, LpvCoefficients};
use crate::predictor::StackedPredictor;
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSettings {
    pub lag: usize,
    pub horizon: usize,
    pub forgetting: f64,
    pub ridge: f64,
    pub jitter: f64,
    pub seam: IncrementSeam,
    pub weights: ControlWeights,
}

/// Result of feeding one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `φ_k θ_k` before the update.
    pub yhat_prior: Vec<f64>,
    pub prediction_error_norm: f64,
}

/// Solution of one receding-horizon step plus the cost of holding `u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub solution: ControlSolution,
    pub hold_cost: f64,
}

/// Online controller. Call [`push_input`](Self::push_input) with `u_k`,
/// then [`observe`](Self::observe) with `y_k`, then optionally
/// [`compute`](Self::compute) to obtain `u_{k+1}`.
#[derive(Debug, Clone)]
pub struct AdaptiveController {
    dict: KernelDictionary,
    layout: RegressorLayout,
    window: RegressorWindow,
    rls: RlsState,
    settings: AdaptiveSettings,
    coeffs: LpvCoefficients,
}

impl AdaptiveController {
    /// Builds the controller with a window holding `y_0 = y_init` and zero
    /// earlier samples, so the first regressor is available at `k = 1`.
    pub fn new(
        outputs: usize,
        inputs: usize,
        dict: KernelDictionary,
        settings: AdaptiveSettings,
        y_init: &[f64],
    ) -> Result<Self, Error> {
        let lag = settings.lag;
        if dict.window_dim() != crate::features::window_dim(outputs, inputs, lag) {
            return Err(FeatureError::DimensionMismatch {
                expected: crate::features::window_dim(outputs, inputs, lag),
                found: dict.window_dim(),
            }
            .into());
        }
        let (pn, mn) = (outputs * settings.horizon, inputs * settings.horizon);
        if settings.weights.q_y.rows() != pn || settings.weights.r_u.rows() != mn {
            return Err(crate::linalg::LinalgError::DimensionMismatch {
                expected: pn,
                found: settings.weights.q_y.rows(),
            }
            .into());
        }
        let layout = RegressorLayout::new(outputs, inputs, lag, &dict);
        let rls = RlsState::zeros(layout.d(), outputs, settings.ridge, settings.forgetting)?;
        let mut y_recent = vec![vec![0.0; outputs]; lag];
        y_recent[0] = y_init.to_vec();
        let u_recent = vec![vec![0.0; inputs]; lag + 1];
        let window = RegressorWindow::from_history(outputs, inputs, lag, &y_recent, &u_recent)?;
        Ok(Self {
            dict,
            layout,
            window,
            rls,
            coeffs: LpvCoefficients::zeros(outputs, inputs, lag),
            settings,
        })
    }

    pub fn layout(&self) -> &RegressorLayout {
        &self.layout
    }

    pub fn dictionary(&self) -> &KernelDictionary {
        &self.dict
    }

    pub fn rls(&self) -> &RlsState {
        &self.rls
    }

    pub fn settings(&self) -> &AdaptiveSettings {
        &self.settings
    }

    /// Coefficients compiled at the most recent observation.
    pub fn coefficients(&self) -> &LpvCoefficients {
        &self.coeffs
    }

    pub fn window(&self) -> &RegressorWindow {
        &self.window
    }

    pub fn push_input(&mut self, u: &[f64]) -> Result<(), Error> {
        Ok(self.window.push_input(u)?)
    }

    /// Identification with the measured `y_k`: a-priori prediction, RLS
    /// update, then compilation of `{C, A_i, B_i}` at `s_k` with the new `θ`.
    pub fn observe(&mut self, y: &[f64]) -> Result<Observation, Error> {
        let reg = build_regressor(&self.dict, &self.window)?;
        let yhat_prior = self.rls.predict_prior(&reg.z)?;
        let prediction_error_norm = y
            .iter()
            .zip(&yhat_prior)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        self.rls.update(&reg.z, y)?;
        self.coeffs = compile(self.rls.theta(), &reg.g, &self.layout)?;
        self.window.push_output(y)?;
        Ok(Observation { yhat_prior, prediction_error_norm })
    }

    /// Solves for `u_{k+1}` tracking `reference` held over the horizon.
    pub fn compute(&self, reference: &[f64]) -> Result<ControlStep, Error> {
        let pred = StackedPredictor::from_window(&self.coeffs, &self.window, self.settings.horizon)?;
        let r_ref: Vec<f64> = (0..self.settings.horizon)
            .flat_map(|_| reference.iter().copied())
            .collect();
        let u_prev = self.window.latest_input().expect("window holds u_k").to_vec();
        let solution = solve_step(
            &pred,
            &self.settings.weights,
            &r_ref,
            &u_prev,
            self.settings.jitter,
            self.settings.seam,
        )?;
        let hold: Vec<f64> = (0..self.settings.horizon).flat_map(|_| u_prev.iter().copied()).collect();
        let hold_cost = tracking_cost(&pred, &self.settings.weights, &r_ref, &u_prev, self.settings.seam, &hold)?;
        Ok(ControlStep { solution, hold_cost })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::window_dim;
    use crate::plants::{Plant, PlantKind};

    fn settings(horizon: usize) -> AdaptiveSettings {
        AdaptiveSettings {
            lag: 2,
            horizon,
            forgetting: 1.0,
            ridge: 1e-9,
            jitter: 1e-12,
            seam: IncrementSeam::Exact,
            weights: ControlWeights::scalar(1.0, 1e-3, 1, 1, horizon).unwrap(),
        }
    }

    #[test]
    fn learns_linear_plant_exactly() {
        let dict = KernelDictionary::unitary(window_dim(1, 1, 2));
        let mut ctl = AdaptiveController::new(1, 1, dict, settings(8), &[0.0]).unwrap();
        let mut plant = Plant::new(PlantKind::SisoStable);
        for k in 1..=40 {
            let u = [((k * 7919) % 13) as f64 / 13.0 - 0.5];
            ctl.push_input(&u).unwrap();
            let y = plant.step(&u, k).unwrap();
            ctl.observe(&y).unwrap();
        }
        let c = ctl.coefficients();
        assert!((c.a[0][(0, 0)] - 1.5).abs() < 1e-6);
        assert!((c.a[1][(0, 0)] + 0.7).abs() < 1e-6);
        assert!((c.b[0][(0, 0)] - 0.5).abs() < 1e-6);
        assert!((c.b[1][(0, 0)] - 0.3).abs() < 1e-6);
        let step = ctl.compute(&[1.0]).unwrap();
        assert!(step.solution.cost_value <= step.hold_cost);
    }

    #[test]
    fn rejects_mismatched_dictionary() {
        let dict = KernelDictionary::unitary(3);
        assert!(AdaptiveController::new(1, 1, dict, settings(4), &[0.0]).is_err());
    }
}
