//! Per-agent controllers: exact minimum-norm control for linear dynamics and
//! penalized control for control-affine nonlinear dynamics.

mod lti;
mod nonlinear;

use nalgebra::DVector;

pub use lti::LtiModel;
pub use nonlinear::{
    horizon_cost, horizon_gradient, linearize_one_step, nonlinear_horizon_controls, nonlinear_one_step_control,
    one_step_cost, pmp_residual, ControlAffine, DescentOptions, LinearAffine, Unicycle,
};

use crate::error::Result;

/// Stacked input sequence with the state it is predicted to reach.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub controls: Vec<DVector<f64>>,
    pub terminal_state: DVector<f64>,
}

impl ControlSequence {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Euclidean norm of the stacked input vector.
    pub fn stacked_norm(&self) -> f64 {
        self.controls.iter().map(|u| u.norm_squared()).sum::<f64>().sqrt()
    }
}

/// Dynamics carried by an agent.
#[derive(Debug, Clone)]
pub enum AgentModel {
    Lti(LtiModel),
    Unicycle(Unicycle),
    Affine(LinearAffine),
}

impl AgentModel {
    pub fn state_dim(&self) -> usize {
        match self {
            AgentModel::Lti(m) => m.state_dim(),
            AgentModel::Unicycle(m) => m.state_dim(),
            AgentModel::Affine(m) => m.state_dim(),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, AgentModel::Lti(_))
    }

    /// Spatial position used for selection and transport metrics.
    pub fn position(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            AgentModel::Lti(_) => x.clone(),
            AgentModel::Unicycle(m) => m.position(x),
            AgentModel::Affine(m) => m.position(x),
        }
    }

    /// Rolls the dynamics forward; the result has `controls.len() + 1` states.
    pub fn simulate(&self, x0: &DVector<f64>, controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
        match self {
            AgentModel::Lti(m) => m.simulate(x0, controls),
            AgentModel::Unicycle(m) => m.simulate(x0, controls),
            AgentModel::Affine(m) => m.simulate(x0, controls),
        }
    }

    /// Drives the agent from `x0` towards `y_star` over `horizon` steps.
    ///
    /// Linear agents get the exact minimum-norm sequence. Nonlinear agents
    /// re-evaluate the one-step closed form at every step.
    pub fn cycle_controls(
        &self,
        x0: &DVector<f64>,
        y_star: &DVector<f64>,
        omega: f64,
        horizon: usize,
    ) -> Result<ControlSequence> {
        match self {
            AgentModel::Lti(m) => m.optimal_controls(x0, y_star),
            AgentModel::Unicycle(m) => Ok(receding_one_step(m, x0, y_star, omega, horizon)),
            AgentModel::Affine(m) => Ok(receding_one_step(m, x0, y_star, omega, horizon)),
        }
    }
}

fn receding_one_step<M: ControlAffine>(
    model: &M,
    x0: &DVector<f64>,
    y_star: &DVector<f64>,
    omega: f64,
    horizon: usize,
) -> ControlSequence {
    let mut x = x0.clone();
    let mut controls = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let u = nonlinear_one_step_control(model, &x, y_star, omega);
        x = model.step(&x, &u);
        controls.push(u);
    }
    ControlSequence {
        controls,
        terminal_state: x,
    }
}
