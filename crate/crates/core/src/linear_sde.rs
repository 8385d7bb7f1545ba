//! Scalar Ornstein–Uhlenbeck model `dx = -Ax dt + D dW`, discretised with the
//! midpoint rule
//!
//! `(1 + AΔt/2) x⁺ = (1 - AΔt/2) x + D (ΔW + λΔt)`.
//!
//! The discrete chain keeps `N(0, D²/(2A))` stationary, so the filtering problem
//! with `h(x) = x` has an exact Gaussian posterior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, StepAdjoint};
use crate::rng::NoiseStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSdeParams {
    /// Decay rate `A`.
    pub a: f64,
    /// Noise amplitude `D`.
    pub d: f64,
    pub dt: f64,
    /// Substeps per assimilation window.
    pub n_steps: usize,
}

impl Default for LinearSdeParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            d: 1.0,
            dt: 0.1,
            n_steps: 10,
        }
    }
}

impl LinearSdeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.d > 0.0 && self.dt > 0.0) {
            return Err(Error::invalid("A, D and dt must be positive"));
        }
        if !(self.a * self.dt < 2.0) {
            return Err(Error::invalid("A·dt must be below 2"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        Ok(())
    }

    /// `(1 - AΔt/2) / (1 + AΔt/2)`
    pub fn contraction(&self) -> f64 {
        let h = 0.5 * self.a * self.dt;
        (1.0 - h) / (1.0 + h)
    }

    pub fn stationary_variance(&self) -> f64 {
        self.d * self.d / (2.0 * self.a)
    }
}

pub fn linear_step(x: f64, dw: f64, lambda: f64, p: &LinearSdeParams) -> f64 {
    let h = 0.5 * p.a * p.dt;
    ((1.0 - h) * x + p.d * (dw + p.dt * lambda)) / (1.0 + h)
}

/// Draw from the stationary law `N(0, D²/(2A))`.
pub fn stationary_init_sampler(p: &LinearSdeParams, stream: &mut NoiseStream) -> f64 {
    p.stationary_variance().sqrt() * stream.standard_normal()
}

/// Conjugate update of a Gaussian prior by one observation of the state.
pub fn exact_gaussian_posterior(prior_mean: f64, prior_var: f64, y: f64, obs_var: f64) -> Result<(f64, f64)> {
    if !(prior_var > 0.0 && obs_var > 0.0) {
        return Err(Error::invalid("variances must be positive"));
    }
    let var = prior_var * obs_var / (prior_var + obs_var);
    let mean = var * (prior_mean / prior_var + y / obs_var);
    Ok((mean, var))
}

#[derive(Clone, Debug)]
pub struct LinearSde {
    pub params: LinearSdeParams,
}

impl LinearSde {
    pub fn new(params: LinearSdeParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl Model for LinearSde {
    fn name(&self) -> &str {
        "linear_sde"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn step(&self, x: &[f64], increment: &[f64]) -> Result<Vec<f64>> {
        // λ is already folded into the increment.
        Ok(vec![linear_step(x[0], increment[0], 0.0, &self.params)])
    }

    fn step_adjoint(&self, _x_prev: &[f64], _x_next: &[f64], _increment: &[f64], adj_next: &[f64]) -> Result<StepAdjoint> {
        let h = 0.5 * self.params.a * self.params.dt;
        Ok(StepAdjoint {
            state: vec![adj_next[0] * (1.0 - h) / (1.0 + h)],
            increment: vec![adj_next[0] * self.params.d / (1.0 + h)],
        })
    }

    fn observe(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0]]
    }

    fn observe_transpose(&self, _x: &[f64], r: &[f64]) -> Vec<f64> {
        vec![r[0]]
    }

    fn obs_coordinates(&self) -> Vec<f64> {
        vec![0.0]
    }
}
