//! The forward-model interface shared by every filter.
//!
//! A model advances a flat state vector by one substep, driven by an effective
//! increment `ξ = ΔW + λΔt`. The window functions here compose substeps, evaluate
//! the Girsanov-adjusted objective `Φ̂`, and differentiate it with respect to one
//! row of the control window by a hand-written discrete adjoint.
//!
//! Substep rows are indexed from zero throughout.

use crate::error::{Error, Result};
use crate::likelihood::{girsanov_penalty, neg_log_likelihood, substep_penalty, Observation};

/// Model state at a given substep count.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub dof: Vec<f64>,
    pub time_index: usize,
}

impl ModelState {
    pub fn new(dof: Vec<f64>) -> Self {
        Self { dof, time_index: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.dof.iter().all(|v| v.is_finite())
    }
}

/// Row-major `n_steps × n_noise` matrix.
#[derive(Clone, Debug, PartialEq)]
struct Grid {
    n_steps: usize,
    n_noise: usize,
    data: Vec<f64>,
}

impl Grid {
    fn zeros(n_steps: usize, n_noise: usize) -> Self {
        Self {
            n_steps,
            n_noise,
            data: vec![0.0; n_steps * n_noise],
        }
    }

    fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.n_noise..(n + 1) * self.n_noise]
    }

    fn row_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.n_noise..(n + 1) * self.n_noise]
    }
}

/// Brownian increments for one window. Rows not yet sampled are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseWindow {
    grid: Grid,
    dt: f64,
}

impl NoiseWindow {
    pub fn zeros(n_steps: usize, n_noise: usize, dt: f64) -> Self {
        Self {
            grid: Grid::zeros(n_steps, n_noise),
            dt,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn n_noise(&self) -> usize {
        self.grid.n_noise
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn row(&self, n: usize) -> &[f64] {
        self.grid.row(n)
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        self.grid.row_mut(n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grid.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.grid.data
    }
}

/// Piecewise-constant control `λ`, one row per substep.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlWindow {
    grid: Grid,
}

impl ControlWindow {
    pub fn zeros(n_steps: usize, n_noise: usize) -> Self {
        Self {
            grid: Grid::zeros(n_steps, n_noise),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn n_noise(&self) -> usize {
        self.grid.n_noise
    }

    pub fn row(&self, n: usize) -> &[f64] {
        self.grid.row(n)
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        self.grid.row_mut(n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.grid.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.grid.data
    }

    pub fn is_zero(&self) -> bool {
        self.grid.data.iter().all(|&v| v == 0.0)
    }
}

/// Reverse-mode sensitivities of one substep.
#[derive(Clone, Debug)]
pub struct StepAdjoint {
    /// `(∂x_next/∂x_prev)ᵀ · adj_next`
    pub state: Vec<f64>,
    /// `(∂x_next/∂ξ)ᵀ · adj_next`
    pub increment: Vec<f64>,
}

pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    fn state_dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    fn dt(&self) -> f64;

    /// Advance one substep with effective increment `ξ = ΔW + λΔt`.
    fn step(&self, x: &[f64], increment: &[f64]) -> Result<Vec<f64>>;

    /// Transpose-Jacobian products of [`Model::step`] at a computed step.
    fn step_adjoint(&self, x_prev: &[f64], x_next: &[f64], increment: &[f64], adj_next: &[f64]) -> Result<StepAdjoint>;

    /// Observation operator `h`.
    fn observe(&self, x: &[f64]) -> Vec<f64>;

    /// `h'(x)ᵀ r`.
    fn observe_transpose(&self, x: &[f64], r: &[f64]) -> Vec<f64>;

    /// Spatial coordinate of each degree of freedom (for output files).
    fn dof_coordinates(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    /// Spatial coordinate of each observed quantity (for output files).
    fn obs_coordinates(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `ξ_n = ΔW_n + λ_n Δt`
pub fn effective_increment(dw: &[f64], lambda: &[f64], dt: f64) -> Vec<f64> {
    dw.iter().zip(lambda).map(|(w, l)| w + l * dt).collect()
}

fn check_window(model: &dyn Model, w: &NoiseWindow, c: &ControlWindow) -> Result<()> {
    if w.n_steps() != c.n_steps() || w.n_noise() != c.n_noise() {
        return Err(Error::invalid("noise and control windows differ in shape"));
    }
    if w.n_noise() != model.noise_dim() {
        return Err(Error::invalid(format!(
            "model {} expects {} noise components, window has {}",
            model.name(),
            model.noise_dim(),
            w.n_noise()
        )));
    }
    Ok(())
}

/// One substep from row `n` of the windows.
pub fn step_row(model: &dyn Model, x: &[f64], w: &NoiseWindow, c: &ControlWindow, n: usize) -> Result<Vec<f64>> {
    let xi = effective_increment(w.row(n), c.row(n), w.dt());
    model.step(x, &xi).map_err(|e| Error::Propagation {
        substep: n,
        source: Box::new(e),
    })
}

/// States at substeps `start, start+1, ..., N_s`, given the state at `start`.
pub fn trajectory_from(
    model: &dyn Model,
    x_start: &[f64],
    start: usize,
    w: &NoiseWindow,
    c: &ControlWindow,
) -> Result<Vec<Vec<f64>>> {
    check_window(model, w, c)?;
    let mut states = Vec::with_capacity(w.n_steps() + 1 - start);
    states.push(x_start.to_vec());
    for n in start..w.n_steps() {
        let next = step_row(model, states.last().unwrap(), w, c, n)?;
        states.push(next);
    }
    Ok(states)
}

/// State at the end of the window, given the state at substep `start`.
pub fn propagate_from(model: &dyn Model, x_start: &[f64], start: usize, w: &NoiseWindow, c: &ControlWindow) -> Result<Vec<f64>> {
    check_window(model, w, c)?;
    let mut x = x_start.to_vec();
    for n in start..w.n_steps() {
        x = step_row(model, &x, w, c, n)?;
    }
    Ok(x)
}

pub fn propagate(model: &dyn Model, x0: &ModelState, w: &NoiseWindow, c: &ControlWindow) -> Result<ModelState> {
    if !x0.is_finite() {
        return Err(Error::invalid("initial state has non-finite entries"));
    }
    let dof = propagate_from(model, &x0.dof, 0, w, c)?;
    Ok(ModelState {
        dof,
        time_index: x0.time_index + w.n_steps(),
    })
}

/// `Φ(x_end, y)` for an end-of-window state.
pub fn phi_of_state(model: &dyn Model, x_end: &[f64], y: &Observation) -> Result<f64> {
    neg_log_likelihood(&model.observe(x_end), &y.y, y.obs_variance)
}

/// `Φ̂` over the whole window, given the state at substep `start`. The penalty
/// always covers every row of the window.
pub fn phi_hat_from(
    model: &dyn Model,
    x_start: &[f64],
    start: usize,
    w: &NoiseWindow,
    c: &ControlWindow,
    y: &Observation,
) -> Result<f64> {
    let x_end = propagate_from(model, x_start, start, w, c)?;
    Ok(phi_of_state(model, &x_end, y)? + girsanov_penalty(c, w)?)
}

pub fn phi_hat_of_window(model: &dyn Model, x0: &ModelState, w: &NoiseWindow, c: &ControlWindow, y: &Observation) -> Result<f64> {
    phi_hat_from(model, &x0.dof, 0, w, c, y)
}

/// `Φ̂` and its gradient with respect to control row `start`, given the state at
/// substep `start`.
///
/// Forward sweep stores every substep state; the backward sweep pulls
/// `∂Φ/∂x_end` through the transposed linearised substeps down to `start`.
pub fn phi_hat_and_grad_from(
    model: &dyn Model,
    x_start: &[f64],
    start: usize,
    w: &NoiseWindow,
    c: &ControlWindow,
    y: &Observation,
) -> Result<(f64, Vec<f64>)> {
    if start >= w.n_steps() {
        return Err(Error::invalid(format!("substep {start} outside window of {} substeps", w.n_steps())));
    }
    let states = trajectory_from(model, x_start, start, w, c)?;
    let x_end = states.last().unwrap();
    let h_x = model.observe(x_end);
    let phi = neg_log_likelihood(&h_x, &y.y, y.obs_variance)?;
    let value = phi + girsanov_penalty(c, w)?;

    let residual: Vec<f64> = h_x.iter().zip(&y.y).map(|(a, b)| (a - b) / y.obs_variance).collect();
    let mut adj = model.observe_transpose(x_end, &residual);
    let dt = w.dt();
    let mut grad_xi = Vec::new();
    for n in (start..w.n_steps()).rev() {
        let k = n - start;
        let xi = effective_increment(w.row(n), c.row(n), dt);
        let sens = model
            .step_adjoint(&states[k], &states[k + 1], &xi, &adj)
            .map_err(|e| Error::Propagation {
                substep: n,
                source: Box::new(e),
            })?;
        adj = sens.state;
        grad_xi = sens.increment;
    }
    // ∂ξ/∂λ = Δt, plus the direct derivative of ½|λ|²Δt + λ·ΔW.
    let grad = grad_xi
        .iter()
        .zip(c.row(start))
        .zip(w.row(start))
        .map(|((g, l), dw)| g * dt + l * dt + dw)
        .collect();
    Ok((value, grad))
}

/// Gradient of `Φ̂` with respect to control row `n`.
pub fn grad_phi_hat(
    model: &dyn Model,
    x0: &ModelState,
    w: &NoiseWindow,
    c: &ControlWindow,
    y: &Observation,
    n: usize,
) -> Result<Vec<f64>> {
    check_window(model, w, c)?;
    let mut x = x0.dof.clone();
    for m in 0..n.min(w.n_steps()) {
        x = step_row(model, &x, w, c, m)?;
    }
    Ok(phi_hat_and_grad_from(model, &x, n, w, c, y)?.1)
}

/// Penalty contribution of a single row; used when only one row changes.
pub fn row_penalty(w: &NoiseWindow, c: &ControlWindow, n: usize) -> f64 {
    substep_penalty(c.row(n), w.row(n), w.dt())
}
