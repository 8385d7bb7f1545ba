//! Gaussian negative log-likelihood, the discrete Girsanov penalty, and the
//! Girsanov-adjusted log-weight.
//!
//! A particle simulated with control `λ` and sampled increments `ΔW` carries the
//! penalty `Σ_n (½|λ_n|² Δt + λ_n·ΔW_n)`. Adding it to the likelihood term gives
//! `Φ̂`, and weighting by `exp(-Φ̂)` makes the perturbed ensemble unbiased for the
//! unperturbed path law.

use crate::error::{Error, Result};
use crate::model::{ControlWindow, NoiseWindow};

/// Observed data at the end of one assimilation window.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub y: Vec<f64>,
    pub window_index: usize,
    /// Variance `R` of the iid Gaussian observation errors.
    pub obs_variance: f64,
}

impl Observation {
    pub fn new(y: Vec<f64>, window_index: usize, obs_variance: f64) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::invalid("observation vector is empty"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation has non-finite entries"));
        }
        if !(obs_variance > 0.0) {
            return Err(Error::invalid(format!("observation variance must be positive, got {obs_variance}")));
        }
        Ok(Self { y, window_index, obs_variance })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `Σ_m (h_x[m] - y[m])² / (2R)`; normalising constants are dropped.
pub fn neg_log_likelihood(h_x: &[f64], y: &[f64], obs_variance: f64) -> Result<f64> {
    if h_x.len() != y.len() {
        return Err(Error::invalid(format!(
            "predicted observation has length {}, data has length {}",
            h_x.len(),
            y.len()
        )));
    }
    if !(obs_variance > 0.0) {
        return Err(Error::invalid("observation variance must be positive"));
    }
    let ss: f64 = h_x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ss / (2.0 * obs_variance))
}

/// Per-substep contributions of the Girsanov penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct GirsanovLedger {
    pub penalty: f64,
    pub contributions: Vec<f64>,
}

impl GirsanovLedger {
    pub fn new(control: &ControlWindow, noise: &NoiseWindow) -> Result<Self> {
        check_shapes(control, noise)?;
        let dt = noise.dt();
        let contributions: Vec<f64> = (0..noise.n_steps())
            .map(|n| substep_penalty(control.row(n), noise.row(n), dt))
            .collect();
        Ok(Self {
            penalty: contributions.iter().sum(),
            contributions,
        })
    }
}

pub(crate) fn substep_penalty(lambda: &[f64], dw: &[f64], dt: f64) -> f64 {
    lambda
        .iter()
        .zip(dw)
        .map(|(l, w)| 0.5 * l * l * dt + l * w)
        .sum()
}

fn check_shapes(control: &ControlWindow, noise: &NoiseWindow) -> Result<()> {
    if control.n_steps() != noise.n_steps() || control.n_noise() != noise.n_noise() {
        return Err(Error::invalid(format!(
            "control window is {}x{}, noise window is {}x{}",
            control.n_steps(),
            control.n_noise(),
            noise.n_steps(),
            noise.n_noise()
        )));
    }
    Ok(())
}

/// `Σ_n (½|λ_n|² Δt + λ_n·ΔW_n)` over the window.
pub fn girsanov_penalty(control: &ControlWindow, noise: &NoiseWindow) -> Result<f64> {
    check_shapes(control, noise)?;
    let dt = noise.dt();
    Ok((0..noise.n_steps())
        .map(|n| substep_penalty(control.row(n), noise.row(n), dt))
        .sum())
}

/// Log-weight increment `-(Φ + penalty)`.
pub fn girsanov_log_weight(phi: f64, penalty: f64) -> f64 {
    -(phi + penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn likelihood_values() {
        assert_eq!(neg_log_likelihood(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), 0.0);
        let phi = neg_log_likelihood(&[0.1], &[0.0], 0.01).unwrap();
        assert!((phi - 0.5).abs() < 1e-12);
        let a = neg_log_likelihood(&[0.3, -1.0], &[0.1, 0.4], 0.7).unwrap();
        let b = neg_log_likelihood(&[0.3, -1.0], &[0.1, 0.4], 1.4).unwrap();
        assert_eq!(a, 2.0 * b);
    }

    #[test]
    fn likelihood_length_mismatch() {
        assert!(matches!(
            neg_log_likelihood(&[1.0], &[1.0, 2.0], 1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn penalty_hand_value() {
        let mut c = ControlWindow::zeros(1, 1);
        let mut w = NoiseWindow::zeros(1, 1, 0.1);
        c.row_mut(0)[0] = 1.0;
        w.row_mut(0)[0] = 0.2;
        assert!((girsanov_penalty(&c, &w).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_control_zero_penalty() {
        let mut w = NoiseWindow::zeros(4, 3, 0.1);
        for (i, v) in w.as_mut_slice().iter_mut().enumerate() {
            *v = (i as f64).sin();
        }
        let c = ControlWindow::zeros(4, 3);
        assert_eq!(girsanov_penalty(&c, &w).unwrap(), 0.0);
        let ledger = GirsanovLedger::new(&c, &w).unwrap();
        assert_eq!(ledger.penalty, 0.0);
        assert!(ledger.contributions.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn penalty_is_quadratic_in_scaling() {
        let mut c = ControlWindow::zeros(3, 2);
        let mut w = NoiseWindow::zeros(3, 2, 0.05);
        for (i, v) in c.as_mut_slice().iter_mut().enumerate() {
            *v = 0.3 * i as f64 - 0.4;
        }
        for (i, v) in w.as_mut_slice().iter_mut().enumerate() {
            *v = 0.1 * (i as f64).cos();
        }
        let quad = 0.5 * c.as_slice().iter().map(|x| x * x).sum::<f64>() * 0.05;
        let lin: f64 = c.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum();
        for s in [0.0, 1.0, 2.0] {
            let mut cs = c.clone();
            cs.as_mut_slice().iter_mut().for_each(|x| *x *= s);
            let p = girsanov_penalty(&cs, &w).unwrap();
            assert!((p - (s * s * quad + s * lin)).abs() < 1e-14);
        }
        let ledger = GirsanovLedger::new(&c, &w).unwrap();
        let total: f64 = ledger.contributions.iter().sum();
        assert!((ledger.penalty - total).abs() < 1e-15);
    }

    #[test]
    fn penalty_shape_mismatch() {
        let c = ControlWindow::zeros(3, 2);
        let w = NoiseWindow::zeros(2, 2, 0.1);
        assert!(matches!(girsanov_penalty(&c, &w), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn log_weight() {
        assert_eq!(girsanov_log_weight(1.5, 0.0), -1.5);
        assert_eq!(girsanov_log_weight(0.0, 0.25), -0.25);
        let total = girsanov_log_weight(1.0, 0.5) + girsanov_log_weight(2.0, -0.1);
        assert!((total - girsanov_log_weight(3.0, 0.4)).abs() < 1e-15);
    }
}
