//! Preconditioned Crank–Nicolson MCMC moves on a particle's noise window.

use crate::error::{Error, Result};
use crate::likelihood::{girsanov_penalty, Observation};
use crate::model::{propagate, phi_of_state, Model, NoiseWindow};
use crate::rng::NoiseStream;

use super::Particle;

/// `ρ = (2 − δ) / (2 + δ)`
pub fn pcn_rho(delta: f64) -> f64 {
    (2.0 - delta) / (2.0 + delta)
}

/// `ρ·w + √(1 − ρ²)·ξ`; leaves the `N(0, Δt)` law of the increments invariant
/// when `ξ` is drawn from it.
pub fn pcn_propose(w: &NoiseWindow, delta: f64, xi: &NoiseWindow) -> Result<NoiseWindow> {
    if !(delta > 0.0) {
        return Err(Error::invalid("pCN step must be positive"));
    }
    if w.n_steps() != xi.n_steps() || w.n_noise() != xi.n_noise() || w.dt() != xi.dt() {
        return Err(Error::invalid("proposal noise differs in shape from the current window"));
    }
    let rho = pcn_rho(delta);
    let tau = (1.0 - rho * rho).sqrt();
    let mut out = w.clone();
    for (o, x) in out.as_mut_slice().iter_mut().zip(xi.as_slice()) {
        *o = rho * *o + tau * x;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct JitterStats {
    pub proposed: usize,
    pub accepted: usize,
    /// Proposals rejected because the model could not propagate them.
    pub failed: usize,
}

impl JitterStats {
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            proposed: self.proposed + other.proposed,
            accepted: self.accepted + other.accepted,
            failed: self.failed + other.failed,
        }
    }
}

/// `n_steps` Metropolis–Hastings moves on `p.noise` with pCN proposals, targeting
/// the prior on the noise times `exp(−θΦ)`, or `exp(−Φ̂)` when `with_penalty`
/// (in which case `θ` should be 1). The control window is held fixed.
#[allow(clippy::too_many_arguments)]
pub fn mcmc_jitter(
    p: &mut Particle,
    y: &Observation,
    theta: f64,
    delta: f64,
    n_steps: usize,
    model: &dyn Model,
    with_penalty: bool,
    stream: &mut NoiseStream,
) -> Result<JitterStats> {
    let mut stats = JitterStats::default();
    if n_steps == 0 {
        return Ok(stats);
    }
    let phi = match p.phi {
        Some(v) if p.x_end.is_some() => v,
        _ => p.refresh(model, y)?,
    };
    let energy = |phi: f64, w: &NoiseWindow| -> Result<f64> {
        let pen = if with_penalty { girsanov_penalty(&p.control, w)? } else { 0.0 };
        Ok(theta * phi + pen)
    };
    let mut current = energy(phi, &p.noise)?;
    let sd = p.noise.dt().sqrt();
    let mut xi = NoiseWindow::zeros(p.noise.n_steps(), p.noise.n_noise(), p.noise.dt());
    for _ in 0..n_steps {
        for v in xi.as_mut_slice() {
            *v = stream.standard_normal() * sd;
        }
        let u = stream.uniform();
        stats.proposed += 1;
        let w_new = pcn_propose(&p.noise, delta, &xi)?;
        let Ok(end) = propagate(model, &p.x_start, &w_new, &p.control) else {
            stats.failed += 1;
            continue;
        };
        let Ok(phi_new) = phi_of_state(model, &end.dof, y) else {
            stats.failed += 1;
            continue;
        };
        if !phi_new.is_finite() || !end.is_finite() {
            stats.failed += 1;
            continue;
        }
        let proposed = energy(phi_new, &w_new)?;
        if u.ln() < current - proposed {
            stats.accepted += 1;
            current = proposed;
            p.noise = w_new;
            p.x_end = Some(end);
            p.phi = Some(phi_new);
        }
    }
    Ok(stats)
}
