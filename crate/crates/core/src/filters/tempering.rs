//! Tempered likelihood bridging with adaptive increments and MCMC jittering.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihood::Observation;
use crate::model::Model;
use crate::rng::Purpose;
use crate::weights::ess_from_phi;

use super::{mcmc_jitter, refresh_all, resample, weigh, AssimilationReport, Ensemble, FilterParams, JitterStats, WindowContext};

/// Smallest tempering increment; used (with a warning flag) when even this
/// step drops the ESS below target.
pub const DELTA_THETA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaTheta {
    pub value: f64,
    /// The floor was returned because no admissible step exists.
    pub floor_hit: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemperSchedule {
    /// Cumulative temperatures, starting at 0 and ending at 1.
    pub thetas: Vec<f64>,
    pub ess_target_fraction: f64,
}

impl TemperSchedule {
    pub fn increments(&self) -> Vec<f64> {
        self.thetas.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Largest `Δθ ≤ theta_remaining` keeping `ESS(Δθ·log_lik) / N_p ≥ target`,
/// for an equally weighted ensemble.
pub fn adapt_delta_theta(log_lik: &[f64], theta_remaining: f64, target: f64) -> Result<DeltaTheta> {
    adapt_weighted(&vec![0.0; log_lik.len()], log_lik, theta_remaining, target)
}

/// As [`adapt_delta_theta`] for incoming log weights `base`.
pub(crate) fn adapt_weighted(base: &[f64], log_lik: &[f64], theta_remaining: f64, target: f64) -> Result<DeltaTheta> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::invalid(format!("ESS target {target} outside [0, 1)")));
    }
    if !(theta_remaining > 0.0 && theta_remaining <= 1.0) {
        return Err(Error::invalid(format!("remaining temperature {theta_remaining} outside (0, 1]")));
    }
    if base.len() != log_lik.len() || base.is_empty() {
        return Err(Error::invalid("log-likelihood and weight vectors differ in length"));
    }
    let n = base.len() as f64;
    let frac = |d: f64| -> Result<f64> {
        let phi: Vec<f64> = base
            .iter()
            .zip(log_lik)
            .map(|(b, l)| {
                let v = -(b + d * l);
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    v
                }
            })
            .collect();
        if phi.iter().all(|p| p.is_infinite()) {
            return Err(Error::DegenerateWeights);
        }
        Ok(ess_from_phi(&phi) / n)
    };
    if frac(theta_remaining)? >= target {
        return Ok(DeltaTheta {
            value: theta_remaining,
            floor_hit: false,
        });
    }
    let floor = DELTA_THETA_FLOOR.min(theta_remaining);
    if frac(floor)? < target {
        return Ok(DeltaTheta {
            value: floor,
            floor_hit: true,
        });
    }
    let (mut lo, mut hi) = (floor, theta_remaining);
    while hi - lo > 1e-3 * hi.min(1.0) {
        let mid = 0.5 * (lo + hi);
        if frac(mid)? >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(DeltaTheta {
        value: lo,
        floor_hit: false,
    })
}

/// Temper-jitter filter: fresh noise, then repeated (adapt Δθ, reweight,
/// resample, jitter at the cumulative θ) until θ reaches 1.
pub fn temper_jitter_assimilate(
    ens: &mut Ensemble,
    y: &Observation,
    model: &dyn Model,
    params: &FilterParams,
    ctx: &WindowContext,
) -> Result<AssimilationReport> {
    ens.begin_window();
    ens.particles
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, p)| p.sample_noise(ctx, i));
    let mut report = AssimilationReport {
        n_particles: ens.len(),
        failed_propagations: refresh_all(ens, y, model),
        ess: f64::INFINITY,
        ..Default::default()
    };
    let mut schedule = TemperSchedule {
        thetas: vec![0.0],
        ess_target_fraction: params.ess_target,
    };
    let mut theta = 0.0;
    let mut stage = 0;
    while theta < 1.0 {
        let base: Vec<f64> = ens.particles.iter().map(|p| p.log_weight).collect();
        let log_lik: Vec<f64> = ens
            .particles
            .iter()
            .map(|p| p.phi.map_or(f64::NEG_INFINITY, |v| -v))
            .collect();
        let remaining = 1.0 - theta;
        let step = adapt_weighted(&base, &log_lik, remaining, params.ess_target)?;
        if step.floor_hit {
            log::warn!(
                "window {}: tempering step at θ = {theta} fell to the floor {DELTA_THETA_FLOOR}",
                ctx.window_index
            );
            report.delta_theta_floor_hits += 1;
        }
        for (p, l) in ens.particles.iter_mut().zip(&log_lik) {
            p.log_weight += step.value * l;
        }
        let (w, e) = weigh(ens)?;
        report.ess = report.ess.min(e);
        theta = if step.value >= remaining { 1.0 } else { theta + step.value };
        schedule.thetas.push(theta);

        resample(ens, &w, ctx, stage)?;
        report.resampled = true;
        let stats = jitter_all(ens, y, model, theta, params, ctx, stage, false);
        report.jitter = report.jitter.merge(stats);
        stage += 1;
    }
    report.tempering_stages = stage;
    report.schedule = Some(schedule);
    Ok(report)
}

/// Jitter every particle in parallel with its own stream for (`ctx`, `stage`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn jitter_all(
    ens: &mut Ensemble,
    y: &Observation,
    model: &dyn Model,
    theta: f64,
    params: &FilterParams,
    ctx: &WindowContext,
    stage: usize,
    with_penalty: bool,
) -> JitterStats {
    if params.n_jitter == 0 {
        return JitterStats::default();
    }
    ens.particles
        .par_iter_mut()
        .enumerate()
        .map(|(i, p)| {
            let mut stream = ctx.key(Purpose::JitterNoise, i, stage).derive();
            mcmc_jitter(p, y, theta, params.delta, params.n_jitter, model, with_penalty, &mut stream).unwrap_or(
                JitterStats {
                    proposed: params.n_jitter,
                    accepted: 0,
                    failed: params.n_jitter,
                },
            )
        })
        .reduce(JitterStats::default, JitterStats::merge)
}
