use rayon::prelude::*;

use crate::error::Result;
use crate::likelihood::Observation;
use crate::model::Model;

use super::{needs_resample, refresh_all, resample, weigh, AssimilationReport, Ensemble, FilterParams, WindowContext};

/// Bootstrap filter: propagate with fresh noise, weight by the likelihood,
/// resample when the ESS falls below the threshold.
pub fn bootstrap_assimilate(
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
    let failed = refresh_all(ens, y, model);
    for p in &mut ens.particles {
        if let Some(phi) = p.phi {
            p.log_weight -= phi;
        }
    }
    let (w, e) = weigh(ens)?;
    let mut report = AssimilationReport {
        ess: e,
        n_particles: ens.len(),
        failed_propagations: failed,
        ..Default::default()
    };
    if needs_resample(ens, e, params.resample_threshold) {
        resample(ens, &w, ctx, 0)?;
        report.resampled = true;
    }
    Ok(report)
}
