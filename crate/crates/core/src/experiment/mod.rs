//! Twin experiments: generate a reference trajectory and noisy observations,
//! run a filter against them, and record per-window diagnostics.

mod config;
mod output;
mod report;

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{assimilate, AssimilationReport, Ensemble, WindowContext};
use crate::likelihood::Observation;
use crate::linear_sde::{exact_gaussian_posterior, stationary_init_sampler, LinearSdeParams};
use crate::metrics::{DiagnosticsRecord, RankHistogram};
use crate::model::{ModelState, Model};
use crate::rng::{Purpose, StreamKey};
use crate::sks::{spin_up_initial, Sks};

pub use config::{
    BuiltModel, ExperimentConfig, FilterOverrides, LinearConfig, ObsConfig, Preset, LINEAR_VERIFICATION_Y,
};
pub use output::{
    open_csv, read_diagnostics, read_posterior, read_ranks, write_snapshot, DiagnosticsRow, RunMeta, RunWriter,
    DIAGNOSTICS_COLUMNS, FILTER_LOG_COLUMNS, OBSERVATION_COLUMNS, POSTERIOR_COLUMNS, RANKS_COLUMNS,
    SCHEMA_VERSION,
};
pub use report::{format_report, RunSummary};

/// Initial-stream slots reserved for the reference trajectory and the shared spin-up.
const TRUTH_SLOT: usize = usize::MAX;
const SPIN_UP_SLOT: usize = usize::MAX - 1;

/// Reference trajectory and observations of a twin experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinData {
    /// Truth at the end of each window; entry 0 is the initial state.
    pub truth: Vec<Vec<f64>>,
    /// Observation closing each window.
    pub observations: Vec<Vec<f64>>,
    /// What each window's diagnostics compare against: `h(truth)`, or the
    /// observation itself when observations are fixed by the config.
    pub reference: Vec<Vec<f64>>,
    /// Model time covered by one window.
    pub window_length: f64,
}

/// Simulate the truth with its own noise stream and perturb `h(truth)` with
/// iid `N(0, R)` errors.
pub fn generate_truth_and_obs(cfg: &ExperimentConfig) -> Result<TwinData> {
    cfg.validate()?;
    let built = cfg.build_model()?;
    let model = built.as_dyn();
    let mut x = initial_truth(cfg, &built)?;
    let sd = model.dt().sqrt();
    let obs_sd = cfg.obs.variance.sqrt();
    let mut data = TwinData {
        truth: vec![x.clone()],
        observations: Vec::with_capacity(cfg.n_windows),
        reference: Vec::with_capacity(cfg.n_windows),
        window_length: model.dt() * cfg.steps_per_window as f64,
    };
    for k in 0..cfg.n_windows {
        for n in 0..cfg.steps_per_window {
            let mut s = StreamKey::new(cfg.master_seed, Purpose::TruthNoise).window(k).substep(n).derive();
            let dw = s.normal_vec(model.noise_dim(), sd);
            x = model
                .step(&x, &dw)
                .map_err(|e| Error::Propagation {
                    substep: n,
                    source: Box::new(e),
                })
                .map_err(Error::in_window(k))?;
        }
        let h = model.observe(&x);
        let (y, reference) = match &cfg.obs.fixed_values {
            Some(v) => (v.clone(), v.clone()),
            None => {
                let mut s = StreamKey::new(cfg.master_seed, Purpose::ObsNoise).window(k).derive();
                let y = h.iter().map(|v| v + obs_sd * s.standard_normal()).collect();
                (y, h)
            }
        };
        data.truth.push(x.clone());
        data.observations.push(y);
        data.reference.push(reference);
    }
    Ok(data)
}

/// Shared SKS starting state `u_0`: the initial profile after `spinup_steps`.
pub fn shared_spin_up(cfg: &ExperimentConfig, model: &Sks) -> Result<Vec<f64>> {
    let mut s = StreamKey::new(cfg.master_seed, Purpose::Initial).particle(SPIN_UP_SLOT).derive();
    spin_up_initial(model, cfg.spinup_steps, &mut s)
}

/// Initial state for `slot`: a stationary draw for the linear model; for SKS,
/// `u_0` followed by `spread_steps` free steps with the slot's own noise.
fn initial_state(cfg: &ExperimentConfig, built: &BuiltModel, u0: Option<&[f64]>, slot: usize) -> Result<Vec<f64>> {
    let mut s = StreamKey::new(cfg.master_seed, Purpose::Initial).particle(slot).derive();
    match built {
        BuiltModel::Linear(m) => Ok(vec![stationary_init_sampler(&m.params, &mut s)]),
        BuiltModel::Sks(m) => {
            let u0 = u0.ok_or_else(|| Error::invalid("SKS initial states need u_0"))?;
            let sd = m.params.dt.sqrt();
            let mut u = u0.to_vec();
            for n in 0..cfg.spread_steps {
                let dw = s.normal_vec(m.noise_dim(), sd);
                u = m.step(&u, &dw).map_err(|e| Error::Propagation {
                    substep: n,
                    source: Box::new(e),
                })?;
            }
            Ok(u)
        }
    }
}

fn initial_truth(cfg: &ExperimentConfig, built: &BuiltModel) -> Result<Vec<f64>> {
    let u0 = match built {
        BuiltModel::Sks(m) => Some(shared_spin_up(cfg, m)?),
        BuiltModel::Linear(_) => None,
    };
    initial_state(cfg, built, u0.as_deref(), TRUTH_SLOT)
}

/// Initial ensemble: stationary draws for the linear model; for SKS, every
/// particle starts at the shared `u_0` and runs `spread_steps` free steps of
/// its own, as the truth does.
pub fn initial_ensemble(cfg: &ExperimentConfig, built: &BuiltModel) -> Result<Ensemble> {
    let model = built.as_dyn();
    let u0 = match built {
        BuiltModel::Sks(m) => Some(shared_spin_up(cfg, m)?),
        BuiltModel::Linear(_) => None,
    };
    let states: Vec<Vec<f64>> = (0..cfg.n_particles)
        .into_par_iter()
        .map(|i| initial_state(cfg, built, u0.as_deref(), i))
        .collect::<Result<_>>()?;
    Ensemble::from_states(model, states.into_iter().map(ModelState::new).collect(), cfg.steps_per_window)
}

/// Ensemble and exact posterior moments of the linear model after one window.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorRow {
    pub window_index: usize,
    pub mean: f64,
    pub variance: f64,
    pub exact_mean: f64,
    pub exact_variance: f64,
}

/// Exact filtering recursion for the discretised linear model started from
/// its stationary law: returns the posterior `(mean, variance)` after each window.
pub fn linear_exact_posteriors(p: &LinearSdeParams, obs: &[Vec<f64>], obs_variance: f64) -> Result<Vec<(f64, f64)>> {
    let c = p.contraction();
    let step_var = p.dt * (p.d / (1.0 + 0.5 * p.a * p.dt)).powi(2);
    let c_win = c.powi(p.n_steps as i32);
    let q: f64 = (0..p.n_steps).map(|k| step_var * c.powi(2 * k as i32)).sum();
    let (mut m, mut v) = (0.0, p.stationary_variance());
    let mut out = Vec::with_capacity(obs.len());
    for y in obs {
        let (pm, pv) = (c_win * m, c_win * c_win * v + q);
        (m, v) = exact_gaussian_posterior(pm, pv, y[0], obs_variance)?;
        out.push((m, v));
    }
    Ok(out)
}

/// In-memory results of a filtering run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub records: Vec<DiagnosticsRecord>,
    pub reports: Vec<AssimilationReport>,
    pub rank_histogram: RankHistogram,
    /// Linear model only.
    pub posterior: Vec<PosteriorRow>,
    /// Windows whose assimilation failed (only when `continue_on_error`).
    pub failed_windows: Vec<usize>,
    pub ensemble: Ensemble,
}

/// Run the configured filter over `data`. With `out`, the run directory is
/// written as the run progresses.
pub fn run_experiment(cfg: &ExperimentConfig, data: &TwinData, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    if data.observations.len() < cfg.n_windows || data.truth.len() < cfg.n_windows + 1 {
        return Err(Error::Config(format!(
            "twin data covers {} windows, config asks for {}",
            data.observations.len(),
            cfg.n_windows
        )));
    }
    let built = cfg.build_model()?;
    let model = built.as_dyn();
    if data.truth[0].len() != model.state_dim() {
        return Err(Error::Config("twin data does not match the model dimension".into()));
    }
    let params = cfg.filter_params();
    let mut ens = initial_ensemble(cfg, &built)?;
    let exact = match &built {
        BuiltModel::Linear(m) => linear_exact_posteriors(&m.params, &data.observations[..cfg.n_windows], cfg.obs.variance)?,
        BuiltModel::Sks(_) => Vec::new(),
    };

    let mut writer = match out {
        Some(dir) => {
            let mut w = RunWriter::create(dir, cfg, &built)?;
            w.snapshot(None, &ens, &data.truth[0])?;
            Some(w)
        }
        None => None,
    };
    let mut outcome = RunOutcome {
        records: Vec::with_capacity(cfg.n_windows),
        reports: Vec::with_capacity(cfg.n_windows),
        rank_histogram: RankHistogram::new(cfg.n_particles),
        posterior: Vec::new(),
        failed_windows: Vec::new(),
        ensemble: ens.clone(),
    };

    for k in 0..cfg.n_windows {
        let y = Observation::new(data.observations[k].clone(), k, cfg.obs.variance).map_err(Error::in_window(k))?;
        let ctx = WindowContext::new(cfg.master_seed, k);
        let report = match assimilate(cfg.filter, &mut ens, &y, model, &params, &ctx) {
            Ok(r) => r,
            Err(e) if cfg.continue_on_error => {
                log::warn!("window {k}: {e}");
                ens.particles.iter_mut().for_each(|p| p.log_weight = 0.0);
                outcome.failed_windows.push(k);
                if let Some(w) = &mut writer {
                    w.log(k, None, Some(&e.to_string()))?;
                }
                continue;
            }
            Err(e) => return Err(Error::in_window(k)(e)),
        };
        let hx: Vec<Vec<f64>> = ens.particles.par_iter().map(|p| model.observe(&p.state().dof)).collect();
        let mut ties = StreamKey::new(cfg.master_seed, Purpose::RankTies).window(k).derive();
        let rec = DiagnosticsRecord::compute(k, report.ess, &data.reference[k], &hx, &mut ties)
            .map_err(Error::in_window(k))?;
        for &r in &rec.ranks {
            outcome.rank_histogram.add(r)?;
        }
        if let BuiltModel::Linear(_) = built {
            let (mean, variance) = ens.moments(0)?;
            let (exact_mean, exact_variance) = exact[k];
            let row = PosteriorRow {
                window_index: k,
                mean,
                variance,
                exact_mean,
                exact_variance,
            };
            if let Some(w) = &mut writer {
                w.posterior(&row)?;
            }
            outcome.posterior.push(row);
        }
        if let Some(w) = &mut writer {
            w.record(&rec)?;
            w.log(k, Some(&report), None)?;
            w.snapshot(Some(k), &ens, &data.truth[k + 1])?;
        }
        log::info!(
            "window {k}: ESS {:.1}% rmse {:.4} rb {:.4} res {:.4}",
            100.0 * report.ess_fraction(),
            rec.rmse,
            rec.rb,
            rec.res
        );
        outcome.records.push(rec);
        outcome.reports.push(report);
    }
    if let Some(w) = writer {
        w.finish()?;
    }
    outcome.ensemble = ens;
    Ok(outcome)
}
