//! Experiment configuration and the two named presets.
//!
//! A config file is TOML. Its `preset` key selects a set of defaults; every
//! other key overrides them:
//!
//! ```toml
//! preset = "sks_benchmark"
//! filter = "temper_jitter"
//! n_particles = 30
//! n_windows = 150
//!
//! [sks]
//! n_cells = 32
//!
//! [filter_params]
//! n_jitter = 10
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{FilterKind, FilterParams, NoiseTiming};
use crate::linear_sde::{LinearSde, LinearSdeParams};
use crate::model::Model;
use crate::sks::{Sks, SksParams};

/// Observation of the linear preset.
pub const LINEAR_VERIFICATION_Y: f64 = -0.055634;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    LinearVerification,
    SksBenchmark,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::LinearVerification => "linear_verification",
            Preset::SksBenchmark => "sks_benchmark",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_verification" | "linear" => Ok(Preset::LinearVerification),
            "sks_benchmark" | "sks" => Ok(Preset::SksBenchmark),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsConfig {
    /// Observation error variance `R`.
    pub variance: f64,
    /// Number of equispaced observation points (SKS only).
    pub n_points: usize,
    /// Use these values as the observation of every window instead of
    /// perturbing the truth (linear model only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConfig {
    pub a: f64,
    pub d: f64,
    pub dt: f64,
}

/// Overrides applied on top of [`FilterParams::for_filter`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_jitter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1_max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage2_max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage2_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_timing: Option<NoiseTiming>,
}

impl FilterOverrides {
    pub fn apply(&self, mut p: FilterParams) -> FilterParams {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { p.$f = v; })*};
        }
        set!(
            sigma,
            delta,
            n_jitter,
            ess_target,
            resample_threshold,
            stage1_max_iter,
            stage1_tol,
            stage2_max_iter,
            stage2_tol,
            noise_timing
        );
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub filter: FilterKind,
    pub n_particles: usize,
    pub master_seed: u64,
    pub n_windows: usize,
    /// Model substeps per assimilation window `N_s`.
    pub steps_per_window: usize,
    /// Keep going after a window whose assimilation fails.
    pub continue_on_error: bool,
    /// Write an ensemble snapshot every this many windows; 0 disables them.
    pub snapshot_every: usize,
    pub out_dir: PathBuf,
    pub obs: ObsConfig,
    pub linear: LinearConfig,
    pub sks: SksParams,
    /// SKS: stochastic steps from the interpolated initial profile to `u_0`.
    pub spinup_steps: usize,
    /// SKS: independent free-running steps each particle takes from `u_0`
    /// before the first window.
    pub spread_steps: usize,
    #[serde(default)]
    pub filter_params: FilterOverrides,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let linear = LinearConfig {
            a: 1.0,
            d: 1.0,
            dt: 0.1,
        };
        let sks = SksParams::default();
        match preset {
            Preset::LinearVerification => Self {
                preset,
                filter: FilterKind::Nudge,
                n_particles: 300,
                master_seed: 0,
                n_windows: 1,
                steps_per_window: 10,
                continue_on_error: false,
                snapshot_every: 1,
                out_dir: PathBuf::from("runs/linear_verification"),
                obs: ObsConfig {
                    variance: 0.01,
                    n_points: 1,
                    fixed_values: Some(vec![LINEAR_VERIFICATION_Y]),
                },
                linear,
                sks,
                spinup_steps: 200,
                spread_steps: 20,
                filter_params: FilterOverrides::default(),
            },
            Preset::SksBenchmark => Self {
                preset,
                filter: FilterKind::Nudge,
                n_particles: 90,
                master_seed: 0,
                n_windows: 900,
                steps_per_window: 5,
                continue_on_error: false,
                snapshot_every: 1,
                out_dir: PathBuf::from("runs/sks_benchmark"),
                obs: ObsConfig {
                    variance: 2.5,
                    n_points: 10,
                    fixed_values: None,
                },
                linear,
                sks,
                spinup_steps: 200,
                spread_steps: 20,
                filter_params: FilterOverrides::default(),
            },
        }
    }

    /// Parse a config, filling unset keys from the selected preset.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match user.get("preset") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("preset must be a string".into())),
            None => Preset::LinearVerification,
        };
        let mut base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        base.insert("preset".into(), preset.name().into());
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn filter_params(&self) -> FilterParams {
        self.filter_params.apply(FilterParams::for_filter(self.filter))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_particles == 0 {
            return bad("n_particles must be at least 1".into());
        }
        if self.steps_per_window == 0 {
            return bad("steps_per_window must be at least 1".into());
        }
        if !(self.obs.variance >= 0.0) {
            return bad(format!("observation variance {} is negative", self.obs.variance));
        }
        match (self.preset, &self.obs.fixed_values) {
            (Preset::SksBenchmark, Some(_)) => return bad("fixed observations are only supported for the linear model".into()),
            (Preset::LinearVerification, Some(v)) if v.len() != 1 => {
                return bad("the linear model observes one value per window".into())
            }
            _ => {}
        }
        if self.preset == Preset::SksBenchmark && self.obs.n_points == 0 {
            return bad("need at least one observation point".into());
        }
        self.filter_params().validate()?;
        self.build_model().map(|_| ())
    }

    pub fn build_model(&self) -> Result<BuiltModel> {
        match self.preset {
            Preset::LinearVerification => {
                let params = LinearSdeParams {
                    a: self.linear.a,
                    d: self.linear.d,
                    dt: self.linear.dt,
                    n_steps: self.steps_per_window,
                };
                Ok(BuiltModel::Linear(LinearSde::new(params)?))
            }
            Preset::SksBenchmark => Ok(BuiltModel::Sks(Sks::with_equispaced_obs(
                self.sks.clone(),
                self.obs.n_points,
            )?)),
        }
    }
}

/// Recursively overwrite `base` with the entries of `over`.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// The model selected by a config.
#[derive(Clone, Debug)]
pub enum BuiltModel {
    Linear(LinearSde),
    Sks(Sks),
}

impl BuiltModel {
    pub fn as_dyn(&self) -> &dyn Model {
        match self {
            BuiltModel::Linear(m) => m,
            BuiltModel::Sks(m) => m,
        }
    }
}
