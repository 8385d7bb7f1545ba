//! Run directory layout and CSV schemas.
//!
//! ```text
//! <out>/config.toml            resolved configuration
//! <out>/meta.toml              run metadata (RunMeta)
//! <out>/mesh.csv               dof,x,kind
//! <out>/truth.csv              time_index,time,x0,x1,...
//! <out>/observations.csv       window_index,point_index,x,value,reference
//! <out>/diagnostics.csv        window_index,ess,rmse,rb,res
//! <out>/ranks.csv              window_index,point_index,rank
//! <out>/filter_log.csv         per-window filter statistics
//! <out>/posterior.csv          linear model only: window_index,mean,variance,exact_mean,exact_variance
//! <out>/snapshots/initial.csv  dof,x,truth,p0,p1,...
//! <out>/snapshots/window_%05d.csv
//! ```
//!
//! Every CSV except the snapshots starts with a `# nudging <name> v<N>` comment
//! line naming its schema. Floats are written with the shortest representation
//! that round-trips.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{AssimilationReport, Ensemble};
use crate::metrics::DiagnosticsRecord;
use crate::model::Model;

use super::config::{BuiltModel, ExperimentConfig};
use super::{PosteriorRow, TwinData};

pub const SCHEMA_VERSION: u32 = 1;

pub const DIAGNOSTICS_COLUMNS: [&str; 5] = ["window_index", "ess", "rmse", "rb", "res"];
pub const RANKS_COLUMNS: [&str; 3] = ["window_index", "point_index", "rank"];
pub const POSTERIOR_COLUMNS: [&str; 5] = ["window_index", "mean", "variance", "exact_mean", "exact_variance"];
pub const OBSERVATION_COLUMNS: [&str; 5] = ["window_index", "point_index", "x", "value", "reference"];
pub const FILTER_LOG_COLUMNS: [&str; 12] = [
    "window_index",
    "ess_fraction",
    "resampled",
    "tempering_stages",
    "jitter_proposed",
    "jitter_accepted",
    "failed_propagations",
    "stage1_fallbacks",
    "stage2_unconverged",
    "stage3_failures",
    "floor_hits",
    "error",
];

/// Contents of `meta.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub preset: String,
    pub model: String,
    pub filter: String,
    pub n_particles: usize,
    pub n_windows: usize,
    pub steps_per_window: usize,
    pub dt: f64,
    pub master_seed: u64,
    pub obs_variance: f64,
    /// Bins of the rank histogram, `n_particles + 1`.
    pub rank_bins: usize,
    pub state_dim: usize,
    pub obs_points: Vec<f64>,
    /// Periodic domain length and cell count for finite-element models.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_cells: Option<usize>,
}

impl RunMeta {
    pub fn new(cfg: &ExperimentConfig, built: &BuiltModel) -> Self {
        let model = built.as_dyn();
        let (domain_length, n_cells) = match built {
            BuiltModel::Sks(m) => (Some(m.params.length), Some(m.params.n_cells)),
            BuiltModel::Linear(_) => (None, None),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            preset: cfg.preset.name().to_string(),
            model: model.name().to_string(),
            filter: cfg.filter.name().to_string(),
            n_particles: cfg.n_particles,
            n_windows: cfg.n_windows,
            steps_per_window: cfg.steps_per_window,
            dt: model.dt(),
            master_seed: cfg.master_seed,
            obs_variance: cfg.obs.variance,
            rank_bins: cfg.n_particles + 1,
            state_dim: model.state_dim(),
            obs_points: model.obs_coordinates(),
            domain_length,
            n_cells,
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("meta.toml"))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("meta.toml: {e}")))
    }
}

fn header_line(name: &str) -> String {
    format!("# nudging {name} v{SCHEMA_VERSION}\n")
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// A CSV file with a schema comment line and a header row.
fn create_csv(path: &Path, name: &str, columns: &[&str]) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(header_line(name).as_bytes())?;
    let mut w = csv::Writer::from_writer(f);
    w.write_record(columns)?;
    Ok(w)
}

/// Reader that skips the schema comment and checks the header row.
pub fn open_csv(path: &Path, columns: &[&str]) -> Result<csv::Reader<File>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < columns.len() || headers.iter().zip(columns).any(|(h, c)| h != *c) {
        return Err(Error::Config(format!(
            "{}: expected columns {columns:?}, found {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        )));
    }
    Ok(r)
}

fn parse<T: std::str::FromStr>(path: &Path, field: Option<&str>) -> Result<T> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config(format!("{}: malformed field {field:?}", path.display())))
}

pub fn write_mesh(dir: &Path, model: &dyn Model) -> Result<()> {
    let mut w = create_csv(&dir.join("mesh.csv"), "mesh", &["dof", "x", "kind"])?;
    let is_fem = model.name() == "sks";
    for (k, x) in model.dof_coordinates().into_iter().enumerate() {
        let kind = match (is_fem, k % 2) {
            (false, _) => "state",
            (true, 0) => "vertex",
            (true, _) => "midpoint",
        };
        w.write_record([k.to_string(), fmt(x), kind.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

impl TwinData {
    pub fn write(&self, dir: &Path, model: &dyn Model) -> Result<()> {
        fs::create_dir_all(dir)?;
        let dim = self.truth.first().map_or(0, Vec::len);
        let mut cols = vec!["time_index".to_string(), "time".to_string()];
        cols.extend((0..dim).map(|j| format!("x{j}")));
        let cols_ref: Vec<&str> = cols.iter().map(String::as_str).collect();
        let mut w = create_csv(&dir.join("truth.csv"), "truth", &cols_ref)?;
        for (k, x) in self.truth.iter().enumerate() {
            let mut row = vec![k.to_string(), fmt(k as f64 * self.window_length)];
            row.extend(x.iter().map(|&v| fmt(v)));
            w.write_record(&row)?;
        }
        w.flush()?;

        let mut w = create_csv(&dir.join("observations.csv"), "observations", &OBSERVATION_COLUMNS)?;
        let mut xs = model.obs_coordinates();
        for (k, (y, r)) in self.observations.iter().zip(&self.reference).enumerate() {
            xs.resize(y.len(), 0.0);
            for (j, ((v, rv), x)) in y.iter().zip(r).zip(&xs).enumerate() {
                w.write_record([k.to_string(), j.to_string(), fmt(*x), fmt(*v), fmt(*rv)])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load `truth.csv` and `observations.csv` written by [`TwinData::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("truth.csv");
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path)?;
        let mut truth = Vec::new();
        let mut times = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let k: usize = parse(&path, rec.get(0))?;
            if k != truth.len() {
                return Err(Error::Config(format!("{}: time_index {k} out of order", path.display())));
            }
            times.push(parse::<f64>(&path, rec.get(1))?);
            truth.push(
                (2..rec.len())
                    .map(|i| parse(&path, rec.get(i)))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        let window_length = if times.len() > 1 { times[1] - times[0] } else { 0.0 };

        let path = dir.join("observations.csv");
        let mut r = open_csv(&path, &OBSERVATION_COLUMNS)?;
        let mut observations: Vec<Vec<f64>> = Vec::new();
        let mut reference: Vec<Vec<f64>> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let k: usize = parse(&path, rec.get(0))?;
            if k == observations.len() {
                observations.push(Vec::new());
                reference.push(Vec::new());
            } else if k + 1 != observations.len() {
                return Err(Error::Config(format!("{}: window_index {k} out of order", path.display())));
            }
            observations[k].push(parse(&path, rec.get(3))?);
            reference[k].push(parse(&path, rec.get(4))?);
        }
        Ok(Self {
            truth,
            observations,
            reference,
            window_length,
        })
    }
}

/// Streams the per-window files of one run.
pub struct RunWriter {
    dir: PathBuf,
    diagnostics: csv::Writer<BufWriter<File>>,
    ranks: csv::Writer<BufWriter<File>>,
    log: csv::Writer<BufWriter<File>>,
    posterior: Option<csv::Writer<BufWriter<File>>>,
    snapshot_every: usize,
    dof_x: Vec<f64>,
}

impl RunWriter {
    /// Create the run directory and write the configuration, metadata and mesh.
    pub fn create(dir: &Path, cfg: &ExperimentConfig, built: &BuiltModel) -> Result<Self> {
        fs::create_dir_all(dir.join("snapshots"))?;
        let model = built.as_dyn();
        fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
        let meta = toml::to_string(&RunMeta::new(cfg, built)).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join("meta.toml"), meta)?;
        write_mesh(dir, model)?;
        let posterior = match built {
            BuiltModel::Linear(_) => Some(create_csv(&dir.join("posterior.csv"), "posterior", &POSTERIOR_COLUMNS)?),
            BuiltModel::Sks(_) => None,
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            diagnostics: create_csv(&dir.join("diagnostics.csv"), "diagnostics", &DIAGNOSTICS_COLUMNS)?,
            ranks: create_csv(&dir.join("ranks.csv"), "ranks", &RANKS_COLUMNS)?,
            log: create_csv(&dir.join("filter_log.csv"), "filter_log", &FILTER_LOG_COLUMNS)?,
            posterior,
            snapshot_every: cfg.snapshot_every,
            dof_x: model.dof_coordinates(),
        })
    }

    pub fn record(&mut self, rec: &DiagnosticsRecord) -> Result<()> {
        self.diagnostics.write_record([
            rec.window_index.to_string(),
            fmt(rec.ess),
            fmt(rec.rmse),
            fmt(rec.rb),
            fmt(rec.res),
        ])?;
        for (j, r) in rec.ranks.iter().enumerate() {
            self.ranks
                .write_record([rec.window_index.to_string(), j.to_string(), r.to_string()])?;
        }
        Ok(())
    }

    pub fn log(&mut self, window: usize, report: Option<&AssimilationReport>, error: Option<&str>) -> Result<()> {
        let d = AssimilationReport::default();
        let r = report.unwrap_or(&d);
        let frac = if r.n_particles > 0 { fmt(r.ess_fraction()) } else { String::new() };
        self.log.write_record([
            window.to_string(),
            frac,
            r.resampled.to_string(),
            r.tempering_stages.to_string(),
            r.jitter.proposed.to_string(),
            r.jitter.accepted.to_string(),
            r.failed_propagations.to_string(),
            r.stage1_fallbacks.to_string(),
            r.stage2_unconverged.to_string(),
            r.stage3_failures.to_string(),
            r.delta_theta_floor_hits.to_string(),
            error.unwrap_or("").to_string(),
        ])?;
        Ok(())
    }

    pub fn posterior(&mut self, row: &PosteriorRow) -> Result<()> {
        if let Some(w) = &mut self.posterior {
            w.write_record([
                row.window_index.to_string(),
                fmt(row.mean),
                fmt(row.variance),
                fmt(row.exact_mean),
                fmt(row.exact_variance),
            ])?;
        }
        Ok(())
    }

    /// Snapshot after `window`, if due; `None` writes the initial ensemble.
    pub fn snapshot(&mut self, window: Option<usize>, ens: &Ensemble, truth: &[f64]) -> Result<()> {
        let name = match window {
            None => "initial.csv".to_string(),
            Some(k) if self.snapshot_every > 0 && k % self.snapshot_every == 0 => format!("window_{k:05}.csv"),
            Some(_) => return Ok(()),
        };
        write_snapshot(&self.dir.join("snapshots").join(name), ens, truth, &self.dof_x)
    }

    pub fn finish(mut self) -> Result<()> {
        self.diagnostics.flush()?;
        self.ranks.flush()?;
        self.log.flush()?;
        if let Some(w) = &mut self.posterior {
            w.flush()?;
        }
        Ok(())
    }
}

/// Ensemble as a `dofs × particles` matrix, with the truth alongside.
pub fn write_snapshot(path: &Path, ens: &Ensemble, truth: &[f64], dof_x: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["dof".to_string(), "x".to_string(), "truth".to_string()];
    header.extend((0..ens.len()).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    let states = ens.states();
    for (k, x) in dof_x.iter().enumerate() {
        let mut row = vec![k.to_string(), fmt(*x), truth.get(k).map_or(String::new(), |v| fmt(*v))];
        row.extend(states.iter().map(|s| fmt(s[k])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed row of `diagnostics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRow {
    pub window_index: usize,
    pub ess: f64,
    pub rmse: f64,
    pub rb: f64,
    pub res: f64,
}

pub fn read_diagnostics(dir: &Path) -> Result<Vec<DiagnosticsRow>> {
    let path = dir.join("diagnostics.csv");
    let mut r = open_csv(&path, &DIAGNOSTICS_COLUMNS)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(DiagnosticsRow {
                window_index: parse(&path, rec.get(0))?,
                ess: parse(&path, rec.get(1))?,
                rmse: parse(&path, rec.get(2))?,
                rb: parse(&path, rec.get(3))?,
                res: parse(&path, rec.get(4))?,
            })
        })
        .collect()
}

/// `posterior.csv`, if the run wrote one.
pub fn read_posterior(dir: &Path) -> Result<Option<Vec<PosteriorRow>>> {
    let path = dir.join("posterior.csv");
    if !path.exists() {
        return Ok(None);
    }
    let mut r = open_csv(&path, &POSTERIOR_COLUMNS)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(PosteriorRow {
                window_index: parse(&path, rec.get(0))?,
                mean: parse(&path, rec.get(1))?,
                variance: parse(&path, rec.get(2))?,
                exact_mean: parse(&path, rec.get(3))?,
                exact_variance: parse(&path, rec.get(4))?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// All ranks in `ranks.csv`.
pub fn read_ranks(dir: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let path = dir.join("ranks.csv");
    let mut r = open_csv(&path, &RANKS_COLUMNS)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((parse(&path, rec.get(0))?, parse(&path, rec.get(1))?, parse(&path, rec.get(2))?))
        })
        .collect()
}
