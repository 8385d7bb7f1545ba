//! Summary tables over completed run directories.

use std::fmt::Write;
use std::path::Path;

use crate::error::Result;

use super::output::{read_diagnostics, read_posterior, DiagnosticsRow, RunMeta};
use super::PosteriorRow;

/// Time-averaged diagnostics of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub meta: RunMeta,
    pub windows: usize,
    pub mean_ess_fraction: f64,
    pub min_ess_fraction: f64,
    /// Share of windows whose pre-resample ESS exceeds 10% of the ensemble.
    pub ess_above_10pct: f64,
    pub mean_rmse: f64,
    pub mean_rb: f64,
    pub mean_res: f64,
    /// Posterior moments after the last window (linear model only).
    pub posterior: Option<PosteriorRow>,
}

impl RunSummary {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta = RunMeta::read(dir)?;
        let rows = read_diagnostics(dir)?;
        let posterior = read_posterior(dir)?.and_then(|p| p.last().cloned());
        Ok(Self::from_rows(meta, &rows, posterior))
    }

    pub fn from_rows(meta: RunMeta, rows: &[DiagnosticsRow], posterior: Option<PosteriorRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let np = meta.n_particles as f64;
        let mean = |f: fn(&DiagnosticsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            windows: rows.len(),
            mean_ess_fraction: mean(|r| r.ess) / np,
            min_ess_fraction: rows.iter().map(|r| r.ess).fold(f64::INFINITY, f64::min) / np,
            ess_above_10pct: rows.iter().filter(|r| r.ess > 0.1 * np).count() as f64 / n,
            mean_rmse: mean(|r| r.rmse),
            mean_rb: mean(|r| r.rb),
            mean_res: mean(|r| r.res),
            posterior,
            meta,
        }
    }
}

/// Posterior mean and variance tables for runs with an exact reference,
/// followed by time-mean diagnostics for every run.
pub fn format_report(runs: &[RunSummary]) -> String {
    let mut s = String::new();
    let exact: Vec<&RunSummary> = runs.iter().filter(|r| r.posterior.is_some()).collect();
    if !exact.is_empty() {
        let _ = writeln!(
            s,
            "{:<15} {:>8} {:>7} {:>11} {:>14} {:>11}",
            "Filter", "Ensemble", "ESS (%)", "Exact mean", "Ensemble mean", "Error"
        );
        for r in &exact {
            let p = r.posterior.as_ref().unwrap();
            let _ = writeln!(
                s,
                "{:<15} {:>8} {:>7.0} {:>11.6} {:>14.6} {:>11.6}",
                r.meta.filter,
                r.meta.n_particles,
                100.0 * r.mean_ess_fraction,
                p.exact_mean,
                p.mean,
                (p.mean - p.exact_mean).abs()
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<15} {:>8} {:>14} {:>17} {:>11}",
            "Filter", "Ensemble", "Exact variance", "Ensemble variance", "Error"
        );
        for r in &exact {
            let p = r.posterior.as_ref().unwrap();
            let _ = writeln!(
                s,
                "{:<15} {:>8} {:>14.6} {:>17.6} {:>11.6}",
                r.meta.filter,
                r.meta.n_particles,
                p.exact_variance,
                p.variance,
                (p.variance - p.exact_variance).abs()
            );
        }
        let _ = writeln!(s);
    }
    let _ = writeln!(
        s,
        "{:<15} {:>8} {:>8} {:>9} {:>8} {:>9} {:>9} {:>9} {:>9}",
        "Filter", "Ensemble", "Windows", "ESS mean%", "ESS min%", "ESS>10%", "RMSE", "RB", "RES"
    );
    for r in runs {
        let _ = writeln!(
            s,
            "{:<15} {:>8} {:>8} {:>9.1} {:>8.1} {:>9.2} {:>9.5} {:>9.5} {:>9.5}",
            r.meta.filter,
            r.meta.n_particles,
            r.windows,
            100.0 * r.mean_ess_fraction,
            100.0 * r.min_ess_fraction,
            r.ess_above_10pct,
            r.mean_rmse,
            r.mean_rb,
            r.mean_res
        );
    }
    s
}
