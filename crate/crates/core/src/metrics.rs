//! Ensemble diagnostics in observation space.
//!
//! `hx` holds one row `h(X_i)` per particle. All metrics are unweighted: they
//! are evaluated on the equally weighted ensemble left after resampling.

use crate::error::{Error, Result};
use crate::rng::NoiseStream;

fn check(y_true: &[f64], hx: &[Vec<f64>]) -> Result<()> {
    if hx.is_empty() {
        return Err(Error::invalid("empty ensemble"));
    }
    if let Some(r) = hx.iter().find(|r| r.len() != y_true.len()) {
        return Err(Error::invalid(format!(
            "ensemble row of length {} against a truth of length {}",
            r.len(),
            y_true.len()
        )));
    }
    Ok(())
}

fn norm2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Componentwise ensemble mean.
pub fn ensemble_mean(hx: &[Vec<f64>]) -> Vec<f64> {
    let m = hx.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; m];
    for row in hx {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    let n = hx.len() as f64;
    mean.iter_mut().for_each(|a| *a /= n);
    mean
}

/// Mean over particles of `‖y_true − h(X_i)‖₂ / ‖y_true‖₂`.
pub fn rmse(y_true: &[f64], hx: &[Vec<f64>]) -> Result<f64> {
    check(y_true, hx)?;
    let scale = norm2(y_true.iter().copied());
    if scale == 0.0 {
        return Err(Error::UndefinedMetric("RMSE of a zero truth"));
    }
    let total: f64 = hx
        .iter()
        .map(|row| norm2(y_true.iter().zip(row).map(|(t, v)| t - v)))
        .sum();
    Ok(total / (hx.len() as f64 * scale))
}

/// `‖y_true − mean h(X)‖₁ / ‖y_true‖₁`.
pub fn rb(y_true: &[f64], hx: &[Vec<f64>]) -> Result<f64> {
    check(y_true, hx)?;
    let scale: f64 = y_true.iter().map(|v| v.abs()).sum();
    if scale == 0.0 {
        return Err(Error::UndefinedMetric("RB of a zero truth"));
    }
    let mean = ensemble_mean(hx);
    Ok(y_true.iter().zip(&mean).map(|(t, m)| (t - m).abs()).sum::<f64>() / scale)
}

/// `Σ ‖mean h(X) − h(X_i)‖₂² / ((N_p − 1) ‖y_true‖₂²)`.
pub fn res(y_true: &[f64], hx: &[Vec<f64>]) -> Result<f64> {
    check(y_true, hx)?;
    if hx.len() < 2 {
        return Err(Error::UndefinedMetric("RES needs at least two particles"));
    }
    let scale: f64 = y_true.iter().map(|v| v * v).sum();
    if scale == 0.0 {
        return Err(Error::UndefinedMetric("RES of a zero truth"));
    }
    let mean = ensemble_mean(hx);
    let total: f64 = hx
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum();
    Ok(total / ((hx.len() - 1) as f64 * scale))
}

/// Rank of `truth` among `values`: the count strictly below, plus a uniform
/// draw over the slots among exact ties. Draws from `ties` only when there is a tie.
pub fn rank_update(truth: f64, values: &[f64], ties: &mut NoiseStream) -> usize {
    let below = values.iter().filter(|&&v| v < truth).count();
    let equal = values.iter().filter(|&&v| v == truth).count();
    if equal == 0 {
        return below;
    }
    let extra = ((equal + 1) as f64 * ties.uniform()) as usize;
    below + extra.min(equal)
}

/// Pooled rank counts with `N_p + 1` bins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankHistogram {
    pub counts: Vec<u64>,
}

impl RankHistogram {
    pub fn new(n_particles: usize) -> Self {
        Self {
            counts: vec![0; n_particles + 1],
        }
    }

    pub fn add(&mut self, rank: usize) -> Result<()> {
        let n = self.counts.len();
        let slot = self
            .counts
            .get_mut(rank)
            .ok_or_else(|| Error::invalid(format!("rank {rank} outside 0..{n}")))?;
        *slot += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Pearson χ² statistic against the uniform distribution over bins.
    pub fn chi_square_uniform(&self) -> f64 {
        let total = self.total() as f64;
        let expect = total / self.counts.len() as f64;
        if expect == 0.0 {
            return 0.0;
        }
        self.counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum()
    }
}

/// Diagnostics of one assimilation window.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub window_index: usize,
    pub ess: f64,
    pub rmse: f64,
    pub rb: f64,
    pub res: f64,
    /// Rank of the truth at each observation point.
    pub ranks: Vec<usize>,
}

impl DiagnosticsRecord {
    /// Compute every metric for one window. `h_truth` is the noiseless observed
    /// truth; ranks are taken against the raw ensemble values.
    pub fn compute(
        window_index: usize,
        ess: f64,
        h_truth: &[f64],
        hx: &[Vec<f64>],
        ties: &mut NoiseStream,
    ) -> Result<Self> {
        let ranks = (0..h_truth.len())
            .map(|j| {
                let col: Vec<f64> = hx.iter().map(|r| r[j]).collect();
                rank_update(h_truth[j], &col, ties)
            })
            .collect();
        let res_value = if hx.len() < 2 { 0.0 } else { res(h_truth, hx)? };
        Ok(Self {
            window_index,
            ess,
            rmse: rmse(h_truth, hx)?,
            rb: rb(h_truth, hx)?,
            res: res_value,
            ranks,
        })
    }

    /// Metrics are finite and non-negative, ranks at most `n_particles`.
    pub fn is_valid(&self, n_particles: usize) -> bool {
        [self.ess, self.rmse, self.rb, self.res]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.ranks.iter().all(|&r| r <= n_particles)
    }
}
