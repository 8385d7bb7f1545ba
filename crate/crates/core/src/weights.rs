//! Log-space weight bookkeeping, effective sample size, and systematic resampling.

use crate::error::{Error, Result};

/// Normalised linear-scale weights from log-weights (max-shifted before
/// exponentiating, so entries down to about -1e4 and below are safe).
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let max = log_w
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let mut w: Vec<f64> = log_w
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Normalised log-weights: `log_w - logsumexp(log_w)`.
pub fn normalize_log_space(log_w: &[f64]) -> Result<Vec<f64>> {
    let w = normalize_log_weights(log_w)?;
    Ok(w.into_iter().map(f64::ln).collect())
}

/// `1 / Σ w²` for normalised weights.
pub fn ess(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}

/// `(Σ e^{-φ})² / Σ e^{-2φ}`, evaluated after shifting by `min φ`.
pub fn ess_from_phi(phi: &[f64]) -> f64 {
    let lo = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let (s1, s2) = phi.iter().fold((0.0, 0.0), |(s1, s2), &p| {
        let a = (lo - p).exp();
        (s1 + a, s2 + a * a)
    });
    s1 * s1 / s2
}

/// Gradient of [`ess_from_phi`] with respect to each `φ_i`.
pub fn ess_from_phi_grad(phi: &[f64]) -> Vec<f64> {
    let lo = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let a: Vec<f64> = phi.iter().map(|&p| (lo - p).exp()).collect();
    let s1: f64 = a.iter().sum();
    let s2: f64 = a.iter().map(|v| v * v).sum();
    a.iter()
        .map(|&ai| 2.0 * s1 / s2 * (-ai + s1 * ai * ai / s2))
        .collect()
}

/// Systematic resampling: positions `(u + j)/N` mapped through the cumulative
/// weights. Returns sorted parent indices.
pub fn systematic_resample(w: &[f64], u: f64) -> Result<Vec<usize>> {
    let n = w.len();
    if n == 0 {
        return Err(Error::invalid("cannot resample an empty ensemble"));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::invalid(format!("offset {u} outside [0, 1)")));
    }
    if w.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("weights must be non-negative"));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("weights sum to {total}, not 1")));
    }
    let mut parents = Vec::with_capacity(n);
    let mut cum = w[0];
    let mut i = 0;
    for j in 0..n {
        let pos = (u + j as f64) / n as f64;
        while pos >= cum && i + 1 < n {
            i += 1;
            cum += w[i];
        }
        // rounding in `cum` can carry the last positions onto trailing zero weights
        let mut k = i;
        while w[k] == 0.0 && k > 0 {
            k -= 1;
        }
        parents.push(k);
    }
    Ok(parents)
}

/// How many times each index appears in `parents`.
pub fn offspring_counts(parents: &[usize], n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for &p in parents {
        counts[p] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalise_examples() {
        assert_eq!(normalize_log_weights(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let w = normalize_log_weights(&[-1000.0, -1001.0]).unwrap();
        let e = (-1.0f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((w[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((w[0] - 0.7311).abs() < 1e-4);
        let deep = normalize_log_weights(&[-1e4, -1e4 - 2.0, -1e4 + 1.0]).unwrap();
        assert!((deep.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalise_degenerate() {
        assert!(matches!(
            normalize_log_weights(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            Err(Error::DegenerateWeights)
        ));
        assert!(matches!(normalize_log_weights(&[f64::NAN, f64::NAN]), Err(Error::DegenerateWeights)));
    }

    #[test]
    fn ess_examples() {
        assert!((ess(&[0.25; 4]) - 4.0).abs() < 1e-12);
        assert_eq!(ess(&[1.0, 0.0, 0.0]), 1.0);
        assert!((ess(&[0.5, 0.3, 0.2]) - 1.0 / 0.38).abs() < 1e-12);
        assert!((ess(&[0.5, 0.3, 0.2]) - 2.6316).abs() < 1e-4);
    }

    #[test]
    fn ess_from_phi_examples() {
        assert!((ess_from_phi(&[3.0; 7]) - 7.0).abs() < 1e-12);
        let mut phi = vec![1000.0; 10];
        phi[0] = 0.0;
        assert!((ess_from_phi(&phi) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ess_gradient_matches_finite_differences() {
        let phi = [0.3, 1.2, -0.4, 2.0, 0.9];
        let g = ess_from_phi_grad(&phi);
        for i in 0..5 {
            let eps = 1e-6;
            let mut p = phi;
            p[i] += eps;
            let mut m = phi;
            m[i] -= eps;
            let fd = (ess_from_phi(&p) - ess_from_phi(&m)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-7 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn resample_examples() {
        for u in [0.0, 0.3, 0.99] {
            assert_eq!(systematic_resample(&[1.0, 0.0, 0.0], u).unwrap(), vec![0, 0, 0]);
            assert_eq!(systematic_resample(&[0.25; 4], u).unwrap(), vec![0, 1, 2, 3]);
        }
        assert_eq!(systematic_resample(&[0.5, 0.5, 0.0, 0.0], 0.1).unwrap(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn resample_rejects_bad_input() {
        assert!(systematic_resample(&[0.5, 0.6], 0.1).is_err());
        assert!(systematic_resample(&[0.5, 0.5], 1.0).is_err());
        assert!(systematic_resample(&[], 0.1).is_err());
    }

    proptest! {
        #[test]
        fn ess_from_phi_identities(phi in prop::collection::vec(-30.0f64..30.0, 2..50), shift in -100.0f64..100.0) {
            let direct = ess_from_phi(&phi);
            let neg: Vec<f64> = phi.iter().map(|p| -p).collect();
            let via_weights = ess(&normalize_log_weights(&neg).unwrap());
            prop_assert!((direct - via_weights).abs() < 1e-12 * direct);
            let shifted: Vec<f64> = phi.iter().map(|p| p + shift).collect();
            prop_assert!((ess_from_phi(&shifted) - direct).abs() < 1e-10 * direct);
        }

        #[test]
        fn normalisation_is_shift_invariant(lw in prop::collection::vec(-50.0f64..50.0, 2..40), c in -500.0f64..500.0) {
            let a = normalize_log_weights(&lw).unwrap();
            let shifted: Vec<f64> = lw.iter().map(|v| v + c).collect();
            let b = normalize_log_weights(&shifted).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn systematic_counts_are_stratified(lw in prop::collection::vec(-5.0f64..5.0, 2..60), u in 0.0f64..1.0) {
            let w = normalize_log_weights(&lw).unwrap();
            let n = w.len();
            let parents = systematic_resample(&w, u).unwrap();
            prop_assert!(parents.windows(2).all(|p| p[0] <= p[1]));
            let counts = offspring_counts(&parents, n);
            for (c, wi) in counts.iter().zip(&w) {
                let expect = n as f64 * wi;
                prop_assert!(*c as f64 >= (expect - 1e-9).floor() && *c as f64 <= expect.ceil() + 1.0);
            }
        }
    }
}
