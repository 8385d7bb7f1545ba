//! Systematic resampling: offspring counts stay within one of N·w_i for every
//! offset, and average to N·w_i over random offsets.

use nudging::rng::{Purpose, StreamKey};
use nudging::weights::{ess, normalize_log_weights, offspring_counts, systematic_resample};

fn main() -> nudging::Result<()> {
    let log_w = [-0.3, -2.0, 0.0, -0.7, -5.0, -1.1];
    let w = normalize_log_weights(&log_w)?;
    let n = w.len();
    println!("weights {:.3?}, ESS {:.2}", w, ess(&w));

    let draws = 10_000;
    let mut mean = vec![0.0; n];
    for d in 0..draws {
        let u = StreamKey::new(4, Purpose::ResampleUniform).window(d).derive().uniform();
        let counts = offspring_counts(&systematic_resample(&w, u)?, n);
        for (m, c) in mean.iter_mut().zip(&counts) {
            *m += *c as f64 / draws as f64;
        }
    }
    println!("{:>3} {:>8} {:>10} {:>8}", "i", "N*w", "mean count", "range");
    for i in 0..n {
        let seen: Vec<usize> = (0..100)
            .map(|j| offspring_counts(&systematic_resample(&w, j as f64 / 100.0).unwrap(), n)[i])
            .collect();
        let (lo, hi) = (seen.iter().min().unwrap(), seen.iter().max().unwrap());
        println!("{i:>3} {:>8.3} {:>10.3} {lo:>5}..{hi}", n as f64 * w[i], mean[i]);
    }
    Ok(())
}
