//! The nudged filter on the linear problem under each choice of when the
//! Brownian increments are drawn, averaged over seeds.

use nudging::experiment::{generate_truth_and_obs, run_experiment, ExperimentConfig, Preset};
use nudging::filters::{FilterKind, NoiseTiming};

fn main() -> nudging::Result<()> {
    let seeds = 10;
    println!("{:<14} {:>8} {:>11} {:>11}", "timing", "ESS %", "mean err", "var err");
    for timing in [NoiseTiming::BeforeStages, NoiseTiming::AfterStages, NoiseTiming::WholeWindow] {
        let (mut ess, mut dm, mut dv) = (0.0, 0.0, 0.0);
        for seed in 0..seeds {
            let mut cfg = ExperimentConfig::preset(Preset::LinearVerification);
            cfg.filter = FilterKind::Nudge;
            cfg.master_seed = seed;
            cfg.filter_params.noise_timing = Some(timing);
            let out = run_experiment(&cfg, &generate_truth_and_obs(&cfg)?, None)?;
            let p = &out.posterior[0];
            ess += out.reports[0].ess_fraction();
            dm += (p.mean - p.exact_mean).abs();
            dv += (p.variance - p.exact_variance).abs();
        }
        let k = seeds as f64;
        println!("{:<14} {:>8.1} {:>11.6} {:>11.6}", format!("{timing:?}"), 100.0 * ess / k, dm / k, dv / k);
    }
    Ok(())
}
