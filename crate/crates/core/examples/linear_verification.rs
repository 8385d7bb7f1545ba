//! Every filter on the scalar Ornstein–Uhlenbeck problem, against the exact
//! Gaussian posterior.
//!
//! cargo run --release --example linear_verification -- [particles] [seed]

use nudging::experiment::{format_report, generate_truth_and_obs, run_experiment, ExperimentConfig, Preset, RunSummary};
use nudging::filters::FilterKind;

fn main() -> nudging::Result<()> {
    let mut args = std::env::args().skip(1);
    let particles = args.next().map_or(300, |a| a.parse().expect("particle count"));
    let seed = args.next().map_or(0, |a| a.parse().expect("seed"));

    let dir = std::env::temp_dir().join("nudging_linear_verification");
    let mut summaries = Vec::new();
    for filter in [FilterKind::Bootstrap, FilterKind::TemperJitter, FilterKind::Nudge] {
        let mut cfg = ExperimentConfig::preset(Preset::LinearVerification);
        cfg.filter = filter;
        cfg.n_particles = particles;
        cfg.master_seed = seed;
        let out = dir.join(filter.name());
        let data = generate_truth_and_obs(&cfg)?;
        run_experiment(&cfg, &data, Some(&out))?;
        summaries.push(RunSummary::load(&out)?);
    }
    print!("{}", format_report(&summaries));
    println!("run directories under {}", dir.display());
    Ok(())
}
