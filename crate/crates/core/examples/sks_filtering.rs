//! Bootstrap, temper-jitter and nudged filters on the stochastic KS twin
//! experiment at a reduced size, then the summary table.
//!
//! cargo run --release --example sks_filtering -- [windows] [particles] [cells]

use nudging::experiment::{format_report, generate_truth_and_obs, run_experiment, ExperimentConfig, Preset, RunSummary};
use nudging::filters::FilterKind;

fn main() -> nudging::Result<()> {
    let mut args = std::env::args().skip(1);
    let windows = args.next().map_or(40, |a| a.parse().expect("window count"));
    let particles = args.next().map_or(30, |a| a.parse().expect("particle count"));
    let cells = args.next().map_or(32, |a| a.parse().expect("cell count"));

    let dir = std::env::temp_dir().join("nudging_sks_filtering");
    let mut base = ExperimentConfig::preset(Preset::SksBenchmark);
    base.n_windows = windows;
    base.n_particles = particles;
    base.sks.n_cells = cells;
    base.snapshot_every = 10;
    base.continue_on_error = true;
    let data = generate_truth_and_obs(&base)?;

    let mut summaries = Vec::new();
    for filter in [FilterKind::Bootstrap, FilterKind::TemperJitter, FilterKind::Nudge] {
        let cfg = ExperimentConfig { filter, ..base.clone() };
        let out = dir.join(filter.name());
        data.write(&out, cfg.build_model()?.as_dyn())?;
        let t = std::time::Instant::now();
        let run = run_experiment(&cfg, &data, Some(&out))?;
        println!("{filter}: {:.1}s, failed windows {:?}", t.elapsed().as_secs_f64(), run.failed_windows);
        summaries.push(RunSummary::load(&out)?);
    }
    print!("{}", format_report(&summaries));
    println!("run directories under {}", dir.display());
    Ok(())
}
