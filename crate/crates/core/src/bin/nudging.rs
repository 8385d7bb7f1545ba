use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nudging::experiment::{
    format_report, generate_truth_and_obs, run_experiment, ExperimentConfig, Preset, RunSummary, TwinData,
};
use nudging::filters::FilterKind;

#[derive(Parser)]
#[command(version, about = "Twin experiments with bootstrap, temper-jitter and nudged particle filters")]
struct Cli {
    /// Worker threads for particle-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the truth and write truth.csv and observations.csv.
    Generate(Common),
    /// Run a filter against the truth in --out, generating it if absent.
    Run {
        #[command(flatten)]
        common: Common,
        /// bootstrap, temper_jitter or nudge.
        #[arg(long)]
        filter: Option<FilterKind>,
        #[arg(long)]
        particles: Option<usize>,
        /// Regenerate the truth even if the output directory has one.
        #[arg(long)]
        regenerate: bool,
    },
    /// Print summary tables for completed runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML config; keys not set fall back to the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// linear_verification or sks_benchmark (ignored with --config).
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> nudging::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::preset(self.preset.unwrap_or(Preset::LinearVerification)),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(n) = self.windows {
            cfg.n_windows = n;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn has_truth(dir: &Path) -> bool {
    dir.join("truth.csv").exists() && dir.join("observations.csv").exists()
}

fn generate(cfg: &ExperimentConfig) -> nudging::Result<TwinData> {
    let data = generate_truth_and_obs(cfg)?;
    data.write(&cfg.out_dir, cfg.build_model()?.as_dyn())?;
    Ok(data)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Generate(common) => common.config().and_then(|cfg| {
            generate(&cfg)?;
            println!("wrote truth and observations to {}", cfg.out_dir.display());
            Ok(())
        }),
        Command::Run {
            common,
            filter,
            particles,
            regenerate,
        } => common.config().and_then(|mut cfg| {
            if let Some(f) = filter {
                cfg.filter = f;
            }
            if let Some(n) = particles {
                cfg.n_particles = n;
            }
            cfg.validate()?;
            let data = if has_truth(&cfg.out_dir) && !regenerate {
                TwinData::read(&cfg.out_dir)?
            } else {
                generate(&cfg)?
            };
            let out = run_experiment(&cfg, &data, Some(&cfg.out_dir))?;
            let summary = RunSummary::load(&cfg.out_dir)?;
            print!("{}", format_report(&[summary]));
            if !out.failed_windows.is_empty() {
                println!("failed windows: {:?}", out.failed_windows);
            }
            Ok(())
        }),
        Command::Report { runs } => runs
            .iter()
            .map(|d| RunSummary::load(d))
            .collect::<nudging::Result<Vec<_>>>()
            .map(|s| print!("{}", format_report(&s))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
