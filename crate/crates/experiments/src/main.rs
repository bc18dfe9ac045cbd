use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use teleport_opt::{run, ExperimentConfig, ExperimentKind};

/// Runs symmetry teleportation experiments from a TOML config.
#[derive(Debug, Parser)]
#[command(name = "teleport-opt", version)]
struct Cli {
    /// Experiment to run; must match the `experiment` key of the config.
    #[arg(required_unless_present = "list_experiments")]
    experiment: Option<ExperimentKind>,

    #[arg(long, required_unless_present = "list_experiments")]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long)]
    list_experiments: bool,

    /// Load and validate the config, then exit.
    #[arg(long)]
    validate_only: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.list_experiments {
        for kind in ExperimentKind::ALL {
            println!("{:<16} {}", kind.name(), kind.summary());
        }
        return ExitCode::SUCCESS;
    }
    let (Some(kind), Some(path)) = (cli.experiment, cli.config) else {
        unreachable!("clap enforces the experiment and --config");
    };
    let mut cfg = match ExperimentConfig::load(&path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cfg.experiment != kind {
        eprintln!(
            "error: {} is a {} config, not {}",
            path.display(),
            cfg.experiment.name(),
            kind.name()
        );
        return ExitCode::from(2);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output = Some(out);
    }
    if cli.validate_only {
        println!("{}: valid {} config", path.display(), kind.name());
        return ExitCode::SUCCESS;
    }
    let out = cfg.output_dir();
    match run(&cfg, &out) {
        Ok(summary) => {
            for (name, v) in &summary.verdicts {
                log::info!("{name}: {:?}", v.status);
            }
            println!("wrote {}", out.display());
            if summary.passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed checks: {}", summary.failed_checks().join(", "));
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
