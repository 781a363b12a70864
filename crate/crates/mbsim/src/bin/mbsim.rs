use clap::Parser;
use mbsim::exp::{execute, ExpError, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Tri-junction braiding simulator.
#[derive(Parser, Debug)]
#[command(name = "mbsim", version, about)]
struct Cli {
    /// Experiment to run: move, braid, track, protect, errorsweep, qpt,
    /// or pulse_compile. Must match the config file.
    experiment: String,

    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,

    /// Output directory for results.csv and run.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,

    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Also writes SVG plots where the experiment defines one.
    #[arg(long)]
    plots: bool,
}

fn run(cli: &Cli) -> Result<(), ExpError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| {
        ExpError::Config(format!("cannot read {}: {e}", cli.config.display()))
    })?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if cfg.experiment.to_string() != cli.experiment {
        return Err(ExpError::Config(format!(
            "config is for experiment {}, not {}",
            cfg.experiment, cli.experiment
        )));
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let record = execute(&cfg, &cli.out, cli.plots)?;
    println!(
        "{}: {} rows in {} ms -> {}",
        record.experiment,
        record.row_count,
        record.wall_time_ms,
        cli.out.join("results.csv").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
