//! `pacs`: run the receiver simulation pipeline stage by stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pacs_core::pipeline::{Run, RunConfig, StageOutcome};
use pacs_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "pacs", version, about = "Compressive-sensing photoacoustic receiver simulator")]
struct Cli {
    /// Run configuration (JSON). Defaults to <out>/config.json.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run directory; overrides the configuration's out_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the configuration's root seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "INT")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Phantom acoustics and AFE capture at every scan position.
    Simulate,
    /// ADC matrix-vector compression of the AFE blocks.
    Compress,
    /// FISTA recovery or ingestion of external reconstructions.
    Reconstruct,
    /// Backprojected volumes, projections and the SSIM report.
    Image,
    /// Coherent-sine SNDR and ENOB of the configured ADC.
    Metrics,
    /// Computing-linearity sweeps over weight sum and input amplitude.
    SweepLinearity,
    /// Empirical restricted-isometry statistics of the measurement matrix.
    RipCheck,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let path = match (&cli.config, &cli.out) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) => out.join("config.json"),
        (None, None) => return Err(Error::Config("no configuration: pass --config PATH or --out DIR holding config.json".into())),
    };
    if !path.is_file() {
        return Err(Error::Config(format!("{}: configuration file not found", path.display())));
    }
    let mut cfg = RunConfig::load(&path)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<StageOutcome, Error> {
    let run = Run::new(load_config(cli)?)?;
    match cli.command {
        Command::Simulate => run.simulate(),
        Command::Compress => run.compress(),
        Command::Reconstruct => run.reconstruct(),
        Command::Image => run.image(),
        Command::Metrics => run.metrics(),
        Command::SweepLinearity => run.sweep_linearity(),
        Command::RipCheck => run.rip_check(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match execute(&cli) {
        Ok(outcome) => {
            let line = serde_json::json!({ "stage": outcome.stage, "summary": outcome.summary });
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_DATA })
        }
    }
}
