use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use devnoise::commands::{self, Invocation};

/// Device-noise mean-field VI: density fitting, quadrature and sampler
/// studies, and experiment runs.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// fit | quad-study | sampler-study | energy | regression | calibrate
    command: String,
    /// JSON config; its optional "command" field must match.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dotted-path override, e.g. `--set sweep.widths=[2,4]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// One-column sample CSV for `fit`.
    #[arg(long)]
    samples: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let inv = Invocation { command: cli.command, config: cli.config, seed: cli.seed, out: cli.out, overrides: cli.overrides, samples: cli.samples };
    match commands::run(&inv) {
        Ok(manifest) => {
            println!("{}", serde_json::to_string(&manifest.outputs).expect("names serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).expect("reports serialize"));
            if inv.out.is_dir() {
                let _ = commands::write_error(&inv.out, &e);
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
