use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use farfield_cli::commands::{self, EnhanceRequest, ErrorKind};
use farfield_cli::config::ConfigArgs;
use farfield_cli::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "farfield",
    version,
    about = "Multi-channel far-field speech front-end"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene JSON into mixture, image, RTTM, geometry and truth files.
    Simulate {
        scene: PathBuf,
        #[arg(short = 'o', long)]
        out_dir: PathBuf,
    },
    /// Print per-speaker DOA estimates as JSON.
    Localize {
        mixture: PathBuf,
        rttm: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write one enhanced WAV per speaker plus a manifest.
    Enhance {
        mixture: PathBuf,
        rttm: PathBuf,
        /// truth.json from `simulate`; adds report.json.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Also write timings.json.
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score an enhance output directory against simulator truth.
    Evaluate {
        enhanced_dir: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v)
        .map_err(|e| CliError::input(format!("JSON encoding failed: {e}")))?;
    println!("{s}");
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { scene, out_dir } => {
            for p in commands::simulate(&scene, &out_dir)? {
                println!("{}", p.display());
            }
        }
        Command::Localize {
            mixture,
            rttm,
            config,
        } => print_json(&commands::localize(&mixture, &rttm, &config.resolve()?)?)?,
        Command::Enhance {
            mixture,
            rttm,
            truth,
            timings,
            config,
        } => {
            let out = commands::enhance(&EnhanceRequest {
                mixture,
                rttm,
                config: config.resolve()?,
                truth,
                write_timings: timings,
            })?;
            eprintln!(
                "enhance: {} speakers, {} failed, {:.2} s",
                out.manifest.speakers.len(),
                out.manifest.failures,
                out.timings.total_s
            );
            for s in out.manifest.speakers.iter().filter(|s| s.error.is_some()) {
                eprintln!("  {}: {}", s.speaker, s.error.as_deref().unwrap_or(""));
            }
            if let Some(r) = &out.report {
                print_json(r)?;
            }
            return Ok(match out.manifest.failure_kind() {
                None => ExitCode::SUCCESS,
                Some(ErrorKind::Input) => ExitCode::from(2),
                Some(ErrorKind::Numerical) => ExitCode::from(3),
            });
        }
        Command::Evaluate {
            enhanced_dir,
            truth,
        } => print_json(&commands::evaluate(&enhanced_dir, &truth)?)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
