use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spindecay::cli::{self, presets, THREADS_ENV};

#[derive(Parser)]
#[command(
    name = "spindecay",
    version,
    about = "Pulsed-EPR spectra, pulse sequences and decoherence simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file or `preset:NAME`.
    Run {
        config: String,
        /// Override a config key, e.g. `--set sequence.realizations=1000`.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory, replacing [output] dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate {
        config: String,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List the embedded configs, or print one.
    Presets { name: Option<String> },
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| format!("{THREADS_ENV}={v:?} is not a positive integer"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match args.command {
        Command::Run { config, overrides, out } => match cli::run_config(&config, &overrides, out) {
            Ok((outputs, paths)) => {
                println!("{}", outputs.summary);
                for p in paths {
                    eprintln!("wrote {}", p.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                if let spindecay::Error::NonConvergence { best: Some(best), .. } = &e {
                    eprintln!("best estimate so far:\n{}", best.to_table());
                }
                ExitCode::from(cli::exit_code(&e) as u8)
            }
        },
        Command::Validate { config, overrides } => match cli::load_plan(&config, &overrides, None) {
            Ok(plan) => {
                println!("{config}: ok ({} experiment)", plan.kind);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(cli::exit_code(&e) as u8)
            }
        },
        Command::Presets { name: None } => {
            for p in presets::PRESETS {
                let about: Vec<&str> = p
                    .text
                    .lines()
                    .map_while(|l| l.strip_prefix('#'))
                    .map(str::trim)
                    .collect();
                println!("{:<20} {}", p.name, about.join(" "));
            }
            ExitCode::SUCCESS
        }
        Command::Presets { name: Some(name) } => match presets::get(&name) {
            Some(p) => {
                print!("{}", p.text);
                ExitCode::SUCCESS
            }
            None => {
                eprintln!(
                    "error: unknown preset {name:?}; available: {}",
                    presets::names().join(", ")
                );
                ExitCode::from(2)
            }
        },
    }
}
