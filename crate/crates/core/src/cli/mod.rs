//! Command-line driver: configuration text in, CSV and JSON files out.

pub mod config;
pub mod plan;
pub mod presets;
pub mod run;

use std::path::PathBuf;

pub use config::Config;
pub use plan::{ExperimentKind, Plan};
pub use run::{execute, exit_code, write_outputs, Outputs};

use crate::error::Result;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "SPINDECAY_THREADS";

/// Load `spec` (a path or `preset:NAME`), apply `section.key=value`
/// overrides and build the validated plan.
pub fn load_plan(spec: &str, overrides: &[String], out_dir: Option<PathBuf>) -> Result<Plan> {
    let mut cfg = Config::load(spec)?;
    for o in overrides {
        cfg.set(o)?;
    }
    let mut plan = Plan::from_config(&cfg)?;
    if let Some(dir) = out_dir {
        plan.output_dir = dir;
    }
    Ok(plan)
}

/// Run a config end to end. Nothing is written unless every output has
/// been computed.
pub fn run_config(spec: &str, overrides: &[String], out_dir: Option<PathBuf>) -> Result<(Outputs, Vec<PathBuf>)> {
    let plan = load_plan(spec, overrides, out_dir)?;
    let outputs = execute(&plan)?;
    run::check_round_trip(&outputs)?;
    let paths = write_outputs(&outputs, &plan.output_dir)?;
    Ok((outputs, paths))
}
