use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use crib_cli::acceptance;
use crib_cli::output::{commit, to_value, Artifacts};
use crib_cli::run::{run_to_dir, RunOptions};
use crib_cli::{scenario, CliError};
use serde_json::json;

/// Photon-echo quantum-memory simulator: runs TOML scenarios and the
/// acceptance suite.
#[derive(Debug, Parser)]
#[command(name = "crib", version)]
struct Args {
    /// Scenario file to run.
    #[arg(long, required_unless_present = "accept", conflicts_with = "accept")]
    scenario: Option<PathBuf>,
    /// Output directory; overrides the scenario's out_dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// RNG seed; overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Multiplies every default resolution (grid bins, slices and time step).
    #[arg(long, default_value_t = 1.0)]
    grid_scale: f64,
    /// Run the acceptance suite instead of a scenario.
    #[arg(long)]
    accept: bool,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

fn accept(args: &Args) -> Result<(), CliError> {
    let checks: Vec<_> = (1..=10)
        .map(|id| {
            let c = acceptance::run_one(id, args.grid_scale);
            if !args.quiet || !c.passed {
                println!("{}", c.line());
            }
            c
        })
        .collect();
    if let Some(dir) = &args.out_dir {
        let mut a = Artifacts::new();
        // Timings vary between runs, so they stay out of the report file.
        let rows: Vec<_> = checks
            .iter()
            .map(|c| json!({"id": c.id, "name": c.name, "passed": c.passed, "detail": c.detail}))
            .collect();
        a.json("acceptance.json", &json!({"checks": rows}));
        let manifest = json!({
            "acceptance": true,
            "grid_scale_flag": args.grid_scale,
            "versions": {"crib-cli": env!("CARGO_PKG_VERSION"), "crib-core": crib_core::VERSION},
        });
        commit(dir, &a, manifest)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Acceptance(format!(
            "{failed} of 10 acceptance criteria failed"
        )));
    }
    Ok(())
}

fn run(args: &Args) -> Result<(), CliError> {
    if !(args.grid_scale > 0.0 && args.grid_scale.is_finite()) {
        return Err(CliError::Validation(format!(
            "--grid-scale: must be positive, got {}",
            args.grid_scale
        )));
    }
    if args.accept {
        return accept(args);
    }
    let path = args
        .scenario
        .as_ref()
        .expect("clap requires --scenario without --accept");
    let loaded = scenario::load(path)?;
    let opts = RunOptions {
        seed: args.seed,
        grid_scale: args.grid_scale,
    };
    let (out, summary) = run_to_dir(&loaded, &opts, args.out_dir.as_deref())?;
    if !args.quiet {
        println!(
            "{}",
            serde_json::to_string_pretty(&to_value(&summary)).unwrap_or_default()
        );
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
