//! `stlplan` — plan, re-check, and export STL trajectory problems.
//!
//! Exit code 0 means the requested property holds (plan accepted, check
//! satisfied); 1 means it does not; 2 is any error.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use stlplan::examples::{bundled, bundled_scenario, EXAMPLE_NAMES};
use stlplan::pipeline::{
    run_check, run_export, run_plan, verdict_text, write_outputs, RunOptions,
};
use stlplan::scenario::Scenario;

#[derive(Parser)]
#[command(name = "stlplan", version, about = "STL trajectory planner for linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct EncodeFlags {
    /// Override the scenario's big-M constant.
    #[arg(long = "big-m")]
    big_m: Option<f64>,
    /// Override the ECBF poles (comma-separated, e.g. "-1,-2").
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    poles: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a scenario and write trajectory + verdict files.
    Plan {
        /// Scenario file path, or the name of a bundled example.
        scenario: String,
        #[command(flatten)]
        encode: EncodeFlags,
        /// Directory for the output files.
        #[arg(long = "out-dir", default_value = ".")]
        out_dir: PathBuf,
        /// Spacing of the dense trajectory CSV rows, in seconds.
        #[arg(long = "dense-step", default_value_t = 1e-3)]
        dense_step: f64,
    },
    /// Re-check a trajectory CSV against a formula.
    Check {
        /// Trajectory CSV (t,x1..xn[,u1..um]).
        trajectory: PathBuf,
        /// STL formula text, e.g. "G[0,2](x1 >= 0)".
        formula: String,
        /// Scenario supplying the plant model; enables the continuous check.
        #[arg(long)]
        system: Option<String>,
    },
    /// Write a scenario's MIQP in LP format.
    Export {
        /// Scenario file path, or the name of a bundled example.
        scenario: String,
        #[command(flatten)]
        encode: EncodeFlags,
        /// Directory for the .lp file; stdout when omitted.
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
    },
    /// Print a bundled example scenario (or list them).
    Examples {
        /// Name of the bundled scenario to print.
        name: Option<String>,
    },
}

/// A scenario argument is a file when one exists at that path, otherwise the
/// name of a bundled example.
fn load_scenario(arg: &str) -> Result<Scenario, String> {
    let path = Path::new(arg);
    if path.exists() {
        Scenario::load(path).map_err(|e| format!("{arg}: {e}"))
    } else {
        bundled_scenario(arg).map_err(|e| e.to_string())
    }
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Plan {
            scenario,
            encode,
            out_dir,
            dense_step,
        } => {
            let sc = load_scenario(&scenario)?;
            let opts = RunOptions {
                big_m: encode.big_m,
                poles: encode.poles,
                dense_step,
            };
            let report = run_plan(&sc, &opts).map_err(|e| format!("plan: {e}"))?;
            write_outputs(&report, &out_dir, opts.dense_step)
                .map_err(|e| format!("write outputs: {e}"))?;
            print!("{}", verdict_text(&report));
            Ok(report.accepted())
        }
        Command::Check {
            trajectory,
            formula,
            system,
        } => {
            let csv = std::fs::read_to_string(&trajectory)
                .map_err(|e| format!("{}: {e}", trajectory.display()))?;
            let sc = system.as_deref().map(load_scenario).transpose()?;
            let report =
                run_check(&csv, &formula, sc.as_ref()).map_err(|e| format!("check: {e}"))?;
            if let Some(w) = &report.warning {
                eprintln!("warning: {w}");
            }
            println!("discrete_robustness: {:.6e}", report.discrete_robustness);
            if let Some(v) = &report.continuous {
                println!(
                    "continuous: {} (worst {:.6e} at t={:.6})",
                    if v.satisfied { "satisfied" } else { "violated" },
                    v.worst_margin,
                    v.witness_time
                );
            }
            println!("satisfied: {}", report.satisfied());
            Ok(report.satisfied())
        }
        Command::Export {
            scenario,
            encode,
            out_dir,
        } => {
            let sc = load_scenario(&scenario)?;
            let opts = RunOptions {
                big_m: encode.big_m,
                poles: encode.poles,
                ..RunOptions::default()
            };
            let lp = run_export(&sc, &opts).map_err(|e| format!("export: {e}"))?;
            match out_dir {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)
                        .map_err(|e| format!("{}: {e}", dir.display()))?;
                    let path = dir.join(format!("{}.lp", sc.name));
                    std::fs::write(&path, lp).map_err(|e| format!("{}: {e}", path.display()))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{lp}"),
            }
            Ok(true)
        }
        Command::Examples { name } => match name {
            Some(n) => {
                let text =
                    bundled(&n).ok_or_else(|| format!("no bundled scenario '{n}'"))?;
                print!("{text}");
                Ok(true)
            }
            None => {
                for n in EXAMPLE_NAMES {
                    println!("{n}");
                }
                Ok(true)
            }
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
