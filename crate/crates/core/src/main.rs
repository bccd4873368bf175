//! Experiment runner: executes one named experiment per invocation and
//! writes machine-readable results.
//!
//! Usage:
//!   belavkin --experiment NAME [--out DIR] [--seed N] [--threads N]
//!   belavkin --config PATH [--out DIR] [--seed N] [--threads N]
//!
//! Exit codes: 0 on pass, 2 when an acceptance bound fails, 1 on error.

use belavkin::config::ExperimentConfig;
use belavkin::experiments::{presets, run_config};
use std::path::PathBuf;
use std::process::ExitCode;

struct Args {
    config: Option<PathBuf>,
    experiment: Option<String>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
}

fn parse_args(mut argv: impl Iterator<Item = String>) -> Result<Args, String> {
    let mut args =
        Args { config: None, experiment: None, seed: None, threads: None, out: None };
    while let Some(flag) = argv.next() {
        let mut value = |name: &str| {
            argv.next().ok_or_else(|| format!("flag {name} expects a value"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value("--config")?)),
            "--experiment" => args.experiment = Some(value("--experiment")?),
            "--seed" => {
                args.seed = Some(
                    value("--seed")?
                        .parse()
                        .map_err(|e| format!("--seed expects an integer: {e}"))?,
                )
            }
            "--threads" => {
                args.threads = Some(
                    value("--threads")?
                        .parse()
                        .map_err(|e| format!("--threads expects an integer: {e}"))?,
                )
            }
            "--out" => args.out = Some(PathBuf::from(value("--out")?)),
            "--help" | "-h" => {
                print_help();
                std::process::exit(0);
            }
            "--list" => {
                for (name, cfg) in presets::all() {
                    println!("{name}  [{}]", cfg.experiment);
                }
                std::process::exit(0);
            }
            other => return Err(format!("unknown flag {other}; see --help")),
        }
    }
    if args.config.is_none() && args.experiment.is_none() {
        return Err("nothing to run: pass --config PATH or --experiment NAME".into());
    }
    Ok(args)
}

fn print_help() {
    println!(
        "belavkin: quantum filtering simulation experiments\n\n\
         Flags:\n\
         \x20 --experiment NAME   run a named preset (see --list)\n\
         \x20 --config PATH       run an experiment described by a JSON config\n\
         \x20 --seed N            override the config seed\n\
         \x20 --threads N         worker threads (default: all cores)\n\
         \x20 --out DIR           artifact directory (default: from config or ./out)\n\
         \x20 --list              list the preset experiments"
    );
}

fn load_config(args: &Args) -> Result<ExperimentConfig, String> {
    if let Some(path) = &args.config {
        return ExperimentConfig::from_path(path).map_err(|e| format!("{}: {e}", path.display()));
    }
    let name = args.experiment.as_ref().expect("checked in parse_args");
    presets::by_name(name).ok_or_else(|| format!("no preset named {name:?}; see --list"))
}

fn main() -> ExitCode {
    let args = match parse_args(std::env::args().skip(1)) {
        Ok(args) => args,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(1);
        }
    };
    let config = match load_config(&args) {
        Ok(config) => config,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(1);
        }
    };

    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: could not build thread pool: {e}");
            return ExitCode::from(1);
        }
    };

    match pool.install(|| run_config(&config, args.out.as_deref(), args.seed)) {
        Ok(outcome) => {
            println!("{}", outcome.summary_line());
            for line in &outcome.details {
                println!("  {line}");
            }
            for artifact in &outcome.artifacts {
                println!("  wrote {}", artifact.display());
            }
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
