//! Configuration-driven experiments. Each acceptance check is one named
//! experiment with a canonical preset; the command-line runner and the
//! acceptance suite both go through [`run_config`].

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

mod control_run;
mod converge;
mod ctrw_limit;
mod equivalence;
mod fractional;
mod sde_ensemble;
mod zeno;

pub mod presets;

/// Outcome of one experiment run: a one-line summary, the key metric, the
/// pass/fail verdict against the acceptance bound, and any files written.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub experiment: String,
    pub metric_name: String,
    pub metric: f64,
    pub passed: bool,
    pub details: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

impl ExperimentOutcome {
    pub fn summary_line(&self) -> String {
        format!(
            "experiment={} {}={:.6} {}",
            self.experiment,
            self.metric_name,
            self.metric,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Execute the experiment described by the config. Artifacts are written
/// under `out_dir` (overriding the config's own output directory when set).
pub fn run_config(
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mut config = config.clone();
    if let Some(seed) = seed_override {
        config.numeric.seed = seed;
    }
    let dir: PathBuf = match (out_dir, &config.output.dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => PathBuf::from("out"),
    };
    let mode = config.mode.clone().unwrap_or_default();
    match (config.experiment, mode.as_str()) {
        (ExperimentKind::Converge, "semigroup") | (ExperimentKind::Converge, "") => {
            converge::semigroup(&config, &dir)
        }
        (ExperimentKind::Converge, "generator") => converge::generator_residual(&config, &dir),
        (ExperimentKind::Converge, "phi-independence") => converge::phi_independence(&config, &dir),
        (ExperimentKind::Zeno, _) => zeno::run(&config, &dir),
        (ExperimentKind::SdeEnsemble, "lindblad-mean") | (ExperimentKind::SdeEnsemble, "") => {
            sde_ensemble::lindblad_mean(&config, &dir)
        }
        (ExperimentKind::SdeEnsemble, "purity") => sde_ensemble::purity(&config, &dir),
        (ExperimentKind::SdeEnsemble, "drift-positivity") => {
            sde_ensemble::drift_positivity(&config, &dir)
        }
        (ExperimentKind::Equivalence, _) => equivalence::run(&config, &dir),
        (ExperimentKind::Fractional, "residual") | (ExperimentKind::Fractional, "") => {
            fractional::residual(&config, &dir)
        }
        (ExperimentKind::Fractional, "caputo-ops") => fractional::caputo_ops(&config, &dir),
        (ExperimentKind::CtrwLimit, _) => ctrw_limit::run(&config, &dir),
        (ExperimentKind::Control, _) => control_run::run(&config, &dir),
        (kind, mode) => Err(Error::Config(format!(
            "experiment {kind} has no mode \"{mode}\""
        ))),
    }
}
