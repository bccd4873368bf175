//! The watchdog effect: without the 1/sqrt(t) enhancement, repeated
//! measurement freezes the dissipative dynamics and only the unitary part
//! survives the small-step limit.

use super::ExperimentOutcome;
use crate::chain::{iterated_affine_expectation, InteractionScaling};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::linalg::pauli;
use crate::qstate::{conjugate_by_evolution, DensityMatrix};
use crate::report::{fmt, CsvTable};
use std::path::Path;

pub fn run(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutcome> {
    let spec = config.model.hamiltonian_spec()?;
    let s = config.numeric.s.unwrap_or(1.0);
    let t_list = config.numeric.h_list.clone().unwrap_or_else(|| vec![1e-2, 1e-3, 1e-4]);
    let rho = DensityMatrix::basis_state(2, 0);
    let observable = pauli::sigma_z();
    let unitary = conjugate_by_evolution(rho.matrix(), &spec.a, s)?;
    let target = observable.matmul(&unitary).trace().re;

    let mut table = CsvTable::new("t,steps,expectation,unitary_target,error");
    let mut errors = Vec::new();
    for &t in &t_list {
        let n = (s / t).round() as usize;
        let value = iterated_affine_expectation(
            &observable,
            0.0,
            &rho,
            &spec,
            t,
            n,
            InteractionScaling::Unscaled,
        )?;
        let error = (value - target).abs();
        errors.push(error);
        table.push_row(&[fmt(t), n.to_string(), fmt(value), fmt(target), fmt(error)]);
    }
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    let artifact = table.write(dir, "zeno_freeze.csv")?;
    Ok(ExperimentOutcome {
        experiment: "zeno".into(),
        metric_name: "final_error".into(),
        metric: *errors.last().unwrap(),
        passed: monotone,
        details: vec![format!("errors over t {t_list:?}: {errors:?} (must decrease)")],
        artifacts: vec![artifact],
    })
}
