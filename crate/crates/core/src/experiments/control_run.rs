//! Control sanity experiment: the backward-induction program against direct
//! Monte Carlo, value monotonicity in the control set, the Isaacs ordering,
//! and the fractional dynamic-programming residual report.

use super::ExperimentOutcome;
use crate::chain::StepKernel;
use crate::config::ExperimentConfig;
use crate::control::{
    bloch_of, dp_solve, evaluate_policy_mc, hjb_residual, ControlProblem, DpOptions, StateMesh,
};
use crate::error::{Error, Result};
use crate::qstate::DensityMatrix;
use crate::report::write_text;
use std::path::Path;

pub fn run(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutcome> {
    let control_cfg = config
        .control
        .as_ref()
        .ok_or_else(|| Error::Config("control experiment needs a control block".into()))?;
    let channels = config.model.channel_specs()?;
    let h = config.numeric.dt.unwrap_or(0.05);
    let horizon = config.numeric.horizon.unwrap_or(0.6);
    let n_paths = config.numeric.n_paths.unwrap_or(4_000);
    let mesh = StateMesh::bloch(control_cfg.mesh_per_axis)?;
    let options = DpOptions { seed: config.numeric.seed, ..DpOptions::default() };

    let full_problem = ControlProblem {
        h0: config.model.atom_hamiltonian()?,
        h0_1: control_cfg.h0_1.to_matrix("control.h0_1")?,
        h0_2: control_cfg.h0_2.to_matrix("control.h0_2")?,
        u_grid: control_cfg.u_grid.clone(),
        v_grid: control_cfg.v_grid.clone(),
        j_cost: control_cfg.j_cost.to_matrix("control.j_cost")?,
        f_cost: control_cfg.f_cost.to_matrix("control.f_cost")?,
        horizon,
        beta: None,
    };
    let rho0 = DensityMatrix::basis_state(2, 0);
    let mut details = Vec::new();

    // (a) Uncontrolled program against direct simulation.
    let uncontrolled = ControlProblem {
        u_grid: vec![0.0],
        v_grid: vec![0.0],
        ..full_problem.clone()
    };
    let table_zero = dp_solve(&uncontrolled, &channels, h, &mesh, &options)?;
    let dp_value = table_zero.value_at(&rho0);
    let (mc_value, mc_se) = evaluate_policy_mc(
        &uncontrolled,
        &channels,
        h,
        &|_: usize, _: &DensityMatrix| (0, 0),
        &rho0,
        n_paths,
        config.numeric.seed,
        StepKernel::Exact,
    )?;
    let z = (dp_value - mc_value).abs() / mc_se;
    let agreement = z <= 3.0;
    details.push(format!(
        "uncontrolled: dp {dp_value:.5} vs mc {mc_value:.5} +- {mc_se:.5} (|z| = {z:.2})"
    ));

    // (b) Monotonicity under control-set enlargement, physical nodes.
    let table_full = dp_solve(&full_problem, &channels, h, &mesh, &options)?;
    let pure_control = ControlProblem { v_grid: vec![0.0], ..full_problem.clone() };
    let small_problem = ControlProblem { u_grid: vec![0.0], ..pure_control.clone() };
    let table_small = dp_solve(&small_problem, &channels, h, &mesh, &options)?;
    let table_large = dp_solve(&pure_control, &channels, h, &mesh, &options)?;
    let mut monotone = true;
    for node in 0..mesh.len() {
        let x = bloch_of(&mesh.node_matrix(node));
        if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] > 1.0 + 1e-9 {
            continue;
        }
        if table_large.maxmin[0][node] + 1e-10 < table_small.maxmin[0][node] {
            monotone = false;
        }
    }
    details.push(format!("value monotone under control-set enlargement: {monotone}"));

    // (c) Isaacs ordering on physical nodes, every layer.
    let mut isaacs = true;
    for layer in 0..table_full.layers() {
        for node in 0..mesh.len() {
            let x = bloch_of(&mesh.node_matrix(node));
            if x[0] * x[0] + x[1] * x[1] + x[2] * x[2] > 1.0 + 1e-9 {
                continue;
            }
            if table_full.maxmin[layer][node] > table_full.minmax[layer][node] + 1e-9 {
                isaacs = false;
            }
        }
    }
    details.push(format!("max-min <= min-max on physical nodes: {isaacs}"));

    // Fractional residual report (reported, not gated): pure control, three
    // levels, heavy-tailed waits.
    let fractional = ControlProblem {
        v_grid: vec![0.0],
        beta: config.numeric.beta,
        ..full_problem.clone()
    };
    let probes = crate::generators::probe_states(2, 4, config.numeric.seed);
    let report = hjb_residual(&fractional, &channels, h, &mesh, &options, &probes, 8)?;
    let residual_artifact = write_text(dir, "hjb_residual.csv", &report.to_csv())?;
    details.push(format!(
        "fractional program residual (reported): sup {:.4} against rhs scale {:.4}",
        report.sup_residual, report.sup_rhs
    ));

    let value_artifact = write_text(dir, "value_table.json", &table_full.to_json(&full_problem)?)?;

    let passed = agreement && monotone && isaacs;
    Ok(ExperimentOutcome {
        experiment: "control".into(),
        metric_name: "dp_vs_mc_abs_z".into(),
        metric: z,
        passed,
        details,
        artifacts: vec![value_artifact, residual_artifact],
    })
}
