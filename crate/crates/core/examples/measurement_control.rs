//! Measurement-feedback control on the Bloch lattice: backward induction
//! over the chain, the greedy policy against constant controls, and the
//! zero-sum value ordering.

use belavkin::chain::{ChannelSpec, StepKernel};
use belavkin::control::{
    dp_solve, evaluate_policy_mc, ControlProblem, DpOptions, GreedyPolicy, StateMesh,
};
use belavkin::linalg::{pauli, ComplexMatrix};
use belavkin::qstate::DensityMatrix;

fn main() -> belavkin::Result<()> {
    let channels = vec![ChannelSpec::counting(pauli::lower())];
    let problem = ControlProblem {
        h0: pauli::sigma_x().scale_re(0.5),
        h0_1: pauli::sigma_z(),
        h0_2: pauli::sigma_y(),
        u_grid: vec![-1.0, 0.0, 1.0],
        v_grid: vec![0.0],
        j_cost: ComplexMatrix::zeros(2),
        f_cost: pauli::sigma_z(),
        horizon: 0.6,
        beta: None,
    };
    let h = 0.05;
    let mesh = StateMesh::bloch(9)?;
    let table = dp_solve(&problem, &channels, h, &mesh, &DpOptions::default())?;
    let rho0 = DensityMatrix::basis_state(2, 1);

    println!(
        "maximize terminal <sz> from |1><1| over {} measurement layers on a {}-node lattice",
        table.layers(),
        mesh.len()
    );
    println!("program value at the start state: {:+.4}", table.value_at(&rho0));

    let lookahead = GreedyPolicy::new(&table, &problem, &channels, StepKernel::Exact)?;
    let (greedy, greedy_se) = evaluate_policy_mc(
        &problem,
        &channels,
        h,
        &lookahead,
        &rho0,
        4000,
        11,
        StepKernel::Exact,
    )?;
    println!("lookahead policy by simulation: {greedy:+.4} +- {greedy_se:.4}");
    println!("(detuning control barely helps this transfer, so the lookahead policy");
    println!(" tracks the best constant within the lattice resolution)");
    for (label, fixed) in [("u = -1", 0usize), ("u = 0", 1), ("u = +1", 2)] {
        let (value, se) = evaluate_policy_mc(
            &problem,
            &channels,
            h,
            &|_: usize, _: &DensityMatrix| (fixed, 0),
            &rho0,
            4000,
            13,
            StepKernel::Exact,
        )?;
        println!("constant {label}:      {value:+.4} +- {se:.4}");
    }

    // Zero-sum ordering with an active minimizer.
    let game = ControlProblem { v_grid: vec![-0.5, 0.5], ..problem };
    let game_table = dp_solve(&game, &channels, h, &mesh, &DpOptions::default())?;
    let node = game_table.mesh.nearest(rho0.matrix());
    println!(
        "\nwith an adversary: max-min {:+.4} <= min-max {:+.4} at the start node",
        game_table.maxmin[0][node], game_table.minmax[0][node]
    );
    Ok(())
}
