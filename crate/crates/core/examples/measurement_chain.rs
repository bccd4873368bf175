//! The discrete chain of indirect measurements: one step's outcome
//! distribution (exact against first-order kernels), a sampled trajectory,
//! and the watchdog freeze when the interaction is left unscaled.

use belavkin::chain::{
    iterated_affine_expectation, sample_trajectory, step_asymptotic, step_exact, ChannelSpec,
    HamiltonianSpec, InteractionScaling, TrajectoryConfig,
};
use belavkin::ctrw::WaitingLaw;
use belavkin::linalg::pauli;
use belavkin::qstate::{conjugate_by_evolution, DensityMatrix};

fn main() -> belavkin::Result<()> {
    let spec = HamiltonianSpec::new(
        pauli::sigma_x().scale_re(0.5),
        vec![ChannelSpec::counting(pauli::lower())],
    )?;
    let rho = DensityMatrix::basis_state(2, 0);

    println!("one measurement step at t = 1e-3, exact kernel:");
    let t = 1e-3;
    for outcome in &step_exact(&rho, &spec, t)?.outcomes {
        println!(
            "  word {:?}: p = {:.6}, <sz> after = {:+.4}",
            outcome.word,
            outcome.probability,
            outcome.state.expectation(&pauli::sigma_z())
        );
    }
    println!("first-order kernel at the same step:");
    for outcome in &step_asymptotic(&rho, &spec, t)?.outcomes {
        println!("  word {:?}: p = {:.6}", outcome.word, outcome.probability);
    }

    let record = sample_trajectory(
        &rho,
        &spec,
        &WaitingLaw::Exponential { rate: 20.0 },
        &TrajectoryConfig::new(1.0, 7),
    )?;
    let clicks = record.outcomes.iter().filter(|w| w[0] == 1).count();
    println!(
        "\nsampled trajectory: {} measurements over the unit horizon, {} clicks",
        record.steps(),
        clicks
    );
    println!("final <sz> = {:+.4}", record.states.last().unwrap().expectation(&pauli::sigma_z()));

    // Watchdog effect: with the interaction unscaled, repeated measurement
    // suppresses the dissipative dynamics and only the unitary part remains.
    println!("\nwatchdog freeze (unscaled interaction), expectation after [1/t] steps:");
    let unitary = conjugate_by_evolution(rho.matrix(), &spec.a, 1.0)?;
    let target = pauli::sigma_z().matmul(&unitary).trace().re;
    for t in [1e-2f64, 1e-3, 1e-4] {
        let n = (1.0 / t).round() as usize;
        let value = iterated_affine_expectation(
            &pauli::sigma_z(),
            0.0,
            &rho,
            &spec,
            t,
            n,
            InteractionScaling::Unscaled,
        )?;
        println!("  t = {t:.0e}: <sz> = {value:+.5}, unitary-only value {target:+.5}");
    }
    Ok(())
}
