//! Jump-type filtering trajectories: single paths of the counting equation
//! and the ensemble average against the master equation.

use belavkin::chain::ChannelSpec;
use belavkin::generators::GeneratorSpec;
use belavkin::linalg::pauli;
use belavkin::qstate::DensityMatrix;
use belavkin::sde::{ensemble_mean, step_counting, SdeConfig};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn main() -> belavkin::Result<()> {
    let a = pauli::sigma_x().scale_re(0.5);
    let c = pauli::lower();
    let rho0 = DensityMatrix::basis_state(2, 0);
    let dt = 1e-3;

    // One path: print the jump times.
    let mut rng = StdRng::seed_from_u64(11);
    let mut state = rho0.clone();
    let mut jumps = Vec::new();
    for k in 0..1000 {
        let before = state.expectation(&pauli::sigma_z());
        state = step_counting(&state, &a, &c, dt, &mut rng)?;
        let after = state.expectation(&pauli::sigma_z());
        if (after - before).abs() > 0.5 {
            jumps.push(k as f64 * dt);
        }
    }
    println!("single path over the unit horizon: jumps at {jumps:?}");

    // Ensemble mean against the deterministic evolution.
    let spec = GeneratorSpec::new(a.clone(), vec![ChannelSpec::counting(c.clone())])?;
    let checkpoints = [0.25, 0.5, 0.75, 1.0];
    let summary = ensemble_mean(
        &rho0,
        &spec,
        &SdeConfig::new(dt)?.without_projection(),
        &checkpoints,
        &[("sz".to_string(), pauli::sigma_z())],
        4000,
        42,
    )?;
    let reference =
        belavkin::lindblad::evolve_state(&rho0, &a, &spec.channels, &checkpoints, 1e-4)?;
    println!("\nensemble mean of <sz> over 4000 paths vs master equation:");
    for (k, t) in checkpoints.iter().enumerate() {
        println!(
            "  t = {t:.2}: mc {:+.4} +- {:.4}, ode {:+.4}",
            summary.means[k][0],
            summary.standard_errors[k][0],
            reference[k].expectation(&pauli::sigma_z())
        );
    }
    println!("\n{}", summary.to_csv());
    Ok(())
}
