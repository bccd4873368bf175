//! Diffusive (homodyne-type) filtering: a monitored Rabi qubit stays pure
//! along the matrix equation, and the pure-state vector equation tracks it
//! path by path.

use belavkin::linalg::pauli;
use belavkin::qstate::{trace_distance, PureState};
use belavkin::sde::{step_diffusive, step_pure};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() -> belavkin::Result<()> {
    let a = pauli::sigma_x().scale_re(0.5);
    let c = pauli::sigma_z().scale_re(0.3);
    let dt = 1e-4f64;
    let n = 10_000;

    let mut rng = StdRng::seed_from_u64(3);
    let normal = Normal::new(0.0, dt.sqrt()).expect("positive dt");
    let mut psi = PureState::basis(2, 0);
    let mut rho = psi.to_density();
    let mut min_purity: f64 = 1.0;
    let mut max_gap: f64 = 0.0;
    for _ in 0..n {
        let dw = normal.sample(&mut rng);
        psi = step_pure(&psi, &a, &c, dt, dw)?;
        rho = step_diffusive(&rho, &a, &c, dt, dw)?;
        min_purity = min_purity.min(rho.purity());
        max_gap = max_gap.max(trace_distance(&psi.to_density(), &rho));
    }
    println!("unit horizon, dt = {dt}:");
    println!("  minimum purity of the matrix trajectory: {min_purity:.8}");
    println!("  worst pure-vs-matrix trace distance:     {max_gap:.6}");
    println!("  final Bloch coordinates: {:?}", belavkin::control::bloch_of(rho.matrix()));
    Ok(())
}
