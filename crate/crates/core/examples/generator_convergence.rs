//! Convergence of the measurement chain to its limit generator and
//! semigroup: residual decay rates and the angle independence of the
//! diffusive limit.

use belavkin::chain::ChannelSpec;
use belavkin::generators::{
    empirical_generator_residual, eval_count, eval_dif, probe_states, GeneratorSpec,
    ObservablePolynomial,
};
use belavkin::linalg::pauli;
use belavkin::qstate::DensityMatrix;
use belavkin::stats::log_log_slope;

fn main() -> belavkin::Result<()> {
    let a = pauli::sigma_x().scale_re(0.5);
    let c = pauli::lower();
    let f = ObservablePolynomial::quadratic(pauli::sigma_z())?;
    let probes = probe_states(2, 12, 42);

    // Hand values of the two generators at the ground state.
    let rho = DensityMatrix::basis_state(2, 0);
    println!(
        "generators at |0><0| with f = tr(sz rho)^2: counting {:+.4}, diffusive {:+.4}",
        eval_count(&f, &rho, &a, &c),
        eval_dif(&f, &rho, &a, &c)
    );

    for (label, phi) in [("counting", 0.0), ("diffusive pi/4", std::f64::consts::FRAC_PI_4)] {
        let spec = GeneratorSpec::new(a.clone(), vec![ChannelSpec::rotated(c.clone(), phi)])?;
        let hs: Vec<f64> = (2..=6).map(|k| 10f64.powi(-k)).collect();
        let residuals: Vec<f64> = hs
            .iter()
            .map(|&h| empirical_generator_residual(&f, &spec, h, &probes))
            .collect::<belavkin::Result<_>>()?;
        println!("\n{label} channel: |(U_h - 1)/h f - L f| over {} probe states", probes.len());
        for (h, r) in hs.iter().zip(&residuals) {
            println!("  h = {h:.0e}: residual {r:.3e}");
        }
        println!("  fitted decay rate: {:.3}", log_log_slope(&hs, &residuals));
    }

    // The diffusive limit does not depend on the detection angle.
    println!("\nangle independence: eval_dif takes no angle; empirical generators at two");
    println!("angles against the same limit (h = 2^-12):");
    let h = 2f64.powi(-12);
    for phi in [std::f64::consts::FRAC_PI_6, std::f64::consts::FRAC_PI_4] {
        let spec = GeneratorSpec::new(a.clone(), vec![ChannelSpec::rotated(c.clone(), phi)])?;
        let r = empirical_generator_residual(&f, &spec, h, &probes)?;
        println!("  phi = {phi:.4}: residual {r:.3e}");
    }
    Ok(())
}
