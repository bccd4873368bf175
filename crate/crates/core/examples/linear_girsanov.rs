//! The linear (non-normalized) filtering equation and its measure-change
//! link: normalizing the linear solution reproduces the nonlinear filter
//! driven by the rebuilt innovation process, and the normalization trace is
//! a martingale.

use belavkin::linalg::pauli;
use belavkin::qstate::{trace_distance_matrices, DensityMatrix};
use belavkin::sde::{step_diffusive_milstein_raw, step_linear, step_linear_milstein};
use belavkin::stats::mean_se;
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn main() -> belavkin::Result<()> {
    let a = pauli::sigma_x().scale_re(0.4);
    let c = pauli::lower().scale_re(0.7);
    let rho0 = DensityMatrix::basis_state(2, 0);

    println!("pathwise equivalence (second-order-matched steps, common path):");
    for dt in [1e-2f64, 1e-3] {
        let n = (1.0 / dt).round() as usize;
        let mut rng = StdRng::seed_from_u64(55);
        let normal = Normal::new(0.0, dt.sqrt()).expect("positive dt");
        let mut xi = rho0.matrix().clone();
        let mut rho = rho0.matrix().clone();
        let mut sup: f64 = 0.0;
        for _ in 0..n {
            let dy = normal.sample(&mut rng);
            let out = step_linear_milstein(&xi, &a, &c, dt, dy)?;
            rho = step_diffusive_milstein_raw(&rho, &a, &c, dt, out.implied_dw);
            xi = out.xi;
            let normalized = xi.scale_re(1.0 / xi.trace().re);
            sup = sup.max(trace_distance_matrices(&normalized, &rho));
        }
        println!("  dt = {dt:.0e}: sup trace distance over the horizon = {sup:.3e}");
    }

    // E[tr xi_t] stays at one under Wiener driving noise.
    let dt = 1e-3f64;
    let n = 1000;
    let mut finals = Vec::new();
    for path in 0..2000u64 {
        let mut rng = StdRng::seed_from_u64(900 + path);
        let normal = Normal::new(0.0, dt.sqrt()).expect("positive dt");
        let mut xi = rho0.matrix().clone();
        let mut ok = true;
        for _ in 0..n {
            match step_linear(&xi, &a, &c, dt, normal.sample(&mut rng)) {
                Ok(out) => xi = out.xi,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            finals.push(xi.trace().re);
        }
    }
    let (mean, se) = mean_se(&finals);
    println!("\nnormalization trace at the horizon over {} paths: {mean:.5} +- {se:.5}", finals.len());
    Ok(())
}
