//! Heavy-tailed waiting times and the stable subordinator: tail behavior of
//! the waiting law, Laplace functional of the subordinator, and moments of
//! its inverse.

use belavkin::ctrw::{
    inverse_subordinator, sample_inverse_subordinator, sample_standard_stable, sample_waiting,
    simulate_subordinator, WaitingLaw,
};
use belavkin::stats::{gamma, mean_se};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn main() -> belavkin::Result<()> {
    let beta = 0.7;
    let mut rng = StdRng::seed_from_u64(1);

    let law = WaitingLaw::StableTail { beta, scale: 1.0 };
    let n = 200_000;
    let draws: Vec<f64> = (0..n).map(|_| sample_waiting(&law, &mut rng)).collect();
    println!("waiting law with stability index {beta}: P(T > m) * beta m^beta");
    for m in [10.0, 100.0, 1000.0] {
        let tail = draws.iter().filter(|&&x| x > m).count() as f64 / n as f64;
        println!("  m = {m:6.0}: normalized tail {:.4} (tends to 1)", tail * beta * m.powf(beta));
    }

    println!("\nstandard subordinator, E[exp(-lambda S_1)] vs exp(-lambda^beta):");
    let samples: Vec<f64> = (0..100_000).map(|_| sample_standard_stable(beta, &mut rng)).collect();
    for lambda in [0.5, 1.0, 2.0] {
        let vals: Vec<f64> = samples.iter().map(|&s| (-lambda * s).exp()).collect();
        let (mean, se) = mean_se(&vals);
        println!(
            "  lambda = {lambda}: mc {mean:.5} +- {se:.5}, exact {:.5}",
            (-(lambda as f64).powf(beta)).exp()
        );
    }

    // A sampled path and its right-continuous inverse.
    let grid: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.002).collect();
    let path = simulate_subordinator(beta, &grid, &mut rng)?;
    println!("\none subordinator path: S_2 = {:.4}", path.values.last().unwrap());
    for y in [0.1, 0.5, 1.0] {
        println!("  sigma_{y} = {:.4}", inverse_subordinator(&path, y)?);
    }

    let sigmas: Vec<f64> =
        (0..20_000).map(|_| sample_inverse_subordinator(beta, 1.0, 0.005, &mut rng)).collect::<belavkin::Result<_>>()?;
    let (mean, se) = mean_se(&sigmas);
    println!(
        "\nE[sigma_1] by Monte Carlo: {mean:.4} +- {se:.4}; closed form 1/Gamma(1+beta) = {:.4}",
        1.0 / gamma(1.0 + beta)
    );
    Ok(())
}
