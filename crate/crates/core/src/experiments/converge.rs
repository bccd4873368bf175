//! Convergence experiments: semigroup rate, generator residual rate, and
//! detection-angle independence of the diffusive limit.

use super::ExperimentOutcome;
use crate::chain::{ChannelSpec, RenewalSolver, StepKernel};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::generators::{
    empirical_generator_residual, empirical_generator_values, eval_dif, probe_states,
    semigroup_reference, GeneratorSpec, ObservablePolynomial,
};
use crate::linalg::pauli;
use crate::report::{fmt, CsvTable};
use crate::stats::log_log_slope;
use std::path::Path;

fn quadratic_test_function() -> ObservablePolynomial {
    ObservablePolynomial::quadratic(pauli::sigma_z()).expect("sigma_z is Hermitian")
}

/// Acceptance 1: sup-error of the scaled discrete semigroup against the
/// limit semigroup reference; the log-log slope must sit in [0.45, 1.2].
pub fn semigroup(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutcome> {
    let spec = config.model.generator_spec()?;
    let s = config.numeric.s.unwrap_or(0.5);
    let h_list = config
        .numeric
        .h_list
        .clone()
        .unwrap_or_else(|| (6..=12).map(|k| 2f64.powi(-k)).collect());
    let probe_count = config.numeric.probe_count.unwrap_or(20);
    let probes = probe_states(spec.a.dim(), probe_count, config.numeric.seed);
    let f = quadratic_test_function();

    let reference = semigroup_reference(&f, &spec, s, &probes)?;
    let hspec = spec.to_hamiltonian();
    let eval = |r: &crate::qstate::DensityMatrix| f.eval(r);

    let mut table = CsvTable::new("h,n_steps,sup_error,config_hash");
    let hash = config.model.config_hash();
    let mut errors = Vec::new();
    for &h in &h_list {
        let n = (s / h).round() as usize;
        let solver = RenewalSolver::new(&eval, &hspec, h, n, StepKernel::Exact)?;
        let mut sup: f64 = 0.0;
        for (rho, reference_value) in probes.iter().zip(&reference) {
            let value = solver.expectation(rho)?;
            sup = sup.max((value - reference_value).abs());
        }
        errors.push(sup.max(1e-300));
        table.push_row(&[fmt(h), n.to_string(), fmt(sup), hash.clone()]);
    }
    let slope = log_log_slope(&h_list, &errors);
    let passed = (0.45..=1.2).contains(&slope);
    let artifact = table.write(dir, "semigroup_convergence.csv")?;
    Ok(ExperimentOutcome {
        experiment: "converge/semigroup".into(),
        metric_name: "fitted_slope".into(),
        metric: slope,
        passed,
        details: vec![format!("sup errors over {} probes: {errors:?}", probes.len())],
        artifacts: vec![artifact],
    })
}

/// Acceptance 2: residual of the empirical generator against the limit
/// generator decays at least like sqrt(h) for counting and diffusive reads.
pub fn generator_residual(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutcome> {
    let base = config.model.generator_spec()?;
    let h_list = config
        .numeric
        .h_list
        .clone()
        .unwrap_or_else(|| vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6]);
    let probe_count = config.numeric.probe_count.unwrap_or(20);
    let probes = probe_states(base.a.dim(), probe_count, config.numeric.seed);
    let f = quadratic_test_function();
    let hash = config.model.config_hash();

    let mut table = CsvTable::new("channel,h,residual,channel_config_hash");
    let mut slopes = Vec::new();
    for (label, phi) in [("counting", 0.0), ("diffusive", std::f64::consts::FRAC_PI_4)] {
        let channels: Vec<ChannelSpec> = base
            .channels
            .iter()
            .map(|ch| ChannelSpec { c: ch.c.clone(), phi })
            .collect();
        let spec = GeneratorSpec::new(base.a.clone(), channels)?;
        let mut residuals = Vec::new();
        for &h in &h_list {
            let r = empirical_generator_residual(&f, &spec, h, &probes)?;
            residuals.push(r.max(1e-300));
            table.push_row(&[label.to_string(), fmt(h), fmt(r), hash.clone()]);
        }
        slopes.push((label, log_log_slope(&h_list, &residuals)));
    }
    let worst = slopes.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min);
    let passed = worst >= 0.45;
    let artifact = table.write(dir, "generator_residual.csv")?;
    Ok(ExperimentOutcome {
        experiment: "converge/generator".into(),
        metric_name: "min_fitted_slope".into(),
        metric: worst,
        passed,
        details: slopes.iter().map(|(l, s)| format!("{l}: slope {s:.3}")).collect(),
        artifacts: vec![artifact],
    })
}

/// Acceptance 3: two detection angles share the angle-free diffusive
/// generator; their empirical generators agree within five times the
/// single-angle residual at the finest step.
pub fn phi_independence(config: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutcome> {
    let base = config.model.generator_spec()?;
    let h_list = config
        .numeric
        .h_list
        .clone()
        .unwrap_or_else(|| (6..=12).map(|k| 2f64.powi(-k)).collect());
    let h_fine = h_list.iter().cloned().fold(f64::INFINITY, f64::min);
    let probe_count = config.numeric.probe_count.unwrap_or(20);
    let probes = probe_states(base.a.dim(), probe_count, config.numeric.seed);
    let f = quadratic_test_function();
    let angles = [std::f64::consts::FRAC_PI_6, std::f64::consts::FRAC_PI_4];

    let spec_at = |phi: f64| -> Result<GeneratorSpec> {
        GeneratorSpec::new(
            base.a.clone(),
            base.channels
                .iter()
                .map(|ch| ChannelSpec { c: ch.c.clone(), phi })
                .collect(),
        )
    };

    // Residual decline for both angles over the h list (reported), plus the
    // mutual difference at the finest step.
    let mut table = CsvTable::new("phi,h,residual");
    let mut fine_residuals = Vec::new();
    for &phi in &angles {
        let spec = spec_at(phi)?;
        for &h in &h_list {
            let r = empirical_generator_residual(&f, &spec, h, &probes)?;
            if h == h_fine {
                fine_residuals.push(r);
            }
            table.push_row(&[fmt(phi), fmt(h), fmt(r)]);
        }
    }
    let values_a = empirical_generator_values(&f, &spec_at(angles[0])?, h_fine, &probes)?;
    let values_b = empirical_generator_values(&f, &spec_at(angles[1])?, h_fine, &probes)?;
    let mutual: f64 = values_a
        .iter()
        .zip(&values_b)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // Both empirical generators target the same angle-free limit.
    let c = &base.channels[0].c;
    let limit_check: f64 = probes
        .iter()
        .map(|rho| eval_dif(&f, rho, &base.a, c))
        .fold(0.0, |acc: f64, v| acc.max(v.abs()));
    let bound = 5.0 * fine_residuals.iter().cloned().fold(0.0, f64::max);
    let passed = mutual <= bound;
    let artifact = table.write(dir, "phi_independence.csv")?;
    Ok(ExperimentOutcome {
        experiment: "converge/phi-independence".into(),
        metric_name: "mutual_sup_difference".into(),
        metric: mutual,
        passed,
        details: vec![
            format!("bound 5 x max single-angle residual = {bound:.3e}"),
            format!("angle-free generator magnitude over probes: {limit_check:.3e}"),
        ],
        artifacts: vec![artifact],
    })
}
