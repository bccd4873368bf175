//! Acceptance suite: every numbered check runs its canonical experiment end
//! to end and prints one pass/fail line. Run with `--nocapture` to see the
//! lines as they complete:
//!
//!   cargo test --test acceptance -- --nocapture

use belavkin::experiments::{presets, run_config, ExperimentOutcome};
use std::path::PathBuf;

fn out_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("belavkin-acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(name: &str) -> ExperimentOutcome {
    let config = presets::by_name(name).unwrap_or_else(|| panic!("unknown preset {name}"));
    let outcome = run_config(&config, Some(&out_dir(name)), None)
        .unwrap_or_else(|e| panic!("{name} failed to run: {e}"));
    println!("[{name}] {}", outcome.summary_line());
    for line in &outcome.details {
        println!("[{name}]   {line}");
    }
    outcome
}

#[test]
fn c01_semigroup_convergence_rate() {
    let outcome = run("c01-semigroup-convergence");
    assert!(outcome.passed, "{:?}", outcome.details);
}

#[test]
fn c02_generator_residual_rate() {
    let outcome = run("c02-generator-residual");
    assert!(outcome.passed, "{:?}", outcome.details);
}

#[test]
fn c03_detection_angle_independence() {
    let outcome = run("c03-phi-independence");
    assert!(outcome.passed, "{:?}", outcome.details);
}

#[test]
fn c04_unravelling_consistency() {
    let outcome = run("c04-unravelling-consistency");
    assert!(outcome.passed, "{:?}", outcome.details);
}

#[test]
fn c05_purity_preservation() {
    let outcome = run("c05-purity-preservation");
    assert!(outcome.passed, "{:?}", outcome.details);
}

#[test]
fn c06_linear_nonlinear_equivalence() {
    let outcome = run("c06-linear-equivalence");
    assert!(outcome.passed, "{:?}", outcome.details);
}

#[test]
fn c07_ctrw_limit() {
    let outcome = run("c07-ctrw-limit");
    assert!(outcome.passed, "{:?}", outcome.details);
}

#[test]
fn c08_fractional_equation_residual() {
    let outcome = run("c08-fractional-residual");
    assert!(outcome.passed, "{:?}", outcome.details);
}

#[test]
fn c09_caputo_operator() {
    let outcome = run("c09-caputo-operator");
    assert!(outcome.passed, "{:?}", outcome.details);
}

#[test]
fn c10_drift_flow_positivity() {
    let outcome = run("c10-drift-positivity");
    assert!(outcome.passed, "{:?}", outcome.details);
}

#[test]
fn c11_control_sanity() {
    let outcome = run("c11-control-sanity");
    assert!(outcome.passed, "{:?}", outcome.details);
}
