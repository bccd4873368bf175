//! Canonical experiment configurations: one per acceptance check. The
//! checked-in config files under `configs/` mirror these builders; a test
//! keeps them in sync.

use crate::config::{
    ChannelConfig, ControlConfig, ExperimentConfig, ExperimentKind, MatrixData, ModelConfig,
    NumericConfig, OutputConfig,
};
use crate::linalg::pauli;

fn rabi_atom() -> MatrixData {
    MatrixData::from_matrix(&pauli::sigma_x().scale_re(0.5))
}

fn lowering_channel(phi: f64) -> ChannelConfig {
    ChannelConfig { c: MatrixData::from_matrix(&pauli::lower()), phi }
}

fn base_output() -> OutputConfig {
    OutputConfig { dir: None, formats: vec!["csv".into(), "json".into()], raw_trajectories: false }
}

fn counting_model() -> ModelConfig {
    ModelConfig { a: rabi_atom(), b: None, channels: vec![lowering_channel(0.0)] }
}

/// Semigroup convergence rate of the scaled counting chain (acceptance 1).
pub fn semigroup_convergence() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Converge,
        mode: Some("semigroup".into()),
        model: counting_model(),
        numeric: NumericConfig {
            h_list: Some((6..=12).map(|k| 2f64.powi(-k)).collect()),
            s: Some(0.5),
            probe_count: Some(20),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: None,
    }
}

/// Empirical generator residual rates, counting and diffusive (acceptance 2).
pub fn generator_residual() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Converge,
        mode: Some("generator".into()),
        model: counting_model(),
        numeric: NumericConfig {
            h_list: Some(vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6]),
            probe_count: Some(20),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: None,
    }
}

/// Detection-angle independence of the diffusive limit (acceptance 3).
pub fn phi_independence() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Converge,
        mode: Some("phi-independence".into()),
        model: counting_model(),
        numeric: NumericConfig {
            h_list: Some((6..=12).map(|k| 2f64.powi(-k)).collect()),
            probe_count: Some(20),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: None,
    }
}

/// Unravelling / master-equation consistency (acceptance 4).
pub fn unravelling_consistency() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::SdeEnsemble,
        mode: Some("lindblad-mean".into()),
        model: counting_model(),
        numeric: NumericConfig {
            dt: Some(1e-3),
            n_paths: Some(10_000),
            horizon: Some(1.0),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: None,
    }
}

/// Purity preservation under weak diffusive monitoring (acceptance 5).
pub fn purity_preservation() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::SdeEnsemble,
        mode: Some("purity".into()),
        model: ModelConfig {
            a: rabi_atom(),
            b: None,
            channels: vec![ChannelConfig {
                c: MatrixData::from_matrix(&pauli::sigma_z().scale_re(0.05)),
                phi: std::f64::consts::FRAC_PI_4,
            }],
        },
        numeric: NumericConfig {
            dt_list: Some(vec![1e-3, 1e-4]),
            n_paths: Some(100),
            horizon: Some(1.0),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: None,
    }
}

/// Linear/nonlinear pathwise equivalence via the measure-change link
/// (acceptance 6).
pub fn linear_equivalence() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Equivalence,
        mode: None,
        model: ModelConfig {
            a: MatrixData::from_matrix(&pauli::sigma_x().scale_re(0.4)),
            b: None,
            channels: vec![ChannelConfig {
                c: MatrixData::from_matrix(&pauli::lower().scale_re(0.7)),
                phi: std::f64::consts::FRAC_PI_4,
            }],
        },
        numeric: NumericConfig {
            dt_list: Some(vec![1e-2, 1e-3, 1e-4]),
            horizon: Some(1.0),
            n_paths: Some(2_000),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: None,
    }
}

/// Heavy-tailed chain against the subordinated construction (acceptance 7).
pub fn ctrw_limit() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::CtrwLimit,
        mode: None,
        model: counting_model(),
        numeric: NumericConfig {
            h_list: Some(vec![1e-1, 1e-2, 1e-3]),
            beta: Some(0.7),
            horizon: Some(1.0),
            n_paths: Some(10_000),
            dt: Some(1e-3),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: None,
    }
}

/// Fractional-equation residual within its error budget (acceptance 8).
pub fn fractional_residual() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Fractional,
        mode: Some("residual".into()),
        model: counting_model(),
        numeric: NumericConfig {
            beta: Some(0.7),
            horizon: Some(1.0),
            grid_step: Some(0.02),
            n_paths: Some(100_000),
            dt: Some(2e-3),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: None,
    }
}

/// Caputo operator checks: constants and the power identity (acceptance 9).
pub fn caputo_operator() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Fractional,
        mode: Some("caputo-ops".into()),
        model: counting_model(),
        numeric: NumericConfig { beta: Some(0.5), grid_step: Some(1e-3), seed: 42, ..Default::default() },
        output: base_output(),
        control: None,
    }
}

/// Positivity of the drift-only counting flow (acceptance 10).
pub fn drift_positivity() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::SdeEnsemble,
        mode: Some("drift-positivity".into()),
        model: counting_model(),
        numeric: NumericConfig {
            dt_list: Some(vec![2e-3, 1e-3, 5e-4]),
            n_paths: Some(50),
            horizon: Some(1.0),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: None,
    }
}

/// Control sanity: program vs simulation, monotonicity, Isaacs ordering
/// (acceptance 11).
pub fn control_sanity() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Control,
        mode: None,
        model: counting_model(),
        numeric: NumericConfig {
            dt: Some(0.05),
            horizon: Some(0.6),
            n_paths: Some(4_000),
            beta: Some(0.7),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: Some(ControlConfig {
            h0_1: MatrixData::from_matrix(&pauli::sigma_z()),
            h0_2: MatrixData::from_matrix(&pauli::sigma_y()),
            u_grid: vec![-1.0, 0.0, 1.0],
            v_grid: vec![-0.5, 0.5],
            j_cost: MatrixData::from_matrix(&pauli::sigma_x().scale_re(0.1)),
            f_cost: MatrixData::from_matrix(&pauli::sigma_z()),
            mesh_per_axis: 9,
        }),
    }
}

/// Quantum Zeno freeze of the unscaled chain (chain-module invariant).
pub fn zeno_freeze() -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentKind::Zeno,
        mode: None,
        model: counting_model(),
        numeric: NumericConfig {
            h_list: Some(vec![1e-2, 1e-3, 1e-4]),
            s: Some(1.0),
            seed: 42,
            ..Default::default()
        },
        output: base_output(),
        control: None,
    }
}

/// All named presets with the acceptance numbering.
pub fn all() -> Vec<(&'static str, ExperimentConfig)> {
    vec![
        ("c01-semigroup-convergence", semigroup_convergence()),
        ("c02-generator-residual", generator_residual()),
        ("c03-phi-independence", phi_independence()),
        ("c04-unravelling-consistency", unravelling_consistency()),
        ("c05-purity-preservation", purity_preservation()),
        ("c06-linear-equivalence", linear_equivalence()),
        ("c07-ctrw-limit", ctrw_limit()),
        ("c08-fractional-residual", fractional_residual()),
        ("c09-caputo-operator", caputo_operator()),
        ("c10-drift-positivity", drift_positivity()),
        ("c11-control-sanity", control_sanity()),
        ("zeno-freeze", zeno_freeze()),
    ]
}

/// Look up a preset by name.
pub fn by_name(name: &str) -> Option<ExperimentConfig> {
    all().into_iter().find(|(n, _)| *n == name).map(|(_, c)| c)
}
