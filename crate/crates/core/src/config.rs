//! Experiment configuration: a strict JSON schema with complex matrices as
//! paired real/imaginary arrays. Unknown keys are rejected and dimension
//! mismatches are reported with the offending field.

use crate::chain::ChannelSpec;
use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Complex matrix as nested real/imaginary arrays; the imaginary block may
/// be omitted for real matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixData {
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<Vec<Vec<f64>>>,
}

impl MatrixData {
    pub fn to_matrix(&self, field: &str) -> Result<ComplexMatrix> {
        let n = self.re.len();
        if n == 0 {
            return Err(Error::Config(format!("{field}: matrix must not be empty")));
        }
        for (i, row) in self.re.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!(
                    "{field}.re[{i}]: expected {n} entries, found {}",
                    row.len()
                )));
            }
        }
        if let Some(im) = &self.im {
            if im.len() != n {
                return Err(Error::Config(format!(
                    "{field}.im: expected {n} rows, found {}",
                    im.len()
                )));
            }
            for (i, row) in im.iter().enumerate() {
                if row.len() != n {
                    return Err(Error::Config(format!(
                        "{field}.im[{i}]: expected {n} entries, found {}",
                        row.len()
                    )));
                }
            }
        }
        let mut m = ComplexMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let im = self.im.as_ref().map(|rows| rows[i][j]).unwrap_or(0.0);
                m[(i, j)] = Complex64::new(self.re[i][j], im);
            }
        }
        Ok(m)
    }

    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        let n = m.dim();
        let re = (0..n).map(|i| (0..n).map(|j| m[(i, j)].re).collect()).collect();
        let has_im = (0..n).any(|i| (0..n).any(|j| m[(i, j)].im != 0.0));
        let im = if has_im {
            Some((0..n).map(|i| (0..n).map(|j| m[(i, j)].im).collect()).collect())
        } else {
            None
        };
        Self { re, im }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub c: MatrixData,
    #[serde(default)]
    pub phi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub a: MatrixData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixData>,
    pub channels: Vec<ChannelConfig>,
}

impl ModelConfig {
    pub fn atom_hamiltonian(&self) -> Result<ComplexMatrix> {
        self.a.to_matrix("model.a")
    }

    pub fn channel_specs(&self) -> Result<Vec<ChannelSpec>> {
        self.channels
            .iter()
            .enumerate()
            .map(|(i, ch)| {
                Ok(ChannelSpec {
                    c: ch.c.to_matrix(&format!("model.channels[{i}].c"))?,
                    phi: ch.phi,
                })
            })
            .collect()
    }

    pub fn hamiltonian_spec(&self) -> Result<crate::chain::HamiltonianSpec> {
        let a = self.atom_hamiltonian()?;
        let channels = self.channel_specs()?;
        match &self.b {
            Some(b) => crate::chain::HamiltonianSpec::with_probe_block(
                a,
                b.to_matrix("model.b")?,
                channels,
            ),
            None => crate::chain::HamiltonianSpec::new(a, channels),
        }
    }

    pub fn generator_spec(&self) -> Result<crate::generators::GeneratorSpec> {
        crate::generators::GeneratorSpec::new(self.atom_hamiltonian()?, self.channel_specs()?)
    }

    /// Stable fingerprint of the model block for result tables.
    pub fn config_hash(&self) -> String {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut feed = |x: f64| {
            for byte in x.to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for row in &self.a.re {
            row.iter().for_each(|&x| feed(x));
        }
        if let Some(im) = &self.a.im {
            for row in im {
                row.iter().for_each(|&x| feed(x));
            }
        }
        for ch in &self.channels {
            feed(ch.phi);
            for row in &ch.c.re {
                row.iter().for_each(|&x| feed(x));
            }
            if let Some(im) = &ch.c.im {
                for row in im {
                    row.iter().for_each(|&x| feed(x));
                }
            }
        }
        format!("{hash:016x}")
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_count: Option<usize>,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub formats: Vec<String>,
    /// Dump raw trajectory records where the experiment produces them.
    #[serde(default)]
    pub raw_trajectories: bool,
}

/// Control-specific block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub h0_1: MatrixData,
    pub h0_2: MatrixData,
    pub u_grid: Vec<f64>,
    pub v_grid: Vec<f64>,
    pub j_cost: MatrixData,
    pub f_cost: MatrixData,
    #[serde(default = "default_mesh")]
    pub mesh_per_axis: usize,
}

fn default_mesh() -> usize {
    7
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Converge,
    Zeno,
    SdeEnsemble,
    Equivalence,
    Fractional,
    CtrwLimit,
    Control,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ExperimentKind::Converge => "converge",
            ExperimentKind::Zeno => "zeno",
            ExperimentKind::SdeEnsemble => "sde-ensemble",
            ExperimentKind::Equivalence => "equivalence",
            ExperimentKind::Fractional => "fractional",
            ExperimentKind::CtrwLimit => "ctrw-limit",
            ExperimentKind::Control => "control",
        };
        write!(f, "{name}")
    }
}

/// Top-level experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Sub-mode within the experiment kind (e.g. "semigroup", "purity").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    pub model: ModelConfig,
    #[serde(default)]
    pub numeric: NumericConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        // Matrix bocks parse and are mutually consistent.
        let spec = self.model.hamiltonian_spec()?;
        let n = spec.atom_dim();
        if let Some(beta) = self.numeric.beta {
            if !(0.0 < beta && beta < 1.0) {
                return Err(Error::Config("numeric.beta must lie in (0,1)".into()));
            }
        }
        for (name, value) in [
            ("numeric.dt", self.numeric.dt),
            ("numeric.horizon", self.numeric.horizon),
            ("numeric.s", self.numeric.s),
            ("numeric.grid_step", self.numeric.grid_step),
        ] {
            if let Some(v) = value {
                if v <= 0.0 {
                    return Err(Error::Config(format!("{name} must be positive")));
                }
            }
        }
        if let Some(hs) = &self.numeric.h_list {
            if hs.iter().any(|&h| h <= 0.0) {
                return Err(Error::Config("numeric.h_list entries must be positive".into()));
            }
        }
        if self.experiment == ExperimentKind::Control {
            let control = self
                .control
                .as_ref()
                .ok_or_else(|| Error::Config("control experiment needs a control block".into()))?;
            for (field, m) in [
                ("control.h0_1", &control.h0_1),
                ("control.h0_2", &control.h0_2),
                ("control.j_cost", &control.j_cost),
                ("control.f_cost", &control.f_cost),
            ] {
                let parsed = m.to_matrix(field)?;
                if parsed.dim() != n {
                    return Err(Error::Config(format!(
                        "{field}: dimension {} does not match the atom dimension {n}",
                        parsed.dim()
                    )));
                }
            }
            if control.u_grid.is_empty() || control.v_grid.is_empty() {
                return Err(Error::Config(
                    "control.u_grid and control.v_grid must be nonempty".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "experiment": "converge",
            "mode": "generator",
            "model": {
                "a": { "re": [[0.0, 0.5], [0.5, 0.0]] },
                "channels": [ { "c": { "re": [[0.0, 0.0], [1.0, 0.0]] }, "phi": 0.0 } ]
            },
            "numeric": { "h_list": [0.01, 0.001], "seed": 7 },
            "output": { "formats": ["csv"] }
        }"#
        .to_string()
    }

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Converge);
        assert_eq!(cfg.numeric.seed, 7);
        let spec = cfg.model.hamiltonian_spec().unwrap();
        assert_eq!(spec.atom_dim(), 2);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = minimal_json().replace("\"mode\"", "\"made\"");
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        assert!(format!("{err}").contains("unknown field"), "{err}");
    }

    #[test]
    fn rejects_ragged_matrix() {
        let bad = minimal_json().replace("[[0.0, 0.5], [0.5, 0.0]]", "[[0.0, 0.5], [0.5]]");
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        assert!(format!("{err}").contains("model.a"), "{err}");
    }

    #[test]
    fn rejects_bad_beta() {
        let bad = minimal_json().replace(
            "\"seed\": 7",
            "\"seed\": 7, \"beta\": 1.5",
        );
        let err = ExperimentConfig::from_json(&bad).unwrap_err();
        assert!(format!("{err}").contains("beta"), "{err}");
    }

    #[test]
    fn matrix_roundtrip() {
        let m = crate::linalg::pauli::sigma_y();
        let data = MatrixData::from_matrix(&m);
        let back = data.to_matrix("test").unwrap();
        assert!(back.dist_max(&m) < 1e-15);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_json(&minimal_json()).unwrap();
        let b = ExperimentConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(a.model.config_hash(), b.model.config_hash());
        let changed = minimal_json().replace("0.5", "0.6");
        let c = ExperimentConfig::from_json(&changed).unwrap();
        assert_ne!(a.model.config_hash(), c.model.config_hash());
    }
}
