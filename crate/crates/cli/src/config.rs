//! TOML experiment files.
//!
//! A run file has the sections `[mesh]`, `[model]`, `[time]`, `[scheme]`,
//! `[data]` and `[output]`; a study file adds `[study]`. See
//! `configs/run.toml` for an annotated example.

use lagflow_core::diagnostics::{Coupling, StudyConfig};
use lagflow_core::schemes::DEFAULT_TOL_RES;
use lagflow_core::{
    LinearSolver, LowerOrderCoeff, NFunctionPD, NonlinearSolver, RegularizationKind, RegularizedDensity,
    ScalarField, SchemeConfig, SchemeKind,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: invalid value for `{field}`: {reason}")]
    Invalid {
        path: PathBuf,
        field: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// Subdivisions per side of the level-0 unit-square mesh.
    pub n: usize,
    /// Uniform red refinements applied on top.
    #[serde(default)]
    pub refine: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub p: f64,
    #[serde(default)]
    pub delta: f64,
    pub eps: f64,
    #[serde(default = "default_regularization")]
    pub regularization: RegularizationKind,
    #[serde(default = "default_coeff")]
    pub coeff: LowerOrderCoeff,
}

fn default_regularization() -> RegularizationKind {
    RegularizationKind::QuadraticNorm
}

fn default_coeff() -> LowerOrderCoeff {
    LowerOrderCoeff::Zero
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(rename = "T")]
    pub final_time: f64,
    #[serde(rename = "K")]
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    #[serde(default = "default_scheme")]
    pub kind: SchemeKind,
    #[serde(default)]
    pub linear: LinearSolver,
    #[serde(default)]
    pub nonlinear: NonlinearSolver,
}

fn default_scheme() -> SchemeKind {
    SchemeKind::SemiImplicit
}

impl Default for SchemeSection {
    fn default() -> Self {
        SchemeSection {
            kind: default_scheme(),
            linear: LinearSolver::Cholesky,
            nonlinear: NonlinearSolver::Kacanov {
                tol_res: DEFAULT_TOL_RES,
                max_iter: 200,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "sin_product")]
    pub initial: ScalarField,
    #[serde(default = "zero_field")]
    pub source: ScalarField,
}

fn sin_product() -> ScalarField {
    ScalarField::sin_product()
}

fn zero_field() -> ScalarField {
    ScalarField::Zero
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            initial: sin_product(),
            source: zero_field(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Relative paths are resolved against the config file's directory.
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Write one nodal CSV per time step.
    #[serde(default)]
    pub snapshots: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            snapshots: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "four")]
    pub levels: usize,
    #[serde(default = "default_coupling")]
    pub coupling: Coupling,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "yes")]
    pub negative_control: bool,
}

fn four() -> usize {
    4
}

fn yes() -> bool {
    true
}

fn default_coupling() -> Coupling {
    Coupling::Default
}

/// Full experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for sampling-based checks; runs themselves are deterministic.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub mesh: MeshSection,
    pub model: ModelSection,
    pub time: TimeSection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub study: Option<StudySection>,
}

fn default_seed() -> u64 {
    42
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.scheme_config(path)?;
        if cfg.mesh.n == 0 {
            return Err(invalid(path, "mesh.n", "must be >= 1".into()));
        }
        if let Some(s) = &cfg.study {
            if s.levels == 0 {
                return Err(invalid(path, "study.levels", "must be >= 1".into()));
            }
            cfg.study_config(path)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn scheme_config(&self, path: &Path) -> Result<SchemeConfig, ConfigError> {
        let m = &self.model;
        let nf = NFunctionPD::new(m.p, m.delta).map_err(|e| core_invalid(path, "model", e))?;
        let density =
            RegularizedDensity::new(nf, m.eps, m.regularization).map_err(|e| core_invalid(path, "model", e))?;
        let cfg = SchemeConfig {
            density,
            final_time: self.time.final_time,
            steps: self.time.steps,
            coeff: m.coeff,
            scheme: self.scheme.kind,
            source: self.data.source,
            linear_solver: self.scheme.linear,
            nonlinear: self.scheme.nonlinear,
        };
        cfg.validate().map_err(|e| core_invalid(path, "model", e))?;
        Ok(cfg)
    }

    pub fn study_config(&self, path: &Path) -> Result<StudyConfig, ConfigError> {
        let s = self
            .study
            .as_ref()
            .ok_or_else(|| invalid(path, "study", "a [study] section is required".into()))?;
        let sc = StudyConfig {
            levels: s.levels,
            base_n: self.mesh.n << self.mesh.refine,
            base: self.scheme_config(path)?,
            coupling: s.coupling,
            initial: self.data.initial,
            alpha: s.alpha,
            negative_control: s.negative_control,
        };
        sc.validate().map_err(|e| core_invalid(path, "study", e))?;
        Ok(sc)
    }

    /// Output directory, resolved against the config file's directory.
    pub fn output_dir(&self, config_path: &Path) -> PathBuf {
        if self.output.dir.is_absolute() {
            self.output.dir.clone()
        } else {
            config_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&self.output.dir)
        }
    }
}

fn invalid(path: &Path, field: &str, reason: String) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_path_buf(),
        field: field.to_string(),
        reason,
    }
}

/// Maps a core precondition failure to the offending config field.
fn core_invalid(path: &Path, section: &str, e: lagflow_core::Error) -> ConfigError {
    match e {
        lagflow_core::Error::InvalidParameter { name, reason } => {
            let field = match name {
                "p" | "delta" | "eps" => format!("model.{name}"),
                "r" | "c" => format!("model.coeff.{name}"),
                "T" => "time.T".into(),
                "K" => "time.K".into(),
                "tol_rel" | "max_iter" | "tol_res" => format!("scheme.{name}"),
                other => format!("{section}.{other}"),
            };
            invalid(path, &field, reason)
        }
        other => invalid(path, section, other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[mesh]
n = 4
[model]
p = 2.0
eps = 0.5
[time]
T = 0.1
K = 10
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::parse(MINIMAL, Path::new("x.toml")).unwrap();
        assert_eq!(c.scheme.kind, SchemeKind::SemiImplicit);
        assert_eq!(c.data.source, ScalarField::Zero);
        assert_eq!(c.seed, 42);
        assert_eq!(c.output_dir(Path::new("/a/x.toml")), PathBuf::from("/a/out"));
    }

    #[test]
    fn errors_name_the_field() {
        let text = MINIMAL.replace("eps = 0.5", "eps = 0.0");
        let err = RunConfig::parse(&text, Path::new("x.toml")).unwrap_err().to_string();
        assert!(err.contains("model.eps"), "{err}");
        let text = MINIMAL.replace("p = 2.0", "p = 2.5");
        let err = RunConfig::parse(&text, Path::new("x.toml")).unwrap_err().to_string();
        assert!(err.contains("model.p"), "{err}");
        let text = MINIMAL.replace("n = 4", "n = 4\nsize = 3");
        let err = RunConfig::parse(&text, Path::new("x.toml")).unwrap_err().to_string();
        assert!(err.contains("size") && err.contains("line"), "{err}");
    }

    #[test]
    fn coefficient_registry() {
        let text = format!("{MINIMAL}\n[model.coeff]\nkind = \"shifted-power\"\nr = 2.5\nc = 1.0\n");
        let c = RunConfig::parse(&text, Path::new("x.toml")).unwrap();
        assert_eq!(c.model.coeff, LowerOrderCoeff::ShiftedPower { r: 2.5, c: 1.0 });
        let bad = format!("{MINIMAL}\n[model.coeff]\nkind = \"power\"\nr = 1.5\n");
        let err = RunConfig::parse(&bad, Path::new("x.toml")).unwrap_err().to_string();
        assert!(err.contains("model.coeff.r"), "{err}");
    }
}
