//! TOML configuration files for the solver and checker commands. Unknown
//! keys are rejected.

use serde::{Deserialize, Serialize};

use nlop_core::kernels::{KernelName, KernelSpec};
use nlop_core::quadrature::QuadConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub name: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default, rename = "Lambda")]
    pub lambda_upper: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub normalized: bool,
}

fn default_dim() -> usize {
    1
}

impl KernelSection {
    pub fn to_spec(&self) -> anyhow::Result<KernelSpec> {
        let name = KernelName::parse(&self.name)?;
        Ok(KernelSpec {
            name,
            dim: self.dim,
            s: self.s,
            lambda: self.lambda,
            lambda_upper: self.lambda_upper,
            epsilon: self.epsilon,
            normalized: self.normalized,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct QuadSection {
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub max_depth: Option<usize>,
}

impl QuadSection {
    pub fn to_config(&self) -> QuadConfig {
        let mut cfg = QuadConfig::default();
        if let Some(a) = self.abs_tol {
            cfg.abs_tol = a;
        }
        if let Some(r) = self.rel_tol {
            cfg.rel_tol = r;
        }
        if let Some(d) = self.max_depth {
            cfg.max_depth = d;
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletConfig {
    pub kernel: KernelSection,
    pub problem: DirichletProblemSection,
    #[serde(default)]
    pub quad: QuadSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletProblemSection {
    /// "standard" or "generalized".
    #[serde(default = "default_kind")]
    pub kind: String,
    /// Interior right side (expression or builtin descriptor).
    pub f: String,
    /// Exterior data for the standard problem.
    #[serde(default)]
    pub g: Option<String>,
    /// Exterior data with growth for the generalized problem.
    #[serde(default)]
    pub u0: Option<String>,
    #[serde(default)]
    pub m: usize,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
}

fn default_kind() -> String {
    "standard".into()
}

fn default_nodes() -> usize {
    160
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub json: Option<String>,
    #[serde(default)]
    pub csv: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViscosityFileConfig {
    pub kernel: KernelSection,
    pub problem: ViscosityProblemSection,
    #[serde(default)]
    pub quad: QuadSection,
    pub battery: BatterySection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViscosityProblemSection {
    /// Candidate solution (expression or builtin descriptor).
    pub u: String,
    /// Candidate right side.
    pub f: String,
    #[serde(default)]
    pub m: usize,
    pub r_schedule: Vec<f64>,
    #[serde(default = "default_margin_tol")]
    pub margin_tol: f64,
}

fn default_margin_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySection {
    pub x0: Vec<f64>,
    pub curvatures: Vec<f64>,
}
