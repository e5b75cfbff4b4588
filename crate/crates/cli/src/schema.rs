//! JSON schemas for instances and experiment configs. Matrices are dense
//! row-major with explicit dimensions so files are replayable byte-for-byte.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixData {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixData {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>, CliError> {
        if self.data.len() != self.rows * self.cols {
            return Err(CliError::Config(format!(
                "matrix data length {} does not match {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

pub fn to_vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Deterministic generator recipe; `version` pins the sampling layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    #[serde(default = "default_hurwitz_margin")]
    pub hurwitz_margin: f64,
    #[serde(default = "default_hessian_regularization")]
    pub hessian_regularization: f64,
    #[serde(default)]
    pub output_constraints: usize,
    /// Replace the generated cross and input Hessian blocks with a pure
    /// regularization (∇²ᵤᵤΦ = 0.1·I, ∇²ₓᵤΦ = 0, linear u-term 0). The
    /// resulting state-dominant objectives have a finite closed-loop
    /// stability boundary, which the jointly regularized default often lacks.
    #[serde(default)]
    pub state_dominant: bool,
}

fn default_version() -> u32 {
    1
}
fn default_hurwitz_margin() -> f64 {
    0.1
}
fn default_hessian_regularization() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintData {
    pub matrix: MatrixData,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxData {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Fully materialized instance: LTI plant + quadratic (optionally ℓ1-
/// regularized) objective, optional output constraint and input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineInstance {
    pub a: MatrixData,
    pub b: MatrixData,
    pub w: Vec<f64>,
    pub hessian_xx: MatrixData,
    pub hessian_xu: MatrixData,
    pub hessian_uu: MatrixData,
    pub linear_x: Vec<f64>,
    pub linear_u: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub l1_weight_x: f64,
    #[serde(default)]
    pub constraint: Option<ConstraintData>,
    #[serde(default)]
    pub input_box: Option<BoxData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSpec {
    Recipe(RecipeSpec),
    Inline(Box<InlineInstance>),
    File { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FigGradient,
    FigNewton,
    FigSubgradient,
    FigNesterov,
    FigSaddle,
    BoundsReport,
    ThresholdSweep,
    PropertySuite,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::FigGradient => "fig_gradient",
            ExperimentKind::FigNewton => "fig_newton",
            ExperimentKind::FigSubgradient => "fig_subgradient",
            ExperimentKind::FigNesterov => "fig_nesterov",
            ExperimentKind::FigSaddle => "fig_saddle",
            ExperimentKind::BoundsReport => "bounds_report",
            ExperimentKind::ThresholdSweep => "threshold_sweep",
            ExperimentKind::PropertySuite => "property_suite",
        }
    }
}

/// Optional overrides on the derived simulation parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOverrides {
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub record_stride: Option<usize>,
    #[serde(default)]
    pub convergence_tol: Option<f64>,
    #[serde(default)]
    pub divergence_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub instance: Option<InstanceSpec>,
    #[serde(default = "default_multipliers")]
    pub eps_multipliers: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Seed list for sweep experiments; overrides `seed`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub sim: SimOverrides,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Fraction of the plant decay used as the Lyapunov shift τ. Defaults to
    /// 0.9 for generated instances and 0.5 for the scalar reference.
    #[serde(default)]
    pub margin_fraction: Option<f64>,
    /// Augmentation weight of the saddle-point family.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Use the literal textbook sign layout of the saddle-point law instead
    /// of the descent-consistent one.
    #[serde(default)]
    pub literal_saddle_signs: bool,
}

fn default_multipliers() -> Vec<f64> {
    vec![1.0]
}
fn default_output_dir() -> String {
    String::from("out")
}
fn default_sigma() -> f64 {
    10.0
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            instance: None,
            eps_multipliers: default_multipliers(),
            seed: None,
            seeds: None,
            sim: SimOverrides::default(),
            output_dir: default_output_dir(),
            margin_fraction: None,
            sigma: default_sigma(),
            literal_saddle_signs: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.eps_multipliers.is_empty() {
            return Err(CliError::Config(String::from(
                "eps_multipliers must be nonempty",
            )));
        }
        if self.eps_multipliers.iter().any(|&m| !(m > 0.0)) {
            return Err(CliError::Config(String::from(
                "eps_multipliers must be positive",
            )));
        }
        if let Some(m) = self.margin_fraction {
            if !(m > 0.0 && m < 1.0) {
                return Err(CliError::Config(String::from(
                    "margin_fraction must lie in (0, 1)",
                )));
            }
        }
        if self.sigma < 0.0 {
            return Err(CliError::Config(String::from("sigma must be nonnegative")));
        }
        if let Some(dt) = self.sim.dt {
            if !(dt > 0.0) {
                return Err(CliError::Config(String::from("dt must be positive")));
            }
        }
        if let Some(h) = self.sim.horizon {
            if !(h > 0.0) {
                return Err(CliError::Config(String::from("horizon must be positive")));
            }
        }
        Ok(())
    }
}
