//! JSON experiment configuration.

use std::path::PathBuf;

use langevin_core::planner::InitVariant;
use langevin_core::potentials::{make_builtin, Family};
use langevin_core::{Axis, GaussianLaw, PlanRequest, PotentialSpec, QuadraticTarget};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Plan,
    Sample,
    BiasScan,
    DecayCurve,
    InitCheck,
    Verify,
}

/// One experiment. Only the sections the command reads need to be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present it must match the command given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_scan: Option<BiasScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecayConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

/// Built-in potential with its parameters, tagged by `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum PotentialConfig {
    Power {
        #[serde(default = "one")]
        d: usize,
        alpha: f64,
    },
    SmoothedPower {
        #[serde(default = "one")]
        d: usize,
        alpha: f64,
    },
    SmoothedNorm {
        #[serde(default = "one")]
        d: usize,
    },
    Product {
        #[serde(default = "one")]
        d: usize,
        alpha: f64,
    },
    /// `½ xᵀAx`; `a` (rows) wins over `diag`, which wins over the identity in dimension `d`.
    Quadratic {
        #[serde(default = "one")]
        d: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diag: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a: Option<Vec<Vec<f64>>>,
    },
    PerturbedPower {
        #[serde(default = "one")]
        d: usize,
        alpha: f64,
    },
    PerturbedQuadratic {
        #[serde(default = "one")]
        d: usize,
        s: f64,
    },
}

impl PotentialConfig {
    /// The quadratic target, for configs that describe one.
    pub fn quadratic(&self) -> Result<Option<QuadraticTarget>, CliError> {
        let PotentialConfig::Quadratic { d, diag, a } = self else {
            return Ok(None);
        };
        let target = match (a, diag) {
            (Some(rows), _) => {
                let n = rows.len();
                if n == 0 || rows.iter().any(|r| r.len() != n) {
                    return Err(CliError::Config("quadratic `a` must be a nonempty square matrix".into()));
                }
                QuadraticTarget::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))?
            }
            (None, Some(diag)) => QuadraticTarget::diagonal(diag)?,
            (None, None) => QuadraticTarget::isotropic(*d, 1.0)?,
        };
        Ok(Some(target))
    }

    pub fn spec(&self) -> Result<PotentialSpec, CliError> {
        if let Some(target) = self.quadratic()? {
            return Ok(target.potential_spec()?);
        }
        let (family, d) = match *self {
            PotentialConfig::Power { d, alpha } => (Family::Power { alpha }, d),
            PotentialConfig::SmoothedPower { d, alpha } => (Family::SmoothedPower { alpha }, d),
            PotentialConfig::SmoothedNorm { d } => (Family::SmoothedNorm, d),
            PotentialConfig::Product { d, alpha } => (Family::Product { alpha }, d),
            PotentialConfig::PerturbedPower { d, alpha } => (Family::PerturbedPower { alpha }, d),
            PotentialConfig::PerturbedQuadratic { d, s } => (Family::PerturbedQuadratic { s }, d),
            PotentialConfig::Quadratic { .. } => unreachable!("handled above"),
        };
        Ok(make_builtin(family, d)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    Lsi,
    LogConcave,
    Lo,
    Mlsi,
}

/// Planner request; `theorem` defaults to the one matching the FI kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem: Option<Theorem>,
    #[serde(flatten)]
    pub request: PlanRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

/// Grid axes; a single axis is repeated for 2D targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub axes: Vec<AxisConfig>,
}

impl GridConfig {
    pub fn axes(&self, d: usize) -> Result<Vec<Axis>, CliError> {
        let axes: Vec<AxisConfig> = match self.axes.len() {
            1 => vec![self.axes[0]; d],
            n if n == d => self.axes.clone(),
            n => return Err(CliError::Config(format!("grid has {n} axes for a {d}-dimensional target"))),
        };
        axes.iter().map(|a| Axis::new(a.lo, a.hi, a.n).map_err(CliError::from)).collect()
    }
}

/// Initial law `μ0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitConfig {
    /// `N(mean, var·I)`; a scalar mean is broadcast.
    Gaussian { mean: MeanConfig, var: f64 },
    /// The target itself (grid commands only).
    Target,
    /// One of the planner's initialization recipes.
    Design {
        #[serde(flatten)]
        variant: InitVariant,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanConfig {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl InitConfig {
    pub fn gaussian(&self, spec: &PotentialSpec) -> Result<Option<GaussianLaw>, CliError> {
        let d = spec.dim();
        match self {
            InitConfig::Gaussian { mean, var } => {
                let mean = match mean {
                    MeanConfig::Scalar(m) => DVector::from_element(d, *m),
                    MeanConfig::Vector(v) if v.len() == d => DVector::from_vec(v.clone()),
                    MeanConfig::Vector(v) => {
                        return Err(CliError::Config(format!("init mean has {} entries, target has d = {d}", v.len())))
                    }
                };
                if !(*var > 0.0) {
                    return Err(CliError::Config(format!("init variance {var} must be positive")));
                }
                Ok(Some(GaussianLaw::new(mean, DMatrix::from_diagonal_element(d, d, *var))?))
            }
            InitConfig::Target => Ok(None),
            InitConfig::Design { variant } => Ok(Some(langevin_core::planner::init_design(spec, *variant)?.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub h: f64,
    pub n_steps: u64,
    pub n_particles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasScanConfig {
    pub dims: Vec<usize>,
    pub orders: Vec<f64>,
    pub steps: Vec<f64>,
    /// When given, every `bias(h)/bias(h/2)` must fall in this range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_ratio_range: Option<[f64; 2]>,
}

fn order_two() -> f64 {
    2.0
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedSlope {
    pub value: f64,
    /// Relative tolerance.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    #[serde(default = "order_two")]
    pub q: f64,
    pub h_fine: f64,
    pub n_steps: usize,
    #[serde(default = "one")]
    pub record_every: usize,
    /// Stop at the first recorded law with `R_q` below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_below: Option<f64>,
    /// Upper end of the terminal segment used for the log-linear fit.
    #[serde(default = "half")]
    pub fit_below: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_terminal_slope: Option<ExpectedSlope>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangleForm {
    /// `R_q(μ‖π) ≤ (2q−1)/(2q−2) R_2q(μ‖ν) + R_(2q−1)(ν‖π)`.
    Weighted,
    /// The unit-coefficient form, which admits counterexamples.
    Stated,
}

fn default_instances() -> usize {
    200
}

fn default_paths() -> usize {
    20_000
}

fn six() -> f64 {
    6.0
}

fn weighted() -> TriangleForm {
    TriangleForm::Weighted
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_paths")]
    pub mc_paths: usize,
    /// Constant in the squared Brownian bound `exp(c d h λ)`; lower it for a negative control.
    #[serde(default = "six")]
    pub brownian_constant: f64,
    #[serde(default = "weighted")]
    pub weak_triangle: TriangleForm,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { instances: default_instances(), mc_paths: default_paths(), brownian_constant: six(), weak_triangle: weighted() }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn potential(&self) -> Result<&PotentialConfig, CliError> {
        self.potential.as_ref().ok_or_else(|| missing("potential"))
    }

    pub fn grid(&self) -> Result<&GridConfig, CliError> {
        self.grid.as_ref().ok_or_else(|| missing("grid"))
    }

    pub fn init(&self) -> Result<&InitConfig, CliError> {
        self.init.as_ref().ok_or_else(|| missing("init"))
    }
}

pub(crate) fn missing(section: &str) -> CliError {
    CliError::Config(format!("config section `{section}` is required by this command"))
}
