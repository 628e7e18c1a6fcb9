//! Search-space bounds and the per-hyperparameter kernel metadata.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Cnn,
    Mlp,
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemKind::Cnn => "cnn",
            ProblemKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cnn" => Ok(ProblemKind::Cnn),
            "mlp" => Ok(ProblemKind::Mlp),
            other => Err(format!("unknown problem kind `{other}`")),
        }
    }
}

/// Which BO-searched stage a space belongs to. Stage 2 is a grid and has
/// no kernel space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Core architecture: depth and widths.
    Architecture,
    /// Learning rate, weight decay and batch size.
    Training,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    BatchSize,
    Eta,
    Lambda,
    HiddenLayers,
    ConvLayers,
}

/// How a hyperparameter's comparable value is pulled out of a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    /// The value itself (batch size, layer counts).
    Raw(Field),
    /// log10 of the value (learning rate, weight decay). Zero maps to the
    /// lower bound.
    Log10(Field),
    /// Sum of MLP hidden nodes across layers.
    SumNodes,
    /// Channel count of one conv layer (0-based position).
    Channel(usize),
}

/// One searched hyperparameter with its distance metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParam {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
    pub omega: f64,
    pub ramp_power: f64,
    pub weight: f64,
    pub extractor: Extractor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnBounds {
    pub min_layers: u32,
    pub max_layers: u32,
    pub first_channels: (u32, u32),
    pub max_channels: u32,
}

impl Default for CnnBounds {
    fn default() -> Self {
        CnnBounds { min_layers: 4, max_layers: 16, first_channels: (16, 64), max_channels: 512 }
    }
}

impl CnnBounds {
    /// Largest channel count reachable at 0-based `layer` under the doubling rule.
    pub fn layer_upper(&self, layer: usize) -> u32 {
        let mut c = u64::from(self.first_channels.1);
        for _ in 0..layer {
            c = (2 * c).min(u64::from(self.max_channels));
        }
        c as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpBounds {
    pub min_hidden_layers: u32,
    pub max_hidden_layers: u32,
    pub nodes: (u32, u32),
}

impl Default for MlpBounds {
    fn default() -> Self {
        MlpBounds::small()
    }
}

impl MlpBounds {
    /// 0-2 hidden layers of 20-400 nodes.
    pub fn small() -> Self {
        MlpBounds { min_hidden_layers: 0, max_hidden_layers: 2, nodes: (20, 400) }
    }

    /// 0-3 hidden layers of 50-1000 nodes, for larger datasets.
    pub fn large() -> Self {
        MlpBounds { min_hidden_layers: 0, max_hidden_layers: 3, nodes: (50, 1000) }
    }
}

/// Training hyperparameter ranges. Learning rate and weight decay are given
/// as log10 exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingBounds {
    pub eta_exp: (f64, f64),
    pub lambda_exp: (f64, f64),
    /// Weight decay snaps to zero when its exponent falls below this.
    pub lambda_zero_below: f64,
    pub batch_size: (u32, u32),
}

impl Default for TrainingBounds {
    fn default() -> Self {
        TrainingBounds {
            eta_exp: (-5.0, -1.0),
            lambda_exp: (-6.0, -3.0),
            lambda_zero_below: -5.0,
            batch_size: (32, 512),
        }
    }
}

impl TrainingBounds {
    pub fn lambda_from_exponent(&self, x: f64) -> f64 {
        if x < self.lambda_zero_below {
            0.0
        } else {
            10f64.powf(x)
        }
    }
}

/// All bounds that constrain a config, whatever stage is being searched.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bounds {
    pub cnn: CnnBounds,
    pub mlp: MlpBounds,
    pub training: TrainingBounds,
}

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("hyperparameter `{0}` has lower bound >= upper bound")]
    EmptyRange(String),
    #[error("hyperparameter `{name}` has invalid ramp parameters (omega {omega}, r {ramp_power})")]
    BadRamp { name: String, omega: f64, ramp_power: f64 },
    #[error("weights must be non-negative and sum to 1 (sum is {0})")]
    NotConvex(f64),
    #[error("no hyperparameter named `{0}`")]
    UnknownParam(String),
    #[error("search space has no hyperparameters")]
    Empty,
}

/// The searched hyperparameters of one BO stage plus the bounds every
/// config must satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub stage: Stage,
    pub kind: ProblemKind,
    pub bounds: Bounds,
    pub params: Vec<HyperParam>,
}

pub const DEFAULT_OMEGA: f64 = 3.0;
pub const DEFAULT_RAMP_POWER: f64 = 1.0;

fn param(name: impl Into<String>, lower: f64, upper: f64, scale: Scale, extractor: Extractor) -> HyperParam {
    HyperParam {
        name: name.into(),
        lower,
        upper,
        scale,
        omega: DEFAULT_OMEGA,
        ramp_power: DEFAULT_RAMP_POWER,
        weight: 0.0,
        extractor,
    }
}

impl SearchSpace {
    /// Core-architecture space with uniform weights.
    pub fn architecture(kind: ProblemKind, bounds: Bounds) -> Self {
        let mut params = Vec::new();
        match kind {
            ProblemKind::Cnn => {
                let b = &bounds.cnn;
                for layer in 0..b.max_layers as usize {
                    params.push(param(
                        format!("channels_{}", layer + 1),
                        f64::from(b.first_channels.0),
                        f64::from(b.layer_upper(layer)),
                        Scale::Linear,
                        Extractor::Channel(layer),
                    ));
                }
            }
            ProblemKind::Mlp => {
                let b = &bounds.mlp;
                if b.max_hidden_layers > b.min_hidden_layers {
                    params.push(param(
                        "hidden_layers",
                        f64::from(b.min_hidden_layers),
                        f64::from(b.max_hidden_layers),
                        Scale::Linear,
                        Extractor::Raw(Field::HiddenLayers),
                    ));
                }
                params.push(param(
                    "hidden_nodes_sum",
                    f64::from(b.min_hidden_layers * b.nodes.0),
                    f64::from(b.max_hidden_layers * b.nodes.1),
                    Scale::Linear,
                    Extractor::SumNodes,
                ));
            }
        }
        let mut space = SearchSpace { stage: Stage::Architecture, kind, bounds, params };
        space.set_uniform_weights();
        space
    }

    /// Training-hyperparameter space (identical for CNNs and MLPs).
    pub fn training(kind: ProblemKind, bounds: Bounds) -> Self {
        let t = &bounds.training;
        let params = vec![
            param("eta", t.eta_exp.0, t.eta_exp.1, Scale::Log, Extractor::Log10(Field::Eta)),
            param("lambda", t.lambda_exp.0, t.lambda_exp.1, Scale::Log, Extractor::Log10(Field::Lambda)),
            param(
                "batch_size",
                f64::from(t.batch_size.0),
                f64::from(t.batch_size.1),
                Scale::Linear,
                Extractor::Raw(Field::BatchSize),
            ),
        ];
        let mut space = SearchSpace { stage: Stage::Training, kind, bounds, params };
        space.set_uniform_weights();
        space
    }

    pub fn set_uniform_weights(&mut self) {
        let k = self.params.len() as f64;
        for p in &mut self.params {
            p.weight = 1.0 / k;
        }
    }

    /// Overrides omega and r for every hyperparameter.
    pub fn with_ramp(mut self, omega: f64, ramp_power: f64) -> Self {
        for p in &mut self.params {
            p.omega = omega;
            p.ramp_power = ramp_power;
        }
        self
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut HyperParam, SpaceError> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| SpaceError::UnknownParam(name.to_string()))
    }

    /// Replaces the weights, given in parameter order.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<(), SpaceError> {
        if weights.len() != self.params.len() {
            return Err(SpaceError::NotConvex(weights.iter().sum()));
        }
        for (p, &w) in self.params.iter_mut().zip(weights) {
            p.weight = w;
        }
        self.check()
    }

    pub fn check(&self) -> Result<(), SpaceError> {
        if self.params.is_empty() {
            return Err(SpaceError::Empty);
        }
        let mut sum = 0.0;
        for p in &self.params {
            if !(p.lower < p.upper) {
                return Err(SpaceError::EmptyRange(p.name.clone()));
            }
            if !(p.omega > 0.0 && p.ramp_power > 0.0 && p.ramp_power <= 1.0) {
                return Err(SpaceError::BadRamp {
                    name: p.name.clone(),
                    omega: p.omega,
                    ramp_power: p.ramp_power,
                });
            }
            if p.weight < 0.0 {
                return Err(SpaceError::NotConvex(p.weight));
            }
            sum += p.weight;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SpaceError::NotConvex(sum));
        }
        Ok(())
    }
}
