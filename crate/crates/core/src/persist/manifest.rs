//! Declarative run manifests (TOML) and the evaluator factory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::bayesopt::{BoSettings, SearchMode};
use crate::config::{Bounds, ProblemKind};
use crate::evaluators::datasets::Dataset;
use crate::evaluators::external::{ExternalSpec, ProtocolError};
use crate::evaluators::synthetic::SyntheticObjective;
use crate::evaluators::{BuiltinMlpEvaluator, DatasetDescriptor, Evaluator, ExternalEvaluator, SyntheticEvaluator};
use crate::objective::{ComplexityMetric, ObjectiveSpec};
use crate::pipeline::{Grids, Presets, StagePlan, SubStage};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("could not read {}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid manifest: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum FactoryError {
    #[error("unknown evaluator `{0}` (expected synthetic:<problem>, builtin-mlp:<dataset> or external)")]
    Unknown(String),
    #[error("unknown synthetic problem `{0}`")]
    UnknownProblem(String),
    #[error("unknown dataset `{0}` (expected digits or blobs)")]
    UnknownDataset(String),
    #[error("the external evaluator needs a command")]
    NoCommand,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

fn default_metric() -> ComplexityMetric {
    ComplexityMetric::TrainTime
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    /// A single weight or a sweep; each value is its own run.
    #[serde(deserialize_with = "one_or_many")]
    pub w_c: Vec<f64>,
    #[serde(default = "default_metric")]
    pub metric: ComplexityMetric,
    /// Skips calibration when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
}

fn default_epochs() -> u32 {
    5
}

fn default_timeout() -> f64 {
    600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorSection {
    /// `synthetic:<problem>`, `builtin-mlp:<dataset>` or `external`.
    pub id: String,
    #[serde(default = "default_epochs")]
    pub epochs: u32,
    #[serde(default = "default_timeout")]
    pub timeout_sec: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    /// Fallback dataset description for external evaluators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetDescriptor>,
    /// Seed of the generated in-memory dataset.
    #[serde(default)]
    pub data_seed: u64,
}

impl EvaluatorSection {
    pub fn synthetic(problem: &str) -> Self {
        EvaluatorSection {
            id: format!("synthetic:{problem}"),
            epochs: default_epochs(),
            timeout_sec: default_timeout(),
            command: Vec::new(),
            dataset: None,
            data_seed: 0,
        }
    }

    /// Instantiates the backend. External evaluators are spawned and
    /// handshaken here.
    pub fn build(&self) -> Result<Box<dyn Evaluator>, FactoryError> {
        if let Some(problem) = self.id.strip_prefix("synthetic:") {
            let objective = SyntheticObjective::by_name(problem).ok_or_else(|| FactoryError::UnknownProblem(problem.into()))?;
            return Ok(Box::new(SyntheticEvaluator::new(objective, self.epochs)));
        }
        if let Some(name) = self.id.strip_prefix("builtin-mlp:") {
            let data = Dataset::by_name(name, self.data_seed).ok_or_else(|| FactoryError::UnknownDataset(name.into()))?;
            return Ok(Box::new(BuiltinMlpEvaluator::new(Arc::new(data), self.epochs)));
        }
        if self.id == "external" {
            if self.command.is_empty() {
                return Err(FactoryError::NoCommand);
            }
            let spec = ExternalSpec {
                command: self.command.clone(),
                epochs: self.epochs,
                timeout: Duration::from_secs_f64(self.timeout_sec),
                dataset: self.dataset.clone(),
            };
            return Ok(Box::new(ExternalEvaluator::spawn(&spec)?));
        }
        Err(FactoryError::Unknown(self.id.clone()))
    }
}

/// BO budget of one stage. Unset counts come from the mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub mode: SearchMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n3: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_n2: Option<f64>,
}

impl Default for StageSection {
    fn default() -> Self {
        StageSection { mode: SearchMode::Balanced, n1: None, n2: None, n3: None, xi: None, sigma_n2: None }
    }
}

impl StageSection {
    pub fn settings(&self) -> BoSettings {
        let base = BoSettings::for_mode(self.mode, 0);
        BoSettings {
            n1: self.n1.unwrap_or(base.n1),
            n2: self.n2.unwrap_or(base.n2),
            n3: self.n3.unwrap_or(base.n3),
            xi: self.xi.unwrap_or(base.xi),
            sigma_n2: self.sigma_n2.unwrap_or(base.sigma_n2),
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Section {
    /// Defaults to the kind's standard order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<SubStage>>,
    #[serde(default)]
    pub grids: Grids,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub omega: f64,
    pub ramp_power: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            omega: crate::config::space::DEFAULT_OMEGA,
            ramp_power: crate::config::space::DEFAULT_RAMP_POWER,
        }
    }
}

fn default_width() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: ProblemKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_width")]
    pub greedy_width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub objective: ObjectiveSection,
    pub evaluator: EvaluatorSection,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default)]
    pub stage1: StageSection,
    #[serde(default)]
    pub stage2: Stage2Section,
    #[serde(default)]
    pub stage3: StageSection,
    #[serde(default)]
    pub presets: Presets,
    #[serde(default)]
    pub kernel: KernelSection,
}

impl Manifest {
    /// A manifest with every section at its default.
    pub fn new(kind: ProblemKind, evaluator: EvaluatorSection, w_c: Vec<f64>) -> Self {
        Manifest {
            kind,
            seed: 0,
            greedy_width: 1,
            out_dir: None,
            objective: ObjectiveSection { w_c, metric: default_metric(), c0: None },
            evaluator,
            bounds: Bounds::default(),
            stage1: StageSection::default(),
            stage2: Stage2Section::default(),
            stage3: StageSection::default(),
            presets: Presets::default(),
            kernel: KernelSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ManifestError> {
        let manifest: Manifest = toml::from_str(text)?;
        manifest.check()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Read { path: path.to_path_buf(), source })?;
        Manifest::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifests serialize")
    }

    /// Validates everything that does not need the evaluator.
    pub fn check(&self) -> Result<(), ManifestError> {
        let invalid = |m: String| Err(ManifestError::Invalid(m));
        if self.objective.w_c.is_empty() {
            return invalid("objective.w_c is empty".into());
        }
        for &w in &self.objective.w_c {
            ObjectiveSpec::new(w, self.objective.metric, self.objective.c0.unwrap_or(1.0))
                .map_err(|e| ManifestError::Invalid(e.to_string()))?;
        }
        if self.greedy_width == 0 {
            return invalid("greedy_width must be at least 1".into());
        }
        if self.evaluator.epochs == 0 {
            return invalid("evaluator.epochs must be at least 1".into());
        }
        if !(self.evaluator.timeout_sec > 0.0) || !self.evaluator.timeout_sec.is_finite() {
            return invalid("evaluator.timeout_sec must be positive".into());
        }
        self.plan()?;
        Ok(())
    }

    /// The validated stage plan.
    pub fn plan(&self) -> Result<StagePlan, ManifestError> {
        let plan = StagePlan {
            kind: self.kind,
            bounds: self.bounds.clone(),
            stage1: self.stage1.settings(),
            stage2: self.stage2.order.clone().unwrap_or_else(|| SubStage::default_order(self.kind)),
            grids: self.stage2.grids.clone(),
            stage3: self.stage3.settings(),
            presets: self.presets.clone(),
            omega: self.kernel.omega,
            ramp_power: self.kernel.ramp_power,
        };
        plan.check().map_err(|e| ManifestError::Invalid(e.to_string()))?;
        Ok(plan)
    }
}
