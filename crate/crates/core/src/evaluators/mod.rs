//! Backends that turn a config into an [`EvalResult`].
//!
//! * [`synthetic`]: closed-form accuracy surfaces with a declared cost model.
//! * [`mlp`]: a small dense-network trainer on in-memory data.
//! * [`external`]: a child process speaking the line-delimited JSON protocol
//!   in [`protocol`].

pub mod datasets;
pub mod external;
pub mod mlp;
pub mod protocol;
pub mod synthetic;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{expand_downsampling, Arch, Config, InputShape, NetworkPlan, ProblemKind, ProblemShape};
use crate::objective::EvalResult;

pub use external::ExternalEvaluator;
pub use mlp::BuiltinMlpEvaluator;
pub use synthetic::SyntheticEvaluator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub cnn: bool,
    pub mlp: bool,
    /// Can run majority-vote inference over an ensemble.
    pub vote: bool,
    /// Same config and seed always give the same result.
    pub deterministic: bool,
}

impl Capabilities {
    pub fn supports(&self, kind: ProblemKind) -> bool {
        match kind {
            ProblemKind::Cnn => self.cnn,
            ProblemKind::Mlp => self.mlp,
        }
    }

    /// Protocol names of the set flags.
    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (set, name) in [(self.mlp, "mlp"), (self.cnn, "cnn"), (self.vote, "vote"), (self.deterministic, "deterministic")] {
            if set {
                out.push(name);
            }
        }
        out
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Self {
        let has = |n: &str| names.iter().any(|s| s.as_ref() == n);
        Capabilities { cnn: has("cnn"), mlp: has("mlp"), vote: has("vote"), deterministic: has("deterministic") }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub shape: ProblemShape,
}

/// What an evaluator promises: identity, capabilities, data and budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorContract {
    pub id: String,
    pub capabilities: Capabilities,
    pub dataset: DatasetDescriptor,
    pub epochs: u32,
    pub timeout: Duration,
}

#[derive(Debug, Error, PartialEq)]
pub enum Incompatible {
    #[error("evaluator `{id}` does not support {kind} configs")]
    Kind { id: String, kind: ProblemKind },
    #[error("{downsamples} downsampling points need images of at least {need}x{need}, dataset `{dataset}` has {height}x{width}")]
    TooSmall { dataset: String, downsamples: usize, need: u32, height: u32, width: u32 },
    #[error("dataset `{0}` has flat inputs, a CNN needs images")]
    FlatInput(String),
}

/// Checks a config against an evaluator before any training happens.
pub fn preflight(config: &Config, contract: &EvaluatorContract) -> Result<(), Incompatible> {
    if !contract.capabilities.supports(config.kind()) {
        return Err(Incompatible::Kind { id: contract.id.clone(), kind: config.kind() });
    }
    if let Arch::Cnn(a) = &config.arch {
        let name = &contract.dataset.name;
        let InputShape::Image { height, width, .. } = contract.dataset.shape.input else {
            return Err(Incompatible::FlatInput(name.clone()));
        };
        let downsamples = expand_downsampling(&a.channels).len();
        let need = 1u32 << downsamples;
        if height < need || width < need {
            return Err(Incompatible::TooSmall { dataset: name.clone(), downsamples, need, height, width });
        }
    }
    Ok(())
}

/// A single-request-at-a-time evaluation backend.
pub trait Evaluator: Send {
    fn contract(&self) -> &EvaluatorContract;

    /// Trains (or simulates) `config`. Failures come back as failed results.
    fn evaluate(&mut self, config: &Config, seed: u64) -> EvalResult;

    fn preflight(&self, config: &Config) -> Result<(), Incompatible> {
        preflight(config, self.contract())
    }

    /// Set once the backend can no longer evaluate anything.
    fn fatal(&self) -> Option<String> {
        None
    }
}

/// Exact trainable-parameter count of `arch` on data of `shape`.
pub fn count_params(arch: &Arch, shape: &ProblemShape) -> u64 {
    NetworkPlan::build(arch, shape).param_count()
}
