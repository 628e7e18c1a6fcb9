//! Manifests, traces, run directories and exports.

pub mod manifest;
pub mod run;
pub mod trace;

pub use manifest::{EvaluatorSection, FactoryError, Manifest, ManifestError};
pub use run::{RunError, RunRequest, Summary};
pub use trace::{Recorder, TraceRecord};
