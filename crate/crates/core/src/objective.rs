//! The scalar search objective `f = (1 − best_val_acc) + w_c · c / c0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::Scored;
use crate::config::Config;
use crate::evaluators::Evaluator;

/// Which complexity measure enters the penalty term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComplexityMetric {
    /// Training seconds per epoch.
    #[serde(rename = "t_tr")]
    TrainTime,
    /// Trainable parameter count.
    #[serde(rename = "n_params")]
    Params,
}

impl ComplexityMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            ComplexityMetric::TrainTime => "t_tr",
            ComplexityMetric::Params => "n_params",
        }
    }

    pub fn of(self, result: &EvalResult) -> f64 {
        match self {
            ComplexityMetric::TrainTime => result.t_tr_sec,
            ComplexityMetric::Params => result.n_params as f64,
        }
    }
}

impl fmt::Display for ComplexityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ComplexityMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "t_tr" => Ok(ComplexityMetric::TrainTime),
            "n_params" => Ok(ComplexityMetric::Params),
            other => Err(format!("unknown complexity metric `{other}` (expected t_tr or n_params)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("w_c must be finite and non-negative, got {0}")]
    BadWeight(f64),
    #[error("c0 must be finite and positive, got {0}")]
    BadReference(f64),
    #[error("calibration run failed: {0}")]
    CalibrationFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub w_c: f64,
    pub metric: ComplexityMetric,
    pub c0: f64,
}

impl ObjectiveSpec {
    pub fn new(w_c: f64, metric: ComplexityMetric, c0: f64) -> Result<Self, ObjectiveError> {
        if !(w_c >= 0.0) || !w_c.is_finite() {
            return Err(ObjectiveError::BadWeight(w_c));
        }
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(ObjectiveError::BadReference(c0));
        }
        Ok(ObjectiveSpec { w_c, metric, c0 })
    }
}

/// What one evaluation of a config measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub best_val_acc: f64,
    pub t_tr_sec: f64,
    pub n_params: u64,
    pub epochs_run: u32,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl EvalResult {
    pub fn ok(best_val_acc: f64, t_tr_sec: f64, n_params: u64, epochs_run: u32) -> Self {
        EvalResult { best_val_acc, t_tr_sec, n_params, epochs_run, failed: false, reason: None }
    }

    pub fn failure(reason: impl Into<String>) -> Self {
        EvalResult { best_val_acc: 0.0, t_tr_sec: 0.0, n_params: 0, epochs_run: 0, failed: true, reason: Some(reason.into()) }
    }
}

/// `f` split into its terms. All fields are `+∞` for failed results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub f: f64,
    pub f_p: f64,
    pub f_c: f64,
    pub metric_value: f64,
}

pub fn breakdown(result: &EvalResult, spec: &ObjectiveSpec) -> ScoreBreakdown {
    if result.failed {
        return ScoreBreakdown { f: f64::INFINITY, f_p: f64::INFINITY, f_c: f64::INFINITY, metric_value: f64::INFINITY };
    }
    let metric_value = spec.metric.of(result);
    let f_p = 1.0 - result.best_val_acc;
    let f_c = metric_value / spec.c0;
    ScoreBreakdown { f: f_p + spec.w_c * f_c, f_p, f_c, metric_value }
}

pub fn score(result: &EvalResult, spec: &ObjectiveSpec) -> f64 {
    breakdown(result, spec).f
}

/// An evaluated config: raw result plus its objective terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub seq: usize,
    pub result: EvalResult,
    pub score: ScoreBreakdown,
}

impl Scored for Evaluation {
    fn f(&self) -> f64 {
        self.score.f
    }
}

/// Weight-decay preset family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaProfile {
    Cnn,
    MlpSmall,
    MlpLarge,
}

impl LambdaProfile {
    /// `(threshold, divisor)`.
    pub fn coefficients(self) -> (u64, f64) {
        match self {
            LambdaProfile::Cnn => (1_000_000, 1e11),
            LambdaProfile::MlpSmall => (10_000, 1e9),
            LambdaProfile::MlpLarge => (100_000, 1e10),
        }
    }
}

/// `N_p / divisor` at or above the profile's threshold, zero below.
pub fn preset_lambda(n_params: u64, profile: LambdaProfile) -> f64 {
    let (threshold, divisor) = profile.coefficients();
    if n_params >= threshold {
        n_params as f64 / divisor
    } else {
        0.0
    }
}

/// A measured reference complexity and the evaluation it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub c0: f64,
    pub result: EvalResult,
}

/// Measures the metric once on `reference`, the most complex config of the
/// space at Stage-1 presets.
pub fn calibrate_c0(
    reference: &Config,
    evaluator: &mut dyn Evaluator,
    metric: ComplexityMetric,
    seed: u64,
) -> Result<Calibration, ObjectiveError> {
    let result = evaluator.evaluate(reference, seed);
    if result.failed {
        return Err(ObjectiveError::CalibrationFailed(result.reason.unwrap_or_else(|| "unknown".into())));
    }
    let c0 = metric.of(&result);
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(ObjectiveError::BadReference(c0));
    }
    Ok(Calibration { c0, result })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn score_arithmetic() {
        let spec = ObjectiveSpec::new(0.0, ComplexityMetric::TrainTime, 1.0).unwrap();
        assert_abs_diff_eq!(score(&EvalResult::ok(0.9374, 3.0, 10, 1), &spec), 0.0626, epsilon = 1e-12);
        let spec = ObjectiveSpec::new(0.1, ComplexityMetric::TrainTime, 100.0).unwrap();
        assert_abs_diff_eq!(score(&EvalResult::ok(0.9, 10.0, 10, 1), &spec), 0.11, epsilon = 1e-12);
        assert_eq!(score(&EvalResult::failure("x"), &spec), f64::INFINITY);
    }

    #[test]
    fn params_metric() {
        let spec = ObjectiveSpec::new(1.0, ComplexityMetric::Params, 1000.0).unwrap();
        let b = breakdown(&EvalResult::ok(0.5, 1.0, 250, 1), &spec);
        assert_eq!(b.f_c, 0.25);
        assert_eq!(b.f, 0.75);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ObjectiveSpec::new(-1.0, ComplexityMetric::Params, 1.0).is_err());
        assert!(ObjectiveSpec::new(1.0, ComplexityMetric::Params, 0.0).is_err());
        assert!(ObjectiveSpec::new(f64::NAN, ComplexityMetric::Params, 1.0).is_err());
    }

    #[test]
    fn lambda_presets() {
        assert_eq!(preset_lambda(500_000, LambdaProfile::Cnn), 0.0);
        assert_eq!(preset_lambda(2_000_000, LambdaProfile::Cnn), 2e-5);
        assert_eq!(preset_lambda(10_000, LambdaProfile::MlpSmall), 1e-5);
        assert_eq!(preset_lambda(9_999, LambdaProfile::MlpSmall), 0.0);
        assert_eq!(preset_lambda(99_999, LambdaProfile::MlpLarge), 0.0);
        assert_eq!(preset_lambda(100_000, LambdaProfile::MlpLarge), 1e-5);
    }

    #[test]
    fn metric_names() {
        assert_eq!("t_tr".parse::<ComplexityMetric>().unwrap(), ComplexityMetric::TrainTime);
        assert_eq!(serde_json::to_string(&ComplexityMetric::Params).unwrap(), "\"n_params\"");
    }
}
