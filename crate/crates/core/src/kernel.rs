//! Ramp distances, squared-exponential kernel values and the convex
//! combination that defines config similarity.
//!
//! For hyperparameter `k` with bounds `[l, u]`, scale `ω` and power `r`:
//!
//! ```text
//! d(a, b)  = ω · (|a − b| / (u − l))^r
//! σ(a, b)  = exp(−d² / 2)
//! σ(x, y)  = Σ_k s_k · σ(x_k, y_k)
//! ```
//!
//! Each per-hyperparameter Gram matrix is PSD (the ramp with `r = 1` is a
//! scaled Euclidean distance), and so is any convex combination of them;
//! [`covariance_matrix`] still checks this at runtime.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::config::{Arch, Config, Extractor, Field, ProblemKind, SearchSpace, Stage};

/// Tolerance on the smallest eigenvalue of a noise-free covariance matrix.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("invalid ramp parameters: {0}")]
    BadRamp(String),
    #[error("kernel weights must be non-negative and sum to 1 (sum {0})")]
    NotConvex(f64),
    #[error("a {config} config cannot be compared under a {stage:?} kernel for {spec} problems")]
    StageMismatch { config: ProblemKind, spec: ProblemKind, stage: Stage },
    #[error("covariance matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("covariance needs at least one config")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampParams {
    pub upper: f64,
    pub lower: f64,
    pub omega: f64,
    pub ramp_power: f64,
}

impl RampParams {
    pub fn new(lower: f64, upper: f64, omega: f64, ramp_power: f64) -> Result<Self, KernelError> {
        if !(upper > lower) {
            return Err(KernelError::BadRamp(format!("upper {upper} must exceed lower {lower}")));
        }
        if !(omega > 0.0) {
            return Err(KernelError::BadRamp(format!("omega {omega} must be positive")));
        }
        if !(ramp_power > 0.0 && ramp_power <= 1.0) {
            return Err(KernelError::BadRamp(format!("ramp power {ramp_power} must be in (0, 1]")));
        }
        Ok(RampParams { upper, lower, omega, ramp_power })
    }

    fn clamp(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            tracing::warn!(value = x, lower = self.lower, upper = self.upper, "clamping value into kernel bounds");
        }
        x.clamp(self.lower, self.upper)
    }
}

/// Ramp distance between two values of one hyperparameter. Values outside
/// the bounds are clamped first.
pub fn ramp_distance(a: f64, b: f64, p: &RampParams) -> f64 {
    let (a, b) = (p.clamp(a), p.clamp(b));
    if a == b {
        return 0.0;
    }
    p.omega * ((a - b).abs() / (p.upper - p.lower)).powf(p.ramp_power)
}

/// Squared-exponential kernel value of a distance.
pub fn kernel_value(d: f64) -> f64 {
    (-0.5 * d * d).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelEntry {
    pub ramp: RampParams,
    pub weight: f64,
    pub extractor: Extractor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub stage: Stage,
    pub kind: ProblemKind,
    pub entries: Vec<KernelEntry>,
}

impl KernelSpec {
    pub fn new(stage: Stage, kind: ProblemKind, entries: Vec<KernelEntry>) -> Result<Self, KernelError> {
        let sum: f64 = entries.iter().map(|e| e.weight).sum();
        if entries.is_empty() || entries.iter().any(|e| e.weight < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(KernelError::NotConvex(sum));
        }
        Ok(KernelSpec { stage, kind, entries })
    }

    pub fn from_space(space: &SearchSpace) -> Result<Self, KernelError> {
        let entries = space
            .params
            .iter()
            .map(|p| {
                Ok(KernelEntry {
                    ramp: RampParams::new(p.lower, p.upper, p.omega, p.ramp_power)?,
                    weight: p.weight,
                    extractor: p.extractor,
                })
            })
            .collect::<Result<Vec<_>, KernelError>>()?;
        KernelSpec::new(space.stage, space.kind, entries)
    }

    fn check_config(&self, c: &Config) -> Result<(), KernelError> {
        if self.stage == Stage::Architecture && c.kind() != self.kind {
            return Err(KernelError::StageMismatch { config: c.kind(), spec: self.kind, stage: self.stage });
        }
        Ok(())
    }
}

enum Value {
    Present(f64),
    Absent,
    Floor,
}

fn extract(c: &Config, ex: Extractor, spec: &KernelSpec) -> Result<Value, KernelError> {
    let mismatch = || KernelError::StageMismatch { config: c.kind(), spec: spec.kind, stage: spec.stage };
    Ok(match ex {
        Extractor::Raw(Field::BatchSize) => Value::Present(f64::from(c.training.batch_size)),
        Extractor::Raw(Field::Eta) => Value::Present(c.training.eta),
        Extractor::Raw(Field::Lambda) => Value::Present(c.training.lambda),
        Extractor::Log10(Field::Eta) => Value::Present(c.training.eta.log10()),
        Extractor::Log10(Field::Lambda) => {
            if c.training.lambda > 0.0 {
                Value::Present(c.training.lambda.log10())
            } else {
                Value::Floor
            }
        }
        Extractor::Log10(Field::BatchSize) => Value::Present(f64::from(c.training.batch_size).log10()),
        Extractor::Raw(Field::HiddenLayers) | Extractor::Log10(Field::HiddenLayers) => match &c.arch {
            Arch::Mlp(a) => Value::Present(a.hidden.len() as f64),
            Arch::Cnn(_) => return Err(mismatch()),
        },
        Extractor::Raw(Field::ConvLayers) | Extractor::Log10(Field::ConvLayers) => match &c.arch {
            Arch::Cnn(a) => Value::Present(a.channels.len() as f64),
            Arch::Mlp(_) => return Err(mismatch()),
        },
        Extractor::SumNodes => match &c.arch {
            Arch::Mlp(a) => Value::Present(a.total_nodes() as f64),
            Arch::Cnn(_) => return Err(mismatch()),
        },
        Extractor::Channel(k) => match &c.arch {
            Arch::Cnn(a) => a.channels.get(k).map_or(Value::Absent, |&ch| Value::Present(f64::from(ch))),
            Arch::Mlp(_) => return Err(mismatch()),
        },
    })
}

/// Distance for one kernel entry. A conv layer present in only one of the
/// configs is maximally distant (ω); absent in both means identical.
fn entry_distance(a: &Config, b: &Config, entry: &KernelEntry, spec: &KernelSpec) -> Result<f64, KernelError> {
    let resolve = |v: Value| match v {
        Value::Present(x) => Some(x),
        Value::Floor => Some(entry.ramp.lower),
        Value::Absent => None,
    };
    let va = resolve(extract(a, entry.extractor, spec)?);
    let vb = resolve(extract(b, entry.extractor, spec)?);
    Ok(match (va, vb) {
        (Some(x), Some(y)) => ramp_distance(x, y, &entry.ramp),
        (None, None) => 0.0,
        _ => entry.ramp.omega,
    })
}

/// Kernel similarity of two configs, in `[0, 1]`.
pub fn config_similarity(a: &Config, b: &Config, spec: &KernelSpec) -> Result<f64, KernelError> {
    spec.check_config(a)?;
    spec.check_config(b)?;
    let mut total = 0.0;
    let mut identical = true;
    for entry in &spec.entries {
        let d = entry_distance(a, b, entry, spec)?;
        identical &= d == 0.0;
        total += entry.weight * kernel_value(d);
    }
    // weights sum to 1 only up to rounding
    if identical {
        return Ok(1.0);
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Noise-free kernel Gram matrix.
pub fn gram_matrix(configs: &[Config], spec: &KernelSpec) -> Result<DMatrix<f64>, KernelError> {
    let n = configs.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = config_similarity(&configs[i], &configs[i], spec)?;
        for j in 0..i {
            let s = config_similarity(&configs[i], &configs[j], spec)?;
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    Ok(m)
}

/// Covariance matrix `Σ_ij = σ(x_i, x_j)` with `sigma_n2` on the diagonal.
/// Fails if the noise-free matrix has an eigenvalue below `-1e-8`, or if the
/// noisy one is not strictly positive definite when `sigma_n2 > 0`.
pub fn covariance_matrix(configs: &[Config], spec: &KernelSpec, sigma_n2: f64) -> Result<DMatrix<f64>, KernelError> {
    if configs.is_empty() {
        return Err(KernelError::Empty);
    }
    let mut m = gram_matrix(configs, spec)?;
    let min_eig = min_eigenvalue(&m);
    if min_eig < -PSD_TOLERANCE || (sigma_n2 > 0.0 && min_eig + sigma_n2 <= 0.0) {
        return Err(KernelError::NotPsd(min_eig));
    }
    for i in 0..configs.len() {
        m[(i, i)] += sigma_n2;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::*;
    use approx::assert_abs_diff_eq;

    fn ramp(l: f64, u: f64) -> RampParams {
        RampParams::new(l, u, 3.0, 1.0).unwrap()
    }

    fn cnn(channels: &[u32]) -> Config {
        Config {
            arch: Arch::Cnn(CnnArch {
                channels: channels.to_vec(),
                downsample: vec![DownsampleStyle::Stride; expand_downsampling(channels).len()],
                bn_fraction: Quarters::ONE,
                dropout_fraction: Quarters::ONE,
                input_drop_prob: 0.0,
                hidden_drop_prob: 0.3,
                shortcut: ShortcutPolicy::None,
            }),
            training: TrainingHp { eta: 1e-3, lambda: 0.0, batch_size: 256 },
        }
    }

    fn mlp(hidden: &[u32]) -> Config {
        Config {
            arch: Arch::Mlp(MlpArch { hidden: hidden.to_vec(), drop_prob: 0.2 }),
            training: TrainingHp { eta: 1e-3, lambda: 0.0, batch_size: 256 },
        }
    }

    #[test]
    fn ramp_examples() {
        assert_abs_diff_eq!(ramp_distance(50.0, 36.0, &ramp(16.0, 64.0)), 0.875, epsilon = 1e-12);
        assert_eq!(ramp_distance(40.0, 40.0, &ramp(16.0, 64.0)), 0.0);
        assert_abs_diff_eq!(ramp_distance(16.0, 64.0, &ramp(16.0, 64.0)), 3.0, epsilon = 1e-12);
        // clamped into range
        assert_abs_diff_eq!(ramp_distance(0.0, 100.0, &ramp(16.0, 64.0)), 3.0, epsilon = 1e-12);
        let half = RampParams::new(0.0, 1.0, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(ramp_distance(0.0, 0.25, &half), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kernel_examples() {
        assert_abs_diff_eq!(kernel_value(0.875), 0.682, epsilon = 5e-4);
        assert_eq!(kernel_value(0.0), 1.0);
        assert_abs_diff_eq!(kernel_value(3.0), (-4.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(kernel_value(3.0), 0.0111, epsilon = 1e-4);
    }

    #[test]
    fn bad_ramp_rejected() {
        assert!(RampParams::new(1.0, 1.0, 3.0, 1.0).is_err());
        assert!(RampParams::new(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(RampParams::new(0.0, 1.0, 3.0, 1.5).is_err());
    }

    #[test]
    fn node_sum_similarity() {
        let mut bounds = Bounds::default();
        bounds.mlp = MlpBounds::large();
        let spec = KernelSpec::from_space(&SearchSpace::architecture(ProblemKind::Mlp, bounds)).unwrap();
        let s = config_similarity(&mlp(&[300, 300, 300]), &mlp(&[1000]), &spec).unwrap();
        // layer count: |3 - 1| over [0, 3]; node sum: |900 - 1000| over [0, 3000]
        let by_hand = 0.5 * (-0.5f64 * 2.0 * 2.0).exp() + 0.5 * (-0.5f64 * 0.1 * 0.1).exp();
        assert_abs_diff_eq!(s, by_hand, epsilon = 1e-12);
        assert_abs_diff_eq!(s, 0.565_18, epsilon = 1e-5);
        let three_small = config_similarity(&mlp(&[300, 300, 300]), &mlp(&[100, 100, 100]), &spec).unwrap();
        let one_big_vs_small = config_similarity(&mlp(&[1000]), &mlp(&[100, 100, 100]), &spec).unwrap();
        assert!(three_small < 1.0 && one_big_vs_small < three_small);
    }

    #[test]
    fn stage_mismatch_is_an_error() {
        let spec = KernelSpec::from_space(&SearchSpace::architecture(ProblemKind::Cnn, Bounds::default())).unwrap();
        assert!(matches!(
            config_similarity(&mlp(&[20]), &cnn(&[16, 16, 16, 16]), &spec),
            Err(KernelError::StageMismatch { .. })
        ));
        let training = KernelSpec::from_space(&SearchSpace::training(ProblemKind::Cnn, Bounds::default())).unwrap();
        assert!(config_similarity(&mlp(&[20]), &cnn(&[16, 16, 16, 16]), &training).is_ok());
    }

    #[test]
    fn zero_lambda_uses_the_floor() {
        let spec = KernelSpec::from_space(&SearchSpace::training(ProblemKind::Mlp, Bounds::default())).unwrap();
        let mut a = mlp(&[]);
        let mut b = mlp(&[]);
        a.training.lambda = 0.0;
        b.training.lambda = 1e-6;
        assert_eq!(config_similarity(&a, &b, &spec).unwrap(), 1.0);
        b.training.lambda = 1e-3;
        let s = config_similarity(&a, &b, &spec).unwrap();
        assert_abs_diff_eq!(s, (2.0 + (-4.5f64).exp()) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn small_covariances() {
        let spec = KernelSpec::from_space(&SearchSpace::architecture(ProblemKind::Cnn, Bounds::default())).unwrap();
        let a = cnn(&[16, 32, 64, 100]);
        let one = covariance_matrix(std::slice::from_ref(&a), &spec, 1e-4).unwrap();
        assert_eq!(one[(0, 0)], 1.0 + 1e-4);
        let two = covariance_matrix(&[a.clone(), a], &spec, 1e-4).unwrap();
        assert_eq!(two, DMatrix::from_row_slice(2, 2, &[1.0 + 1e-4, 1.0, 1.0, 1.0 + 1e-4]));
        assert_eq!(covariance_matrix(&[], &spec, 1e-4), Err(KernelError::Empty));
    }

    #[test]
    fn extra_layer_on_the_longer_config_lowers_similarity() {
        let spec = KernelSpec::from_space(&SearchSpace::architecture(ProblemKind::Cnn, Bounds::default())).unwrap();
        let a = cnn(&[20, 40, 60, 90, 120]);
        let b = cnn(&[30, 50, 60, 100]);
        let base = config_similarity(&a, &b, &spec).unwrap();
        // appending to the longer config
        let longest = cnn(&[20, 40, 60, 90, 120, 200]);
        assert!(config_similarity(&longest, &b, &spec).unwrap() < base);
        // appending to one of two equal-length configs
        let c = cnn(&[30, 50, 60, 100, 150]);
        let before = config_similarity(&a, &c, &spec).unwrap();
        assert!(config_similarity(&longest, &c, &spec).unwrap() < before);
    }
}
