//! Gaussian-process regression over configs.
//!
//! The prior mean is the mean of the observed objective values, the prior
//! covariance is the config kernel (unit variance) and `σ_n²` is added on
//! the diagonal. Solves go through a Cholesky factor; if that fails the
//! diagonal is jittered from 1e-10 up to 1e-6 before giving up.

use thiserror::Error;

use crate::config::Config;
use crate::kernel::{config_similarity, covariance_matrix, KernelError, KernelSpec};

/// Extra diagonal terms tried, in order, when the factorization fails.
pub const JITTER_SCHEDULE: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("covariance matrix could not be factored even with jitter {0:e}")]
    Singular(f64),
    #[error("a GP needs at least one finite observation")]
    NoObservations,
    #[error("{configs} configs but {values} objective values")]
    LengthMismatch { configs: usize, values: usize },
}

/// Lower-triangular Cholesky factor stored row-major.
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub(crate) fn factor(a: &[f64], n: usize) -> Option<Cholesky> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i * n + j];
                for k in 0..j {
                    sum -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    l[i * n + i] = sum.sqrt();
                } else {
                    l[i * n + j] = sum / l[j * n + j];
                }
            }
        }
        Some(Cholesky { n, l })
    }

    /// Solves `L y = b`.
    pub(crate) fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.l[i * n + k] * y[k];
            }
            y[i] = sum / self.l[i * n + i];
        }
        y
    }

    /// Solves `Lᵀ x = y`.
    pub(crate) fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..n {
                sum -= self.l[k * n + i] * x[k];
            }
            x[i] = sum / self.l[i * n + i];
        }
        x
    }
}

/// Observed configs, their objective values and the factored covariance.
#[derive(Debug, Clone)]
pub struct GpState {
    configs: Vec<Config>,
    values: Vec<f64>,
    mean: f64,
    spec: KernelSpec,
    factor: Cholesky,
    /// `K⁻¹ (f − μ)`
    alpha: Vec<f64>,
    jitter: f64,
}

impl GpState {
    /// Conditions the prior on `(configs, values)`. Values must be finite.
    pub fn fit(configs: Vec<Config>, values: Vec<f64>, spec: &KernelSpec, sigma_n2: f64) -> Result<Self, GpError> {
        if configs.len() != values.len() {
            return Err(GpError::LengthMismatch { configs: configs.len(), values: values.len() });
        }
        if configs.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NoObservations);
        }
        let n = configs.len();
        let cov = covariance_matrix(&configs, spec, sigma_n2)?;
        let mean = values.iter().sum::<f64>() / n as f64;

        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                flat[i * n + j] = cov[(i, j)];
            }
        }
        let mut chosen = None;
        for &jitter in &JITTER_SCHEDULE {
            let mut a = flat.clone();
            for i in 0..n {
                a[i * n + i] += jitter;
            }
            if let Some(f) = Cholesky::factor(&a, n) {
                chosen = Some((f, jitter));
                break;
            }
        }
        let (factor, jitter) = chosen.ok_or(GpError::Singular(JITTER_SCHEDULE[JITTER_SCHEDULE.len() - 1]))?;
        if jitter > 0.0 {
            tracing::debug!(jitter, "covariance factored with diagonal jitter");
        }
        let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let alpha = factor.backward(&factor.forward(&centered));
        Ok(GpState { configs, values, mean, spec: spec.clone(), factor, alpha, jitter })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn prior_mean(&self) -> f64 {
        self.mean
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn configs(&self) -> &[Config] {
        &self.configs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Index and value of the smallest observation (earliest on ties).
    pub fn incumbent(&self) -> (usize, f64) {
        let mut best = (0, self.values[0]);
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v < best.1 {
                best = (i, v);
            }
        }
        best
    }

    /// Posterior mean and standard deviation of the latent objective at
    /// `candidate`.
    pub fn posterior(&self, candidate: &Config) -> Result<(f64, f64), GpError> {
        let k_star = self
            .configs
            .iter()
            .map(|c| config_similarity(candidate, c, &self.spec))
            .collect::<Result<Vec<f64>, _>>()?;
        let prior_var = config_similarity(candidate, candidate, &self.spec)?;
        let mu = self.mean + k_star.iter().zip(&self.alpha).map(|(k, a)| k * a).sum::<f64>();
        let v = self.factor.forward(&k_star);
        let var = prior_var - v.iter().map(|x| x * x).sum::<f64>();
        Ok((mu, var.max(0.0).sqrt()))
    }
}

/// Free-function form of [`GpState::posterior`].
pub fn gp_posterior(state: &GpState, candidate: &Config) -> Result<(f64, f64), GpError> {
    state.posterior(candidate)
}
