//! Gaussian-process Bayesian optimization over configs.
//!
//! A run evaluates `n1` prior configs (uniform random or Sobol), then for
//! each of `n2` steps draws `n3` fresh uniform candidates, scores them by
//! expected improvement under the GP posterior and evaluates the argmax.
//! Only the `n1 + n2` evaluations call the objective.

pub mod acquisition;
pub mod gp;
pub mod sampler;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::kernel::KernelSpec;
use crate::sobol::SobolError;

pub use acquisition::expected_improvement;
pub use gp::{gp_posterior, GpError, GpState};
pub use sampler::{random_sample, sobol_sample, ArchDecoder, PointDecoder, TrainingDecoder};

pub const DEFAULT_XI: f64 = 1e-4;
pub const DEFAULT_SIGMA_N2: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum BoError {
    #[error(transparent)]
    Sobol(#[from] SobolError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("invalid BO settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// 30 uniform random configs, no optimization steps.
    Random,
    /// 30 Sobol configs, no optimization steps.
    Grid,
    /// 15 Sobol configs, 15 steps of 1000 candidates.
    Balanced,
    /// 1 Sobol config, 29 steps of 1000 candidates.
    Extreme,
}

impl SearchMode {
    pub const ALL: [SearchMode; 4] = [SearchMode::Random, SearchMode::Grid, SearchMode::Balanced, SearchMode::Extreme];

    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::Random => "random",
            SearchMode::Grid => "grid",
            SearchMode::Balanced => "balanced",
            SearchMode::Extreme => "extreme",
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SearchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SearchMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown search mode `{s}` (expected random, grid, balanced or extreme)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoSettings {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_sigma_n2")]
    pub sigma_n2: f64,
    pub mode: SearchMode,
    #[serde(default)]
    pub seed: u64,
}

fn default_xi() -> f64 {
    DEFAULT_XI
}

fn default_sigma_n2() -> f64 {
    DEFAULT_SIGMA_N2
}

impl BoSettings {
    pub fn for_mode(mode: SearchMode, seed: u64) -> Self {
        let (n1, n2, n3) = match mode {
            SearchMode::Random | SearchMode::Grid => (30, 0, 1),
            SearchMode::Balanced => (15, 15, 1000),
            SearchMode::Extreme => (1, 29, 1000),
        };
        BoSettings { n1, n2, n3, xi: DEFAULT_XI, sigma_n2: DEFAULT_SIGMA_N2, mode, seed }
    }

    pub fn budget(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn check(&self) -> Result<(), BoError> {
        if self.n1 == 0 {
            return Err(BoError::Settings("n1 must be at least 1".into()));
        }
        if self.n3 == 0 {
            return Err(BoError::Settings("n3 must be at least 1".into()));
        }
        if !(self.xi >= 0.0) || !(self.sigma_n2 >= 0.0) {
            return Err(BoError::Settings("xi and sigma_n2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Anything carrying an objective value. `+∞` marks a failed evaluation.
pub trait Scored {
    fn f(&self) -> f64;
}

impl Scored for f64 {
    fn f(&self) -> f64 {
        *self
    }
}

/// One objective call. `step` is `None` for prior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated<T> {
    pub index: usize,
    pub step: Option<usize>,
    pub config: Config,
    pub outcome: T,
}

/// One scored candidate. Posterior fields are `None` when no finite
/// observation existed yet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub step: usize,
    pub index: usize,
    pub config: Config,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub ei: f64,
    pub chosen: bool,
}

#[derive(Debug, Clone)]
pub struct BoOutcome<T> {
    pub evaluations: Vec<Evaluated<T>>,
    pub candidates: Vec<CandidateRecord>,
}

impl<T: Scored> BoOutcome<T> {
    /// Evaluation indices ordered by f, earliest first on ties.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.evaluations.len()).collect();
        idx.sort_by(|&a, &b| self.evaluations[a].outcome.f().total_cmp(&self.evaluations[b].outcome.f()).then(a.cmp(&b)));
        idx
    }

    pub fn best(&self) -> &Evaluated<T> {
        &self.evaluations[self.ranked()[0]]
    }

    /// Best f seen after each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.evaluations
            .iter()
            .map(|e| {
                best = best.min(e.outcome.f());
                best
            })
            .collect()
    }
}

/// Runs the optimization. Calls `objective` exactly `n1 + n2` times.
pub fn bo_minimize<D, T, F>(
    decoder: &D,
    spec: &KernelSpec,
    settings: &BoSettings,
    mut objective: F,
) -> Result<BoOutcome<T>, BoError>
where
    D: PointDecoder + ?Sized,
    F: FnMut(&Config) -> T,
    T: Scored,
{
    settings.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let prior = match settings.mode {
        SearchMode::Random => random_sample(decoder, settings.n1, &mut rng),
        _ => sobol_sample(decoder, settings.n1, Some(&mut rng))?,
    };

    let mut evaluations = Vec::with_capacity(settings.budget());
    for config in prior {
        let outcome = objective(&config);
        evaluations.push(Evaluated { index: evaluations.len(), step: None, config, outcome });
    }

    let mut candidates = Vec::new();
    for step in 0..settings.n2 {
        let pool = random_sample(decoder, settings.n3, &mut rng);
        let (observed, values): (Vec<Config>, Vec<f64>) = evaluations
            .iter()
            .filter(|e| e.outcome.f().is_finite())
            .map(|e| (e.config.clone(), e.outcome.f()))
            .unzip();

        let scores: Vec<(Option<f64>, Option<f64>, f64)> = if observed.is_empty() {
            vec![(None, None, 0.0); pool.len()]
        } else {
            let gp = GpState::fit(observed, values, spec, settings.sigma_n2)?;
            let f_star = gp.incumbent().1;
            pool.par_iter()
                .map(|c| {
                    let (mu, sigma) = gp.posterior(c)?;
                    Ok((Some(mu), Some(sigma), expected_improvement(mu, sigma, f_star, settings.xi)))
                })
                .collect::<Result<Vec<_>, GpError>>()?
        };

        let mut chosen = 0;
        for (i, s) in scores.iter().enumerate() {
            if s.2 > scores[chosen].2 {
                chosen = i;
            }
        }
        tracing::debug!(step, ei = scores[chosen].2, "acquisition argmax");
        let config = pool[chosen].clone();
        for (index, (c, (mu, sigma, ei))) in pool.into_iter().zip(scores).enumerate() {
            candidates.push(CandidateRecord { step, index, config: c, mu, sigma, ei, chosen: index == chosen });
        }
        let outcome = objective(&config);
        evaluations.push(Evaluated { index: evaluations.len(), step: Some(step), config, outcome });
    }

    Ok(BoOutcome { evaluations, candidates })
}
