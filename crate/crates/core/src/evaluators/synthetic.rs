//! Closed-form stand-ins for network training.
//!
//! Accuracy is a smooth function of config features: capacity (log
//! parameter count), regularization choices, and a training term in which
//! the preferred learning rate scales with the batch size. The training
//! time per epoch comes from a FLOP count plus a fixed per-step overhead, so
//! larger batches and smaller networks are cheaper.

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{count_params, Capabilities, DatasetDescriptor, Evaluator, EvaluatorContract};
use crate::config::{Arch, CnnArch, Config, InputShape, MlpArch, NetworkPlan, ProblemKind, ProblemShape, ShortcutPolicy};
use crate::objective::EvalResult;

/// Per-epoch cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub train_samples: u64,
    /// Seconds per training FLOP (forward plus backward).
    pub sec_per_flop: f64,
    /// Fixed seconds per optimizer step.
    pub step_overhead_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObjective {
    pub name: String,
    pub kind: ProblemKind,
    pub shape: ProblemShape,
    /// Standard deviation of the accuracy noise. Zero is fully noiseless.
    pub noise: f64,
    /// How strongly the preferred log learning rate follows log batch size.
    pub interaction: f64,
    /// Offset of the preferred log learning rate.
    pub eta_shift: f64,
    pub cost: CostModel,
}

fn mnist_like() -> ProblemShape {
    ProblemShape { input: InputShape::Flat { features: 784 }, classes: 10 }
}

fn cifar_like() -> ProblemShape {
    ProblemShape { input: InputShape::Image { height: 32, width: 32, channels: 3 }, classes: 10 }
}

impl SyntheticObjective {
    pub fn mlp_smooth() -> Self {
        SyntheticObjective {
            name: "mlp-smooth".into(),
            kind: ProblemKind::Mlp,
            shape: mnist_like(),
            noise: 0.0,
            interaction: 0.0,
            eta_shift: 0.0,
            cost: CostModel { train_samples: 50_000, sec_per_flop: 2e-10, step_overhead_sec: 2e-3 },
        }
    }

    pub fn mlp_interacting() -> Self {
        SyntheticObjective { name: "mlp-interacting".into(), noise: 0.002, interaction: 1.0, ..Self::mlp_smooth() }
    }

    pub fn cnn_smooth() -> Self {
        SyntheticObjective {
            name: "cnn-smooth".into(),
            kind: ProblemKind::Cnn,
            shape: cifar_like(),
            noise: 0.0,
            interaction: 0.5,
            eta_shift: 0.0,
            cost: CostModel { train_samples: 40_000, sec_per_flop: 5e-13, step_overhead_sec: 5e-3 },
        }
    }

    /// Same surface as [`Self::cnn_smooth`] with a shifted training optimum
    /// and noise, standing in for a second dataset.
    pub fn cnn_shifted() -> Self {
        SyntheticObjective { name: "cnn-shifted".into(), noise: 0.003, eta_shift: 0.7, ..Self::cnn_smooth() }
    }

    /// Tiny 4x4 images; CNNs with three downsampling points do not fit.
    pub fn cnn_tiny() -> Self {
        SyntheticObjective {
            name: "cnn-tiny".into(),
            shape: ProblemShape { input: InputShape::Image { height: 4, width: 4, channels: 1 }, classes: 10 },
            ..Self::cnn_smooth()
        }
    }

    /// The problems the trend checks run over.
    pub fn suite() -> Vec<SyntheticObjective> {
        vec![Self::mlp_smooth(), Self::mlp_interacting(), Self::cnn_smooth()]
    }

    pub fn by_name(name: &str) -> Option<SyntheticObjective> {
        [Self::mlp_smooth(), Self::mlp_interacting(), Self::cnn_smooth(), Self::cnn_shifted(), Self::cnn_tiny()]
            .into_iter()
            .find(|o| o.name == name)
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    /// Noiseless accuracy in `[0, 1]`.
    pub fn clean_accuracy(&self, config: &Config) -> f64 {
        let n_params = count_params(&config.arch, &self.shape) as f64;
        let arch = match &config.arch {
            Arch::Mlp(a) => self.mlp_accuracy(a, n_params),
            Arch::Cnn(a) => self.cnn_accuracy(a, n_params),
        };
        (arch + self.training_term(config)).clamp(0.0, 1.0)
    }

    fn mlp_accuracy(&self, a: &MlpArch, n_params: f64) -> f64 {
        let base = {
            let linear = (self.shape.input.flat_len() + 1) * u64::from(self.shape.classes);
            (linear as f64).log10()
        };
        let cap = n_params.log10() - base;
        let depth_bonus = if a.hidden.is_empty() { -0.02 } else { 0.005 * a.hidden.len() as f64 };
        let over = (cap - 1.8).max(0.0);
        0.985 - 0.07 * (-1.6 * cap).exp() + depth_bonus - 0.01 * over * over - 0.08 * (a.drop_prob - 0.2).powi(2)
    }

    fn cnn_accuracy(&self, a: &CnnArch, n_params: f64) -> f64 {
        let cap = n_params.log10() - 3.8;
        let depth = a.channels.len() as f64;
        let skip_density = match a.shortcut {
            ShortcutPolicy::None => 0.0,
            ShortcutPolicy::Every4th => 0.5,
            ShortcutPolicy::EveryOther => 1.0,
        };
        let over = (cap - 2.8).max(0.0);
        let pools = a.downsample.iter().filter(|s| matches!(s, crate::config::DownsampleStyle::MaxPool)).count();
        let hidden = (a.hidden_drop_prob - 0.3) / 0.3;
        0.935 - 0.45 * (-1.1 * cap).exp() - 0.01 * over * over + 0.004 * (depth - 4.0)
            - 0.004 * (depth - 8.0).max(0.0) * (1.0 - skip_density)
            + 0.02 * a.bn_fraction.as_f64()
            + 0.015 * a.dropout_fraction.as_f64() * (1.0 - hidden * hidden)
            - 0.5 * (a.input_drop_prob - 0.1).powi(2)
            + 0.003 * pools as f64
            - 0.06
    }

    fn training_term(&self, config: &Config) -> f64 {
        let hp = &config.training;
        let batch = f64::from(hp.batch_size);
        let preferred = -3.0 + self.eta_shift + self.interaction * (batch / 256.0).log10();
        let eta_gap = hp.eta.log10() - preferred;
        let log_lambda = if hp.lambda > 0.0 { hp.lambda.log10() } else { -6.5 };
        let batch_gap = (batch / 128.0).log2();
        -0.04 * eta_gap * eta_gap - 0.004 * batch_gap * batch_gap - 0.004 * (log_lambda + 4.5).powi(2)
    }

    /// Training FLOPs per sample (forward and backward).
    pub fn flops_per_sample(&self, arch: &Arch) -> f64 {
        match NetworkPlan::build(arch, &self.shape) {
            NetworkPlan::Mlp(p) => 6.0 * p.widths.windows(2).map(|w| (w[0] * w[1]) as f64).sum::<f64>(),
            NetworkPlan::Cnn(p) => {
                let (mut h, mut w) = match self.shape.input {
                    InputShape::Image { height, width, .. } => (f64::from(height), f64::from(width)),
                    InputShape::Flat { features } => (f64::from(features), 1.0),
                };
                let mut macs = 0.0;
                for l in &p.layers {
                    h = (h / f64::from(l.stride)).ceil();
                    w = (w / f64::from(l.stride)).ceil();
                    macs += 9.0 * f64::from(l.in_channels) * f64::from(l.out_channels) * h * w;
                    if l.max_pool_after {
                        h = (h / 2.0).floor().max(1.0);
                        w = (w / 2.0).floor().max(1.0);
                    }
                }
                6.0 * macs
            }
        }
    }

    /// Declared seconds per training epoch.
    pub fn train_time(&self, config: &Config) -> f64 {
        let c = &self.cost;
        let steps = c.train_samples.div_ceil(u64::from(config.training.batch_size.max(1))) as f64;
        c.train_samples as f64 * self.flops_per_sample(&config.arch) * c.sec_per_flop + steps * c.step_overhead_sec
    }

    /// Accuracy with seeded noise; a pure function of `(config, seed)`.
    pub fn accuracy(&self, config: &Config, seed: u64) -> f64 {
        let clean = self.clean_accuracy(config);
        if self.noise == 0.0 {
            return clean;
        }
        let mut hasher = Sha256::new();
        hasher.update(self.name.as_bytes());
        hasher.update(config.encode().as_bytes());
        hasher.update(seed.to_le_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let z: f64 = StandardNormal.sample(&mut ChaCha8Rng::from_seed(key));
        (clean + self.noise * z).clamp(0.0, 1.0)
    }

    pub fn result(&self, config: &Config, seed: u64, epochs: u32) -> EvalResult {
        EvalResult::ok(self.accuracy(config, seed), self.train_time(config), count_params(&config.arch, &self.shape), epochs)
    }
}

/// Evaluator wrapper around a [`SyntheticObjective`].
pub struct SyntheticEvaluator {
    objective: SyntheticObjective,
    contract: EvaluatorContract,
}

impl SyntheticEvaluator {
    pub fn new(objective: SyntheticObjective, epochs: u32) -> Self {
        let kind = objective.kind();
        let contract = EvaluatorContract {
            id: format!("synthetic:{}", objective.name),
            capabilities: Capabilities {
                cnn: kind == ProblemKind::Cnn,
                mlp: kind == ProblemKind::Mlp,
                vote: false,
                deterministic: true,
            },
            dataset: DatasetDescriptor { name: objective.name.clone(), shape: objective.shape },
            epochs,
            timeout: Duration::from_secs(1),
        };
        SyntheticEvaluator { objective, contract }
    }

    pub fn objective(&self) -> &SyntheticObjective {
        &self.objective
    }
}

impl Evaluator for SyntheticEvaluator {
    fn contract(&self) -> &EvaluatorContract {
        &self.contract
    }

    fn evaluate(&mut self, config: &Config, seed: u64) -> EvalResult {
        if let Err(e) = self.preflight(config) {
            return EvalResult::failure(e.to_string());
        }
        self.objective.result(config, seed, self.contract.epochs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::*;

    fn mlp(hidden: Vec<u32>, batch: u32) -> Config {
        Config {
            arch: Arch::Mlp(MlpArch { hidden, drop_prob: 0.2 }),
            training: TrainingHp { eta: 1e-3, lambda: 1e-5, batch_size: batch },
        }
    }

    #[test]
    fn deterministic_at_zero_noise() {
        let mut e = SyntheticEvaluator::new(SyntheticObjective::mlp_smooth(), 5);
        let a = e.evaluate(&mlp(vec![100], 128), 1);
        let b = e.evaluate(&mlp(vec![100], 128), 2);
        assert_eq!(a, b);
        assert!(a.best_val_acc > 0.9 && a.best_val_acc <= 1.0);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let mut e = SyntheticEvaluator::new(SyntheticObjective::mlp_interacting(), 5);
        let a = e.evaluate(&mlp(vec![100], 128), 1);
        assert_eq!(a, e.evaluate(&mlp(vec![100], 128), 1));
        assert_ne!(a.best_val_acc, e.evaluate(&mlp(vec![100], 128), 2).best_val_acc);
    }

    #[test]
    fn cost_falls_with_batch_and_size() {
        let o = SyntheticObjective::mlp_smooth();
        assert!(o.train_time(&mlp(vec![100], 512)) < o.train_time(&mlp(vec![100], 32)));
        assert!(o.train_time(&mlp(vec![20], 256)) < o.train_time(&mlp(vec![400, 400], 256)));
        assert!(o.clean_accuracy(&mlp(vec![20], 128)) < o.clean_accuracy(&mlp(vec![400], 128)));
    }

    #[test]
    fn interaction_moves_the_learning_rate_optimum() {
        let o = SyntheticObjective::mlp_interacting();
        let at = |eta: f64, batch: u32| {
            let mut c = mlp(vec![100], batch);
            c.training.eta = eta;
            o.clean_accuracy(&c)
        };
        assert!(at(1e-3, 256) > at(1e-4, 256));
        assert!(at(1.25e-4, 32) > at(1e-3, 32));
    }

    #[test]
    fn suite_lookup() {
        for o in SyntheticObjective::suite() {
            assert_eq!(SyntheticObjective::by_name(&o.name).unwrap(), o);
        }
        assert_eq!(SyntheticObjective::cnn_smooth().kind(), ProblemKind::Cnn);
        assert!(SyntheticObjective::by_name("nope").is_none());
    }
}
