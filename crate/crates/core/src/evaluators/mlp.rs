//! Dense ReLU networks trained with Adam on an in-memory [`Dataset`].
//!
//! Softmax cross-entropy loss, inverted dropout on the input and after every
//! hidden layer, decoupled weight decay on weights (not biases), and the
//! 0.2x learning-rate steps at half and three quarters of the epochs.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::datasets::Dataset;
use super::{Capabilities, DatasetDescriptor, Evaluator, EvaluatorContract};
use crate::config::{Arch, Config, MlpArch, TrainingHp};
use crate::objective::EvalResult;

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const EPS: f32 = 1e-8;
const BIAS_INIT: f32 = 0.01;
const DECAY_POINTS: [f64; 2] = [0.5, 0.75];
const DECAY_FACTOR: f64 = 0.2;

/// Learning-rate multiplier for 0-based `epoch` of `epochs`.
pub fn lr_multiplier(epoch: u32, epochs: u32) -> f64 {
    let passed = DECAY_POINTS.iter().filter(|&&p| f64::from(epoch) >= p * f64::from(epochs)).count();
    DECAY_FACTOR.powi(passed as i32)
}

struct Dense {
    w: DMatrix<f32>,
    b: DVector<f32>,
    mw: DMatrix<f32>,
    vw: DMatrix<f32>,
    mb: DVector<f32>,
    vb: DVector<f32>,
}

impl Dense {
    fn new(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let he = Normal::new(0.0f32, (2.0 / fan_in.max(1) as f32).sqrt()).expect("valid normal");
        Dense {
            w: DMatrix::from_fn(fan_out, fan_in, |_, _| he.sample(rng)),
            b: DVector::from_element(fan_out, BIAS_INIT),
            mw: DMatrix::zeros(fan_out, fan_in),
            vw: DMatrix::zeros(fan_out, fan_in),
            mb: DVector::zeros(fan_out),
            vb: DVector::zeros(fan_out),
        }
    }

    fn affine(&self, a: &DMatrix<f32>) -> DMatrix<f32> {
        let mut z = &self.w * a;
        for mut col in z.column_iter_mut() {
            col += &self.b;
        }
        z
    }
}

/// Everything one training run measured.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub best_val_acc: f64,
    pub val_acc: Vec<f64>,
    pub epoch_secs: Vec<f64>,
    pub n_params: u64,
    /// L2 norm of all weight matrices after training.
    pub weight_norm: f64,
    pub diverged: bool,
}

impl TrainReport {
    /// Median training-pass time over up to three epochs after the first.
    pub fn t_tr(&self) -> f64 {
        let warm: Vec<f64> = if self.epoch_secs.len() > 1 {
            self.epoch_secs[1..].iter().take(3).copied().collect()
        } else {
            self.epoch_secs.clone()
        };
        median(warm)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn columns(x: &[f32], d: usize, rows: &[usize]) -> DMatrix<f32> {
    DMatrix::from_fn(d, rows.len(), |r, c| x[rows[c] * d + r])
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> DMatrix<f32> {
    let keep = 1.0 / (1.0 - p as f32);
    DMatrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep })
}

fn forward_eval(layers: &[Dense], x: DMatrix<f32>) -> DMatrix<f32> {
    let mut a = x;
    for (i, layer) in layers.iter().enumerate() {
        a = layer.affine(&a);
        if i + 1 < layers.len() {
            a.apply(|v| *v = v.max(0.0));
        }
    }
    a
}

fn accuracy(layers: &[Dense], x: &[f32], y: &[u32], d: usize) -> f64 {
    let mut correct = 0usize;
    let all: Vec<usize> = (0..y.len()).collect();
    for chunk in all.chunks(512) {
        let logits = forward_eval(layers, columns(x, d, chunk));
        for (j, &row) in chunk.iter().enumerate() {
            let col = logits.column(j);
            let pred = col.iter().enumerate().fold(0, |best, (k, v)| if *v > col[best] { k } else { best });
            if pred as u32 == y[row] {
                correct += 1;
            }
        }
    }
    correct as f64 / y.len().max(1) as f64
}

/// Trains `arch` with `hp` for `epochs` epochs.
pub fn train(arch: &MlpArch, hp: &TrainingHp, data: &Dataset, epochs: u32, seed: u64) -> TrainReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = data.features();
    let mut widths = vec![d];
    widths.extend(arch.hidden.iter().map(|&h| h as usize));
    widths.push(data.classes as usize);
    let mut layers: Vec<Dense> = widths.windows(2).map(|w| Dense::new(w[0], w[1], &mut rng)).collect();
    let n_params = layers.iter().map(|l| (l.w.len() + l.b.len()) as u64).sum();

    let p = arch.drop_prob;
    let batch = (hp.batch_size as usize).max(1);
    let lambda = hp.lambda as f32;
    let mut order: Vec<usize> = (0..data.train_len()).collect();
    let mut step = 0i32;
    let mut report = TrainReport {
        best_val_acc: 0.0,
        val_acc: Vec::new(),
        epoch_secs: Vec::new(),
        n_params,
        weight_norm: 0.0,
        diverged: false,
    };

    'epochs: for epoch in 0..epochs {
        let lr = (hp.eta * lr_multiplier(epoch, epochs)) as f32;
        order.shuffle(&mut rng);
        let started = Instant::now();
        for rows in order.chunks(batch) {
            let n = rows.len();
            let mut a = columns(&data.train_x, d, rows);
            if p > 0.0 {
                a.component_mul_assign(&dropout_mask(d, n, p, &mut rng));
            }
            // acts[i] feeds layer i; gates[i] is the ReLU/dropout multiplier of acts[i + 1].
            let mut acts = vec![a];
            let mut gates = Vec::with_capacity(layers.len());
            for (i, layer) in layers.iter().enumerate() {
                let mut z = layer.affine(&acts[i]);
                if i + 1 < layers.len() {
                    let mut gate = z.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    if p > 0.0 {
                        gate.component_mul_assign(&dropout_mask(z.nrows(), n, p, &mut rng));
                    }
                    z.component_mul_assign(&gate);
                    gates.push(gate);
                }
                acts.push(z);
            }

            let mut delta = acts.pop().expect("output layer");
            let mut loss = 0.0f32;
            for (j, mut col) in delta.column_iter_mut().enumerate() {
                let max = col.max();
                col.apply(|v| *v = (*v - max).exp());
                let sum = col.sum();
                col /= sum;
                let target = data.train_y[rows[j]] as usize;
                loss -= col[target].max(f32::MIN_POSITIVE).ln();
                col[target] -= 1.0;
            }
            if !loss.is_finite() {
                report.diverged = true;
                break 'epochs;
            }
            delta /= n as f32;

            step += 1;
            let c1 = 1.0 - BETA1.powi(step);
            let c2 = 1.0 - BETA2.powi(step);
            for i in (0..layers.len()).rev() {
                let input = &acts[i];
                let gw = &delta * input.transpose();
                let gb = delta.column_sum();
                let next = if i > 0 {
                    let mut da = layers[i].w.tr_mul(&delta);
                    da.component_mul_assign(&gates[i - 1]);
                    Some(da)
                } else {
                    None
                };
                let layer = &mut layers[i];
                layer.mw.zip_apply(&gw, |m, g| *m = BETA1 * *m + (1.0 - BETA1) * g);
                layer.vw.zip_apply(&gw, |v, g| *v = BETA2 * *v + (1.0 - BETA2) * g * g);
                layer.mb.zip_apply(&gb, |m, g| *m = BETA1 * *m + (1.0 - BETA1) * g);
                layer.vb.zip_apply(&gb, |v, g| *v = BETA2 * *v + (1.0 - BETA2) * g * g);
                let Dense { w, b, mw, vw, mb, vb } = layer;
                for ((w, m), v) in w.iter_mut().zip(mw.iter()).zip(vw.iter()) {
                    *w -= lr * ((m / c1) / ((v / c2).sqrt() + EPS) + lambda * *w);
                }
                for ((b, m), v) in b.iter_mut().zip(mb.iter()).zip(vb.iter()) {
                    *b -= lr * (m / c1) / ((v / c2).sqrt() + EPS);
                }
                if let Some(da) = next {
                    delta = da;
                }
            }
        }
        report.epoch_secs.push(started.elapsed().as_secs_f64());
        if layers.iter().any(|l| l.w.iter().any(|v| !v.is_finite())) {
            report.diverged = true;
            break;
        }
        let acc = accuracy(&layers, &data.val_x, &data.val_y, d);
        report.val_acc.push(acc);
        report.best_val_acc = report.best_val_acc.max(acc);
    }
    report.weight_norm =
        layers.iter().flat_map(|l| l.w.iter()).map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
    report
}

/// [`Evaluator`] around [`train`].
pub struct BuiltinMlpEvaluator {
    contract: EvaluatorContract,
    data: Arc<Dataset>,
}

impl BuiltinMlpEvaluator {
    pub fn new(data: Arc<Dataset>, epochs: u32) -> Self {
        let contract = EvaluatorContract {
            id: format!("builtin-mlp:{}", data.name),
            capabilities: Capabilities { cnn: false, mlp: true, vote: false, deterministic: false },
            dataset: DatasetDescriptor { name: data.name.clone(), shape: data.shape() },
            epochs,
            timeout: Duration::from_secs(3600),
        };
        BuiltinMlpEvaluator { contract, data }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }
}

impl Evaluator for BuiltinMlpEvaluator {
    fn contract(&self) -> &EvaluatorContract {
        &self.contract
    }

    fn evaluate(&mut self, config: &Config, seed: u64) -> EvalResult {
        if let Err(e) = self.preflight(config) {
            return EvalResult::failure(e.to_string());
        }
        let Arch::Mlp(arch) = &config.arch else {
            return EvalResult::failure("the builtin trainer only runs MLP configs");
        };
        let report = train(arch, &config.training, &self.data, self.contract.epochs, seed);
        if report.diverged {
            return EvalResult::failure("training loss became non-finite");
        }
        EvalResult::ok(report.best_val_acc, report.t_tr(), report.n_params, report.val_acc.len() as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluators::datasets::blobs;

    fn hp(eta: f64, lambda: f64, batch: u32) -> TrainingHp {
        TrainingHp { eta, lambda, batch_size: batch }
    }

    #[test]
    fn decay_schedule() {
        let m: Vec<f64> = (0..8).map(|e| lr_multiplier(e, 8)).collect();
        assert_eq!(m[3], 1.0);
        assert!((m[4] - 0.2).abs() < 1e-12);
        assert!((m[6] - 0.04).abs() < 1e-12);
    }

    #[test]
    fn median_of_warm_epochs() {
        let r = TrainReport {
            best_val_acc: 0.0,
            val_acc: vec![],
            epoch_secs: vec![9.0, 3.0, 1.0, 2.0, 7.0],
            n_params: 0,
            weight_norm: 0.0,
            diverged: false,
        };
        assert_eq!(r.t_tr(), 2.0);
    }

    #[test]
    fn linear_model_parameter_count() {
        let data = blobs(3, 8, 30, 30, 1);
        let r = train(&MlpArch { hidden: vec![], drop_prob: 0.0 }, &hp(1e-2, 0.0, 32), &data, 1, 0);
        assert_eq!(r.n_params, 8 * 3 + 3);
    }

    #[test]
    fn separable_blobs() {
        let data = blobs(3, 8, 600, 300, 4);
        let r = train(&MlpArch { hidden: vec![50], drop_prob: 0.0 }, &hp(1e-2, 0.0, 32), &data, 10, 1);
        assert!(r.best_val_acc >= 0.95, "{}", r.best_val_acc);
    }

    #[test]
    fn divergence_is_reported() {
        let data = blobs(3, 8, 300, 30, 4);
        let r = train(&MlpArch { hidden: vec![50, 50], drop_prob: 0.0 }, &hp(1e12, 0.0, 32), &data, 3, 1);
        assert!(r.diverged || r.best_val_acc < 0.5);
    }
}
