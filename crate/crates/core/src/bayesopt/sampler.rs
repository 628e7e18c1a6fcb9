//! Maps points of the unit cube onto legal configs.
//!
//! Variable-length architectures spend the first coordinate on depth and
//! one coordinate per layer on its width, so every decoded config satisfies
//! the space's bounds by construction.

use rand::Rng;

use crate::config::{Arch, Bounds, Config, ProblemKind, TrainingBounds, TrainingHp};
use crate::sobol::{Sobol, SobolError};

/// Turns a unit-cube point into a config.
pub trait PointDecoder: Sync {
    fn dims(&self) -> usize;
    fn decode(&self, unit: &[f64]) -> Config;
}

/// Maps `u ∈ [0, 1)` onto the integers `lo..=hi` in equal-width cells.
pub fn unit_to_int(u: f64, lo: u32, hi: u32) -> u32 {
    debug_assert!(lo <= hi);
    let span = u64::from(hi - lo) + 1;
    let cell = (u.clamp(0.0, 1.0) * span as f64).floor() as u64;
    lo + cell.min(span - 1) as u32
}

/// Maps `u ∈ [0, 1)` linearly onto `[lo, hi]`.
pub fn unit_to_range(u: f64, lo: f64, hi: f64) -> f64 {
    lo + u.clamp(0.0, 1.0) * (hi - lo)
}

/// Depth and widths of the core architecture. The remaining fields come
/// from `complete`, which receives the sampled width list.
pub struct ArchDecoder<F> {
    kind: ProblemKind,
    bounds: Bounds,
    complete: F,
}

impl<F: Fn(Vec<u32>) -> Config + Sync> ArchDecoder<F> {
    pub fn new(kind: ProblemKind, bounds: Bounds, complete: F) -> Self {
        ArchDecoder { kind, bounds, complete }
    }

    pub fn widths(&self, unit: &[f64]) -> Vec<u32> {
        match self.kind {
            ProblemKind::Cnn => {
                let b = &self.bounds.cnn;
                let depth = unit_to_int(unit[0], b.min_layers, b.max_layers) as usize;
                let mut channels = Vec::with_capacity(depth);
                channels.push(unit_to_int(unit[1], b.first_channels.0, b.first_channels.1));
                for i in 1..depth {
                    let prev = channels[i - 1];
                    let hi = prev.saturating_mul(2).min(b.max_channels).max(prev);
                    channels.push(unit_to_int(unit[i + 1], prev, hi));
                }
                channels
            }
            ProblemKind::Mlp => {
                let b = &self.bounds.mlp;
                let depth = unit_to_int(unit[0], b.min_hidden_layers, b.max_hidden_layers) as usize;
                (0..depth).map(|i| unit_to_int(unit[i + 1], b.nodes.0, b.nodes.1)).collect()
            }
        }
    }
}

impl<F: Fn(Vec<u32>) -> Config + Sync> PointDecoder for ArchDecoder<F> {
    fn dims(&self) -> usize {
        1 + match self.kind {
            ProblemKind::Cnn => self.bounds.cnn.max_layers as usize,
            ProblemKind::Mlp => self.bounds.mlp.max_hidden_layers as usize,
        }
    }

    fn decode(&self, unit: &[f64]) -> Config {
        (self.complete)(self.widths(unit))
    }
}

/// Learning rate, weight decay and batch size around a frozen architecture.
pub struct TrainingDecoder {
    bounds: TrainingBounds,
    arch: Arch,
}

impl TrainingDecoder {
    pub fn new(bounds: TrainingBounds, arch: Arch) -> Self {
        TrainingDecoder { bounds, arch }
    }

    pub fn training(&self, unit: &[f64]) -> TrainingHp {
        let b = &self.bounds;
        let eta_exp = unit_to_range(unit[0], b.eta_exp.0, b.eta_exp.1);
        let lambda_exp = unit_to_range(unit[1], b.lambda_exp.0, b.lambda_exp.1);
        TrainingHp {
            eta: 10f64.powf(eta_exp),
            lambda: b.lambda_from_exponent(lambda_exp),
            batch_size: unit_to_int(unit[2], b.batch_size.0, b.batch_size.1),
        }
    }
}

impl PointDecoder for TrainingDecoder {
    fn dims(&self) -> usize {
        3
    }

    fn decode(&self, unit: &[f64]) -> Config {
        Config { arch: self.arch.clone(), training: self.training(unit) }
    }
}

/// `n` configs from the unscrambled Sobol sequence, or from a digitally
/// shifted one when `shift` is given.
pub fn sobol_sample<D, R>(decoder: &D, n: usize, shift: Option<&mut R>) -> Result<Vec<Config>, SobolError>
where
    D: PointDecoder + ?Sized,
    R: Rng + ?Sized,
{
    let mut seq = match shift {
        Some(rng) => Sobol::shifted(decoder.dims(), rng)?,
        None => Sobol::new(decoder.dims())?,
    };
    Ok(seq.take_points(n).iter().map(|u| decoder.decode(u)).collect())
}

pub fn uniform_point<R: Rng + ?Sized>(dims: usize, rng: &mut R) -> Vec<f64> {
    (0..dims).map(|_| rng.random::<f64>()).collect()
}

/// `n` configs drawn uniformly over the cube.
pub fn random_sample<D, R>(decoder: &D, n: usize, rng: &mut R) -> Vec<Config>
where
    D: PointDecoder + ?Sized,
    R: Rng + ?Sized,
{
    (0..n).map(|_| decoder.decode(&uniform_point(decoder.dims(), rng))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn complete_cnn(channels: Vec<u32>) -> Config {
        let points = expand_downsampling(&channels).len();
        Config {
            arch: Arch::Cnn(CnnArch {
                channels,
                downsample: vec![DownsampleStyle::Stride; points],
                bn_fraction: Quarters::ONE,
                dropout_fraction: Quarters::ONE,
                input_drop_prob: 0.0,
                hidden_drop_prob: 0.3,
                shortcut: ShortcutPolicy::None,
            }),
            training: TrainingHp { eta: 1e-3, lambda: 0.0, batch_size: 256 },
        }
    }

    fn mlp_arch() -> Arch {
        Arch::Mlp(MlpArch { hidden: vec![100], drop_prob: 0.2 })
    }

    #[test]
    fn integer_cells() {
        assert_eq!(unit_to_int(0.0, 32, 512), 32);
        assert_eq!(unit_to_int(0.5, 32, 512), 272);
        assert_eq!(unit_to_int(0.999_999_9, 32, 512), 512);
        assert_eq!(unit_to_int(1.0, 32, 512), 512);
        assert_eq!(unit_to_int(0.3, 7, 7), 7);
    }

    #[test]
    fn first_sobol_point_is_the_midpoint() {
        let d = TrainingDecoder::new(TrainingBounds::default(), mlp_arch());
        let c = sobol_sample::<_, ChaCha8Rng>(&d, 1, None).unwrap();
        assert_eq!(c[0].training.batch_size, 272);
        assert!((c[0].training.eta.log10() + 3.0).abs() < 1e-12);
        assert!((c[0].training.lambda.log10() + 4.5).abs() < 1e-12);
    }

    #[test]
    fn decoded_configs_validate() {
        let bounds = Bounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cnn = ArchDecoder::new(ProblemKind::Cnn, bounds.clone(), complete_cnn);
        let space = SearchSpace::architecture(ProblemKind::Cnn, bounds.clone());
        for c in random_sample(&cnn, 300, &mut rng).iter().chain(&sobol_sample(&cnn, 64, Some(&mut rng)).unwrap()) {
            let v = validate(c, &space);
            assert!(v.is_empty(), "{c}: {v:?}");
        }
        let train = TrainingDecoder::new(bounds.training.clone(), mlp_arch());
        let space = SearchSpace::training(ProblemKind::Mlp, bounds);
        for c in random_sample(&train, 300, &mut rng) {
            assert!(validate(&c, &space).is_empty(), "{c}");
        }
    }
}
