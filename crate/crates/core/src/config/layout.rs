//! Deterministic expansion of an architecture into a concrete layer plan.

use sha2::{Digest, Sha256};

use super::{Arch, CnnArch, DownsampleStyle, MlpArch, ProblemShape, Quarters, ShortcutPolicy};

/// Channel counts whose crossing triggers a downsampling point.
pub const DOWNSAMPLE_THRESHOLDS: [u32; 3] = [64, 128, 256];

/// Layers (1-based) after which a downsampling op sits.
///
/// For each threshold `t`, the returned index `i` satisfies
/// `channels[i-1] <= t < channels[i]` (1-based `c_i <= t < c_{i+1}`).
/// Thresholds that are never crossed produce no entry.
pub fn expand_downsampling(channels: &[u32]) -> Vec<usize> {
    expand_downsampling_with(channels, &DOWNSAMPLE_THRESHOLDS)
}

pub fn expand_downsampling_with(channels: &[u32], thresholds: &[u32]) -> Vec<usize> {
    let mut points = Vec::new();
    for &t in thresholds {
        if let Some(i) = channels.windows(2).position(|w| w[0] <= t && w[1] > t) {
            points.push(i + 1);
        }
    }
    points.sort_unstable();
    points
}

/// Layers (1-based) that receive a BN or dropout layer for the given fraction.
///
/// With `m = round(fraction * n)`, the chosen layers are `ceil(n * j / m)`
/// for `j = 1..=m`, so later layers are preferred. For 7 layers at 1/2 this
/// gives layers 2, 4, 6 and 7.
pub fn place_fractional_layers(n_layers: usize, fraction: Quarters) -> Vec<usize> {
    let q = usize::from(fraction.quarters());
    // round(q * n / 4), halves rounded up
    let m = (2 * q * n_layers + 4) / 8;
    (1..=m).map(|j| (n_layers * j).div_ceil(m)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// 1-based layer number.
    pub index: usize,
    pub in_channels: u32,
    pub out_channels: u32,
    pub stride: u32,
    pub batch_norm: bool,
    pub max_pool_after: bool,
    pub dropout_after: Option<f64>,
}

/// Residual connection adding the input of `from_layer` to the output of
/// `to_layer` (before any pooling that follows `to_layer`).
#[derive(Debug, Clone, PartialEq)]
pub struct Shortcut {
    pub from_layer: usize,
    pub to_layer: usize,
    /// 1x1 projection conv used when channels or resolution change.
    pub projection: Option<Projection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    pub in_channels: u32,
    pub out_channels: u32,
    pub stride: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnPlan {
    pub input_channels: u32,
    pub input_dropout: Option<f64>,
    pub layers: Vec<ConvLayer>,
    pub shortcuts: Vec<Shortcut>,
    pub classes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPlan {
    /// Layer widths including input and output: `[input, hidden..., classes]`.
    pub widths: Vec<u64>,
    /// Dropout applied to the input and after every hidden layer.
    pub dropout: Option<f64>,
}

/// Fully expanded network description shared by the engine and external
/// evaluators. Its [`NetworkPlan::digest`] lets an evaluator prove it built
/// exactly this structure.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkPlan {
    Cnn(CnnPlan),
    Mlp(MlpPlan),
}

impl NetworkPlan {
    pub fn build(arch: &Arch, shape: &ProblemShape) -> NetworkPlan {
        match arch {
            Arch::Cnn(a) => NetworkPlan::Cnn(cnn_plan(a, shape)),
            Arch::Mlp(a) => NetworkPlan::Mlp(mlp_plan(a, shape)),
        }
    }

    /// Exact trainable parameter count.
    pub fn param_count(&self) -> u64 {
        match self {
            NetworkPlan::Mlp(p) => p.widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum(),
            NetworkPlan::Cnn(p) => {
                let mut total = 0u64;
                for l in &p.layers {
                    let (ci, co) = (u64::from(l.in_channels), u64::from(l.out_channels));
                    total += 9 * ci * co + co;
                    if l.batch_norm {
                        total += 2 * co;
                    }
                }
                for s in &p.shortcuts {
                    if let Some(proj) = s.projection {
                        let (ci, co) = (u64::from(proj.in_channels), u64::from(proj.out_channels));
                        total += ci * co + co;
                    }
                }
                let last = p.layers.last().map_or(u64::from(p.input_channels), |l| {
                    u64::from(l.out_channels)
                });
                total + last * u64::from(p.classes) + u64::from(p.classes)
            }
        }
    }

    /// Canonical line-per-layer description.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        match self {
            NetworkPlan::Mlp(p) => {
                out.push_str("mlp\n");
                let widths: Vec<String> = p.widths.iter().map(u64::to_string).collect();
                out.push_str(&format!("widths {}\n", widths.join(",")));
                if let Some(d) = p.dropout {
                    out.push_str(&format!("dropout {d}\n"));
                }
            }
            NetworkPlan::Cnn(p) => {
                out.push_str(&format!("cnn in={}\n", p.input_channels));
                if let Some(d) = p.input_dropout {
                    out.push_str(&format!("input_dropout {d}\n"));
                }
                for l in &p.layers {
                    out.push_str(&format!(
                        "conv{} {}->{} s{}{}{}{}\n",
                        l.index,
                        l.in_channels,
                        l.out_channels,
                        l.stride,
                        if l.batch_norm { " bn" } else { "" },
                        if l.max_pool_after { " pool" } else { "" },
                        l.dropout_after.map(|d| format!(" drop{d}")).unwrap_or_default(),
                    ));
                }
                for s in &p.shortcuts {
                    match s.projection {
                        Some(pr) => out.push_str(&format!(
                            "skip {}->{} proj {}->{} s{}\n",
                            s.from_layer, s.to_layer, pr.in_channels, pr.out_channels, pr.stride
                        )),
                        None => out.push_str(&format!("skip {}->{}\n", s.from_layer, s.to_layer)),
                    }
                }
                out.push_str(&format!("gap fc {}\n", p.classes));
            }
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`NetworkPlan::describe`].
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.describe().as_bytes());
        hex::encode(&hash[..8])
    }
}

fn positive(p: f64) -> Option<f64> {
    (p > 0.0).then_some(p)
}

fn cnn_plan(arch: &CnnArch, shape: &ProblemShape) -> CnnPlan {
    let input_channels = match shape.input {
        super::InputShape::Image { channels, .. } => channels,
        super::InputShape::Flat { .. } => 1,
    };
    let n = arch.channels.len();
    let points = expand_downsampling(&arch.channels);
    let bn = place_fractional_layers(n, arch.bn_fraction);
    let drop = place_fractional_layers(n, arch.dropout_fraction);

    let mut layers: Vec<ConvLayer> = Vec::with_capacity(n);
    let mut c_in = input_channels;
    for (i, &c_out) in arch.channels.iter().enumerate() {
        let index = i + 1;
        let style = points
            .iter()
            .position(|&p| p == index)
            .map(|k| arch.downsample.get(k).copied().unwrap_or(DownsampleStyle::Stride));
        layers.push(ConvLayer {
            index,
            in_channels: c_in,
            out_channels: c_out,
            stride: if style == Some(DownsampleStyle::Stride) { 2 } else { 1 },
            batch_norm: bn.contains(&index),
            max_pool_after: style == Some(DownsampleStyle::MaxPool),
            dropout_after: if drop.contains(&index) { positive(arch.hidden_drop_prob) } else { None },
        });
        c_in = c_out;
    }

    let step = match arch.shortcut {
        ShortcutPolicy::None => None,
        ShortcutPolicy::EveryOther => Some(2),
        ShortcutPolicy::Every4th => Some(4),
    };
    let mut shortcuts = Vec::new();
    if let Some(step) = step {
        let mut start = 1;
        while start + 1 <= n {
            let first = &layers[start - 1];
            let last = &layers[start];
            // pooling after the first layer or a stride in either layer changes resolution
            let downsampled = first.stride == 2 || first.max_pool_after || last.stride == 2;
            let projection = (downsampled || first.in_channels != last.out_channels).then_some(
                Projection {
                    in_channels: first.in_channels,
                    out_channels: last.out_channels,
                    stride: if downsampled { 2 } else { 1 },
                },
            );
            shortcuts.push(Shortcut { from_layer: start, to_layer: start + 1, projection });
            start += step;
        }
    }

    CnnPlan {
        input_channels,
        input_dropout: positive(arch.input_drop_prob),
        layers,
        shortcuts,
        classes: shape.classes,
    }
}

fn mlp_plan(arch: &MlpArch, shape: &ProblemShape) -> MlpPlan {
    let mut widths = Vec::with_capacity(arch.hidden.len() + 2);
    widths.push(shape.input.flat_len());
    widths.extend(arch.hidden.iter().map(|&h| u64::from(h)));
    widths.push(u64::from(shape.classes));
    MlpPlan { widths, dropout: positive(arch.drop_prob) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::InputShape;

    /// Brute-force: scan every layer pair for every threshold.
    fn crossing_oracle(channels: &[u32]) -> Vec<usize> {
        let mut out = Vec::new();
        for t in DOWNSAMPLE_THRESHOLDS {
            for i in 0..channels.len().saturating_sub(1) {
                if channels[i] <= t && channels[i + 1] > t {
                    out.push(i + 1);
                    break;
                }
            }
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn downsampling_worked_example() {
        let c = [50, 52, 53, 59, 95, 96, 97, 120, 193, 239, 351, 385, 488, 496];
        assert_eq!(expand_downsampling(&c), vec![4, 8, 10]);
    }

    #[test]
    fn downsampling_edge_cases() {
        assert!(expand_downsampling(&[16, 16, 16, 16]).is_empty());
        let c = [60, 70, 130, 260];
        assert_eq!(crossing_oracle(&c), vec![1, 2, 3]);
        assert_eq!(expand_downsampling(&c), vec![1, 2, 3]);
        // exactly at a threshold is not a crossing
        assert!(expand_downsampling(&[32, 64, 64, 64]).is_empty());
        assert_eq!(expand_downsampling(&[64, 65]), vec![1]);
    }

    #[test]
    fn fractional_placement_golden() {
        assert_eq!(place_fractional_layers(7, Quarters::HALF), vec![2, 4, 6, 7]);
        assert!(place_fractional_layers(7, Quarters::ZERO).is_empty());
        // regression value produced by the same rule
        assert_eq!(place_fractional_layers(8, Quarters::THREE_QUARTERS), vec![2, 3, 4, 6, 7, 8]);
        for n in 1..=16 {
            assert_eq!(place_fractional_layers(n, Quarters::ONE), (1..=n).collect::<Vec<_>>());
            assert!(place_fractional_layers(n, Quarters::ZERO).is_empty());
        }
    }

    #[test]
    fn single_conv_param_count() {
        let arch = Arch::Cnn(CnnArch {
            channels: vec![16],
            downsample: vec![],
            bn_fraction: Quarters::ONE,
            dropout_fraction: Quarters::ZERO,
            input_drop_prob: 0.0,
            hidden_drop_prob: 0.0,
            shortcut: ShortcutPolicy::None,
        });
        let shape = ProblemShape { input: InputShape::Image { height: 8, width: 8, channels: 3 }, classes: 10 };
        assert_eq!(NetworkPlan::build(&arch, &shape).param_count(), 650);
    }

    #[test]
    fn worked_cnn_plan_structure() {
        let arch = CnnArch {
            channels: vec![50, 52, 53, 59, 95, 96, 97, 120, 193, 239, 351, 385, 488, 496],
            downsample: vec![DownsampleStyle::Stride, DownsampleStyle::MaxPool, DownsampleStyle::MaxPool],
            bn_fraction: Quarters::ONE,
            dropout_fraction: Quarters::HALF,
            input_drop_prob: 0.0,
            hidden_drop_prob: 0.3,
            shortcut: ShortcutPolicy::EveryOther,
        };
        let shape = ProblemShape { input: InputShape::Image { height: 32, width: 32, channels: 3 }, classes: 10 };
        let NetworkPlan::Cnn(plan) = NetworkPlan::build(&Arch::Cnn(arch), &shape) else { panic!() };
        assert_eq!(plan.layers[3].stride, 2);
        assert!(plan.layers[7].max_pool_after && plan.layers[9].max_pool_after);
        assert_eq!(plan.layers.iter().filter(|l| l.batch_norm).count(), 14);
        let dropped: Vec<usize> = plan.layers.iter().filter(|l| l.dropout_after.is_some()).map(|l| l.index).collect();
        assert_eq!(dropped, vec![2, 4, 6, 8, 10, 12, 14]);
        assert_eq!(plan.shortcuts.len(), 7);
        // block (1,2): 3 -> 52 channels needs a projection
        assert!(plan.shortcuts[0].projection.is_some());
        // block (3,4): stride inside the block
        assert_eq!(plan.shortcuts[1].projection.unwrap().stride, 2);
    }

    #[test]
    fn every_fourth_blocks() {
        let arch = CnnArch {
            channels: vec![32; 9],
            downsample: vec![],
            bn_fraction: Quarters::ZERO,
            dropout_fraction: Quarters::ZERO,
            input_drop_prob: 0.0,
            hidden_drop_prob: 0.0,
            shortcut: ShortcutPolicy::Every4th,
        };
        let shape = ProblemShape { input: InputShape::Image { height: 8, width: 8, channels: 32 }, classes: 2 };
        let NetworkPlan::Cnn(plan) = NetworkPlan::build(&Arch::Cnn(arch), &shape) else { panic!() };
        let blocks: Vec<(usize, usize)> = plan.shortcuts.iter().map(|s| (s.from_layer, s.to_layer)).collect();
        assert_eq!(blocks, vec![(1, 2), (5, 6)]);
        assert!(plan.shortcuts.iter().all(|s| s.projection.is_none()));
    }

    #[test]
    fn mlp_param_counts() {
        let shape = ProblemShape { input: InputShape::Flat { features: 784 }, classes: 10 };
        let none = Arch::Mlp(MlpArch { hidden: vec![], drop_prob: 0.2 });
        assert_eq!(NetworkPlan::build(&none, &shape).param_count(), 7850);
        let one = Arch::Mlp(MlpArch { hidden: vec![400], drop_prob: 0.2 });
        assert_eq!(NetworkPlan::build(&one, &shape).param_count(), (784 + 1) * 400 + (400 + 1) * 10);
        assert_eq!(NetworkPlan::build(&one, &shape).param_count(), 318_010);
    }

    #[test]
    fn digest_tracks_structure() {
        let shape = ProblemShape { input: InputShape::Flat { features: 10 }, classes: 3 };
        let a = NetworkPlan::build(&Arch::Mlp(MlpArch { hidden: vec![20], drop_prob: 0.1 }), &shape);
        let b = NetworkPlan::build(&Arch::Mlp(MlpArch { hidden: vec![21], drop_prob: 0.1 }), &shape);
        assert_eq!(a.digest().len(), 16);
        assert_eq!(a.digest(), a.clone().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
