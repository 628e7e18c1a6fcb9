//! Fixed choices used while the architecture is being searched, and the
//! ordered Stage-2 grids.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{
    expand_downsampling, Arch, Bounds, CnnArch, Config, DownsampleStyle, MlpArch, ProblemKind, ProblemShape,
    Quarters, ShortcutPolicy, TrainingHp,
};
use crate::evaluators::count_params;
use crate::objective::{preset_lambda, LambdaProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Presets {
    pub eta: f64,
    pub batch_size: u32,
    /// Defaults to `cnn` for CNNs and `mlp_small` for MLPs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_profile: Option<LambdaProfile>,
    pub cnn_bn_fraction: Quarters,
    pub cnn_dropout_fraction: Quarters,
    pub cnn_input_drop_prob: f64,
    pub cnn_hidden_drop_prob: f64,
    /// Shortcuts every other layer when the depth exceeds this.
    pub cnn_shortcuts_above: u32,
    pub cnn_downsample: DownsampleStyle,
    pub mlp_drop_prob: f64,
}

impl Default for Presets {
    fn default() -> Self {
        Presets {
            eta: 1e-3,
            batch_size: 256,
            lambda_profile: None,
            cnn_bn_fraction: Quarters::ONE,
            cnn_dropout_fraction: Quarters::ONE,
            cnn_input_drop_prob: 0.0,
            cnn_hidden_drop_prob: 0.3,
            cnn_shortcuts_above: 8,
            cnn_downsample: DownsampleStyle::Stride,
            mlp_drop_prob: 0.2,
        }
    }
}

impl Presets {
    pub fn profile(&self, kind: ProblemKind) -> LambdaProfile {
        self.lambda_profile.unwrap_or(match kind {
            ProblemKind::Cnn => LambdaProfile::Cnn,
            ProblemKind::Mlp => LambdaProfile::MlpSmall,
        })
    }

    /// Preset training HPs; weight decay follows the parameter count.
    pub fn training_for(&self, arch: &Arch, shape: &ProblemShape) -> TrainingHp {
        let lambda = preset_lambda(count_params(arch, shape), self.profile(arch.kind()));
        TrainingHp { eta: self.eta, lambda, batch_size: self.batch_size }
    }

    /// Full config around sampled core widths.
    pub fn complete(&self, kind: ProblemKind, widths: Vec<u32>, shape: &ProblemShape) -> Config {
        let arch = match kind {
            ProblemKind::Cnn => {
                let points = expand_downsampling(&widths).len();
                let shortcut = if widths.len() as u32 > self.cnn_shortcuts_above {
                    ShortcutPolicy::EveryOther
                } else {
                    ShortcutPolicy::None
                };
                Arch::Cnn(CnnArch {
                    channels: widths,
                    downsample: vec![self.cnn_downsample; points],
                    bn_fraction: self.cnn_bn_fraction,
                    dropout_fraction: self.cnn_dropout_fraction,
                    input_drop_prob: self.cnn_input_drop_prob,
                    hidden_drop_prob: self.cnn_hidden_drop_prob,
                    shortcut,
                })
            }
            ProblemKind::Mlp => Arch::Mlp(MlpArch { hidden: widths, drop_prob: self.mlp_drop_prob }),
        };
        let training = self.training_for(&arch, shape);
        Config { arch, training }
    }

    /// The most complex core architecture of the space, at presets.
    pub fn maximal(&self, kind: ProblemKind, bounds: &Bounds, shape: &ProblemShape) -> Config {
        let widths = match kind {
            ProblemKind::Cnn => (0..bounds.cnn.max_layers as usize).map(|l| bounds.cnn.layer_upper(l)).collect(),
            ProblemKind::Mlp => vec![bounds.mlp.nodes.1; bounds.mlp.max_hidden_layers as usize],
        };
        self.complete(kind, widths, shape)
    }
}

/// One ordered Stage-2 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubStage {
    /// Every stride/max-pool combination over the downsampling points.
    Downsampling,
    BatchNorm,
    /// Dropout fraction x input probability x hidden probability.
    Dropout,
    Shortcuts,
    /// The single MLP dropout grid.
    MlpDropout,
}

impl SubStage {
    pub fn as_str(self) -> &'static str {
        match self {
            SubStage::Downsampling => "downsampling",
            SubStage::BatchNorm => "batch_norm",
            SubStage::Dropout => "dropout",
            SubStage::Shortcuts => "shortcuts",
            SubStage::MlpDropout => "mlp_dropout",
        }
    }

    pub fn kind(self) -> ProblemKind {
        match self {
            SubStage::MlpDropout => ProblemKind::Mlp,
            _ => ProblemKind::Cnn,
        }
    }

    pub fn default_order(kind: ProblemKind) -> Vec<SubStage> {
        match kind {
            ProblemKind::Cnn => vec![SubStage::Downsampling, SubStage::BatchNorm, SubStage::Dropout, SubStage::Shortcuts],
            ProblemKind::Mlp => vec![SubStage::MlpDropout],
        }
    }
}

impl fmt::Display for SubStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [SubStage::Downsampling, SubStage::BatchNorm, SubStage::Dropout, SubStage::Shortcuts, SubStage::MlpDropout]
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| format!("unknown sub-stage `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    pub bn_fractions: Vec<Quarters>,
    pub dropout_fractions: Vec<Quarters>,
    pub input_drop_probs: Vec<f64>,
    pub hidden_drop_probs: Vec<f64>,
    pub mlp_drop_probs: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        let quarters = vec![Quarters::ZERO, Quarters::QUARTER, Quarters::HALF, Quarters::THREE_QUARTERS];
        Grids {
            bn_fractions: quarters.clone(),
            dropout_fractions: quarters,
            input_drop_probs: vec![0.1, 0.2],
            hidden_drop_probs: vec![0.15, 0.3, 0.45],
            mlp_drop_probs: vec![0.0, 0.1, 0.3, 0.4, 0.5],
        }
    }
}

impl Grids {
    /// Configs of one sub-stage. Each differs from `base` only along the
    /// sub-stage's axis; training HPs stay at presets for the new arch.
    pub fn expand(&self, sub: SubStage, base: &Config, presets: &Presets, shape: &ProblemShape) -> Vec<Config> {
        let archs: Vec<Arch> = match (&base.arch, sub) {
            (Arch::Cnn(a), SubStage::Downsampling) => {
                let k = a.downsample.len();
                (0..1usize << k)
                    .map(|mask| {
                        let downsample = (0..k)
                            .map(|i| if mask >> i & 1 == 1 { DownsampleStyle::MaxPool } else { DownsampleStyle::Stride })
                            .collect();
                        Arch::Cnn(CnnArch { downsample, ..a.clone() })
                    })
                    .collect()
            }
            (Arch::Cnn(a), SubStage::BatchNorm) => {
                self.bn_fractions.iter().map(|&bn_fraction| Arch::Cnn(CnnArch { bn_fraction, ..a.clone() })).collect()
            }
            (Arch::Cnn(a), SubStage::Dropout) => {
                let mut out = Vec::new();
                for &dropout_fraction in &self.dropout_fractions {
                    for &input_drop_prob in &self.input_drop_probs {
                        for &hidden_drop_prob in &self.hidden_drop_probs {
                            out.push(Arch::Cnn(CnnArch { dropout_fraction, input_drop_prob, hidden_drop_prob, ..a.clone() }));
                        }
                    }
                }
                out
            }
            (Arch::Cnn(a), SubStage::Shortcuts) => {
                ShortcutPolicy::ALL.iter().map(|&shortcut| Arch::Cnn(CnnArch { shortcut, ..a.clone() })).collect()
            }
            (Arch::Mlp(a), SubStage::MlpDropout) => {
                self.mlp_drop_probs.iter().map(|&drop_prob| Arch::Mlp(MlpArch { drop_prob, ..a.clone() })).collect()
            }
            _ => Vec::new(),
        };
        archs
            .into_iter()
            .map(|arch| {
                let training = presets.training_for(&arch, shape);
                Config { arch, training }
            })
            .collect()
    }

    /// Number of configs [`Grids::expand`] yields for `base`.
    pub fn size(&self, sub: SubStage, base: &Config) -> usize {
        match (&base.arch, sub) {
            (Arch::Cnn(a), SubStage::Downsampling) => 1 << a.downsample.len(),
            (Arch::Cnn(_), SubStage::BatchNorm) => self.bn_fractions.len(),
            (Arch::Cnn(_), SubStage::Dropout) => {
                self.dropout_fractions.len() * self.input_drop_probs.len() * self.hidden_drop_probs.len()
            }
            (Arch::Cnn(_), SubStage::Shortcuts) => ShortcutPolicy::ALL.len(),
            (Arch::Mlp(_), SubStage::MlpDropout) => self.mlp_drop_probs.len(),
            _ => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{validate, InputShape, SearchSpace};

    fn shape() -> ProblemShape {
        ProblemShape { input: InputShape::Image { height: 32, width: 32, channels: 3 }, classes: 10 }
    }

    #[test]
    fn cnn_presets() {
        let p = Presets::default();
        let short = p.complete(ProblemKind::Cnn, vec![16, 32, 64, 65], &shape());
        let a = short.arch.as_cnn().unwrap();
        assert_eq!(a.shortcut, ShortcutPolicy::None);
        assert_eq!(a.downsample, vec![DownsampleStyle::Stride]);
        assert_eq!(short.training.lambda, 0.0);
        let deep = p.complete(ProblemKind::Cnn, vec![64; 9], &shape());
        assert_eq!(deep.arch.as_cnn().unwrap().shortcut, ShortcutPolicy::EveryOther);
        let big = p.maximal(ProblemKind::Cnn, &Bounds::default(), &shape());
        let n = count_params(&big.arch, &shape());
        assert!(n > 1_000_000);
        assert_eq!(big.training.lambda, n as f64 / 1e11);
        assert!(validate(&big, &SearchSpace::architecture(ProblemKind::Cnn, Bounds::default())).is_empty());
    }

    #[test]
    fn grid_sizes() {
        let p = Presets::default();
        let g = Grids::default();
        let base = p.complete(ProblemKind::Cnn, vec![50, 52, 53, 59, 95, 96, 97, 120, 193, 239, 351, 385, 488, 496], &shape());
        for (sub, n) in [(SubStage::Downsampling, 8), (SubStage::BatchNorm, 4), (SubStage::Dropout, 24), (SubStage::Shortcuts, 3)] {
            let configs = g.expand(sub, &base, &p, &shape());
            assert_eq!(configs.len(), n);
            assert_eq!(g.size(sub, &base), n);
        }
        let mlp = p.complete(ProblemKind::Mlp, vec![100], &ProblemShape { input: InputShape::Flat { features: 784 }, classes: 10 });
        assert_eq!(g.expand(SubStage::MlpDropout, &mlp, &p, &shape()).len(), 5);
        assert_eq!(g.size(SubStage::BatchNorm, &mlp), 0);
    }

    #[test]
    fn grid_points_differ_only_on_their_axis() {
        let p = Presets::default();
        let base = p.complete(ProblemKind::Cnn, vec![60, 70, 130, 260], &shape());
        for c in Grids::default().expand(SubStage::BatchNorm, &base, &p, &shape()) {
            let (a, b) = (c.arch.as_cnn().unwrap(), base.arch.as_cnn().unwrap());
            assert_eq!(CnnArch { bn_fraction: b.bn_fraction, ..a.clone() }, *b);
        }
    }

    #[test]
    fn sub_stage_names() {
        for s in SubStage::default_order(ProblemKind::Cnn) {
            assert_eq!(s.as_str().parse::<SubStage>().unwrap(), s);
        }
    }
}
