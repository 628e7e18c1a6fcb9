//! Search points: architectures, training hyperparameters and the spaces
//! they are drawn from.
//!
//! A [`Config`] is an immutable value. Everything that depends on its
//! structure (downsampling points, BN/dropout placement, shortcut blocks)
//! is derived deterministically by the functions in [`layout`].

pub mod encoding;
pub mod layout;
pub mod space;
pub mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use encoding::{decode_config, encode_config, EncodingError};
pub use layout::{expand_downsampling, place_fractional_layers, NetworkPlan};
pub use space::{
    Bounds, CnnBounds, Extractor, Field, HyperParam, MlpBounds, ProblemKind, Scale, SearchSpace,
    Stage, TrainingBounds,
};
pub use validate::{validate, Violation};

/// How a downsampling point halves the spatial resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleStyle {
    /// Stride 2 in the last conv layer before the crossing.
    Stride,
    /// 2x2 max pooling right after that layer.
    MaxPool,
}

impl DownsampleStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            DownsampleStyle::Stride => "stride",
            DownsampleStyle::MaxPool => "maxpool",
        }
    }
}

impl FromStr for DownsampleStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stride" => Ok(DownsampleStyle::Stride),
            "maxpool" => Ok(DownsampleStyle::MaxPool),
            other => Err(format!("unknown downsample style `{other}`")),
        }
    }
}

/// A fraction restricted to multiples of 1/4 in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Quarters(u8);

impl Quarters {
    pub const ZERO: Quarters = Quarters(0);
    pub const QUARTER: Quarters = Quarters(1);
    pub const HALF: Quarters = Quarters(2);
    pub const THREE_QUARTERS: Quarters = Quarters(3);
    pub const ONE: Quarters = Quarters(4);

    pub fn new(quarters: u8) -> Option<Self> {
        (quarters <= 4).then_some(Quarters(quarters))
    }

    pub fn quarters(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 4.0
    }
}

impl fmt::Display for Quarters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            0 => "0",
            1 => "1/4",
            2 => "1/2",
            3 => "3/4",
            _ => "1",
        })
    }
}

impl FromStr for Quarters {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0" => Ok(Quarters(0)),
            "1/4" => Ok(Quarters(1)),
            "1/2" | "2/4" => Ok(Quarters(2)),
            "3/4" => Ok(Quarters(3)),
            "1" | "4/4" => Ok(Quarters(4)),
            other => Err(format!("fraction `{other}` is not a multiple of 1/4 in [0, 1]")),
        }
    }
}

impl TryFrom<String> for Quarters {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Quarters> for String {
    fn from(q: Quarters) -> String {
        q.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortcutPolicy {
    None,
    Every4th,
    EveryOther,
}

impl ShortcutPolicy {
    pub const ALL: [ShortcutPolicy; 3] = [
        ShortcutPolicy::None,
        ShortcutPolicy::Every4th,
        ShortcutPolicy::EveryOther,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShortcutPolicy::None => "none",
            ShortcutPolicy::Every4th => "every_4th",
            ShortcutPolicy::EveryOther => "every_other",
        }
    }
}

impl FromStr for ShortcutPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ShortcutPolicy::None),
            "every_4th" => Ok(ShortcutPolicy::Every4th),
            "every_other" => Ok(ShortcutPolicy::EveryOther),
            other => Err(format!("unknown shortcut policy `{other}`")),
        }
    }
}

/// Convolutional architecture. Layer numbering used throughout is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnArch {
    pub channels: Vec<u32>,
    /// One entry per downsampling point, in layer order.
    pub downsample: Vec<DownsampleStyle>,
    pub bn_fraction: Quarters,
    pub dropout_fraction: Quarters,
    pub input_drop_prob: f64,
    pub hidden_drop_prob: f64,
    pub shortcut: ShortcutPolicy,
}

impl CnnArch {
    pub fn depth(&self) -> usize {
        self.channels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub hidden: Vec<u32>,
    pub drop_prob: f64,
}

impl MlpArch {
    pub fn total_nodes(&self) -> u64 {
        self.hidden.iter().map(|&n| u64::from(n)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Arch {
    Cnn(CnnArch),
    Mlp(MlpArch),
}

impl Arch {
    pub fn kind(&self) -> ProblemKind {
        match self {
            Arch::Cnn(_) => ProblemKind::Cnn,
            Arch::Mlp(_) => ProblemKind::Mlp,
        }
    }

    pub fn as_cnn(&self) -> Option<&CnnArch> {
        match self {
            Arch::Cnn(a) => Some(a),
            Arch::Mlp(_) => None,
        }
    }

    pub fn as_mlp(&self) -> Option<&MlpArch> {
        match self {
            Arch::Mlp(a) => Some(a),
            Arch::Cnn(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingHp {
    pub eta: f64,
    pub lambda: f64,
    pub batch_size: u32,
}

/// A full search point: architecture plus training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub arch: Arch,
    pub training: TrainingHp,
}

impl Config {
    pub fn kind(&self) -> ProblemKind {
        self.arch.kind()
    }

    /// Canonical text encoding, see [`encoding`].
    pub fn encode(&self) -> String {
        encode_config(self)
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arch {
            Arch::Cnn(a) => write!(f, "cnn{:?}", a.channels)?,
            Arch::Mlp(a) => write!(f, "mlp{:?}", a.hidden)?,
        }
        write!(
            f,
            " eta={} lambda={} batch={}",
            self.training.eta, self.training.lambda, self.training.batch_size
        )
    }
}

/// Input geometry of the data an evaluator trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputShape {
    Flat { features: u32 },
    Image { height: u32, width: u32, channels: u32 },
}

impl InputShape {
    pub fn flat_len(self) -> u64 {
        match self {
            InputShape::Flat { features } => u64::from(features),
            InputShape::Image { height, width, channels } => {
                u64::from(height) * u64::from(width) * u64::from(channels)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemShape {
    pub input: InputShape,
    pub classes: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarters_parse_and_display() {
        for q in 0..=4 {
            let value = Quarters::new(q).unwrap();
            assert_eq!(value.to_string().parse::<Quarters>().unwrap(), value);
        }
        assert!("1/3".parse::<Quarters>().is_err());
        assert!(Quarters::new(5).is_none());
        assert_eq!(Quarters::THREE_QUARTERS.as_f64(), 0.75);
    }
}
