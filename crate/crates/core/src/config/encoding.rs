//! Flat `key = value` text encoding of a [`Config`].
//!
//! Field order is fixed:
//!
//! ```text
//! kind = cnn                  kind = mlp
//! channels = 50,52,53,59      hidden = 300,300
//! downsample = stride         drop_prob = 0.2
//! bn_fraction = 1             eta = 0.001
//! dropout_fraction = 1/2      lambda = 0
//! input_drop_prob = 0         batch_size = 256
//! hidden_drop_prob = 0.3
//! shortcut = none
//! eta = 0.001
//! lambda = 0.0000335
//! batch_size = 120
//! ```
//!
//! Lists are comma separated, an empty list is an empty value. Floats use
//! the shortest representation that parses back to the same bits.

use thiserror::Error;

use super::{Arch, CnnArch, Config, MlpArch, Quarters, ShortcutPolicy, TrainingHp};

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("unexpected key `{found}` (expected `{expected}`)")]
    Unexpected { expected: &'static str, found: String },
    #[error("bad value for `{key}`: {reason}")]
    Value { key: &'static str, reason: String },
    #[error("trailing key `{0}`")]
    Trailing(String),
}

const CNN_KEYS: [&str; 11] = [
    "kind",
    "channels",
    "downsample",
    "bn_fraction",
    "dropout_fraction",
    "input_drop_prob",
    "hidden_drop_prob",
    "shortcut",
    "eta",
    "lambda",
    "batch_size",
];
const MLP_KEYS: [&str; 6] = ["kind", "hidden", "drop_prob", "eta", "lambda", "batch_size"];

/// Keys of a config of `kind`, in encoding order.
pub fn keys_for(kind: super::ProblemKind) -> &'static [&'static str] {
    match kind {
        super::ProblemKind::Cnn => &CNN_KEYS,
        super::ProblemKind::Mlp => &MLP_KEYS,
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Ordered key/value pairs, the common source of the text and wire encodings.
pub fn encode_fields(config: &Config) -> Vec<(&'static str, String)> {
    let mut fields = Vec::with_capacity(11);
    match &config.arch {
        Arch::Cnn(a) => {
            let styles: Vec<&str> = a.downsample.iter().map(|s| s.as_str()).collect();
            fields.push(("kind", "cnn".to_string()));
            fields.push(("channels", join(&a.channels)));
            fields.push(("downsample", styles.join(",")));
            fields.push(("bn_fraction", a.bn_fraction.to_string()));
            fields.push(("dropout_fraction", a.dropout_fraction.to_string()));
            fields.push(("input_drop_prob", a.input_drop_prob.to_string()));
            fields.push(("hidden_drop_prob", a.hidden_drop_prob.to_string()));
            fields.push(("shortcut", a.shortcut.as_str().to_string()));
        }
        Arch::Mlp(a) => {
            fields.push(("kind", "mlp".to_string()));
            fields.push(("hidden", join(&a.hidden)));
            fields.push(("drop_prob", a.drop_prob.to_string()));
        }
    }
    fields.push(("eta", config.training.eta.to_string()));
    fields.push(("lambda", config.training.lambda.to_string()));
    fields.push(("batch_size", config.training.batch_size.to_string()));
    fields
}

pub fn encode_config(config: &Config) -> String {
    let mut out = String::new();
    for (k, v) in encode_fields(config) {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    }
    out
}

pub fn decode_config(text: &str) -> Result<Config, EncodingError> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(EncodingError::Syntax(i + 1))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    decode_fields(&pairs)
}

/// Decodes ordered key/value pairs. Keys must appear in the documented order.
pub fn decode_fields(pairs: &[(String, String)]) -> Result<Config, EncodingError> {
    let kind = pairs
        .first()
        .filter(|(k, _)| k == "kind")
        .map(|(_, v)| v.as_str())
        .ok_or(EncodingError::Missing("kind"))?;
    let keys: &[&'static str] = match kind {
        "cnn" => &CNN_KEYS,
        "mlp" => &MLP_KEYS,
        other => {
            return Err(EncodingError::Value { key: "kind", reason: format!("unknown kind `{other}`") })
        }
    };
    for (i, expected) in keys.iter().enumerate() {
        match pairs.get(i) {
            None => return Err(EncodingError::Missing(expected)),
            Some((k, _)) if k != expected => {
                return Err(EncodingError::Unexpected { expected, found: k.clone() })
            }
            _ => {}
        }
    }
    if let Some((k, _)) = pairs.get(keys.len()) {
        return Err(EncodingError::Trailing(k.clone()));
    }
    let value = |i: usize| pairs[i].1.as_str();

    let training_at = keys.len() - 3;
    let training = TrainingHp {
        eta: parse_f64("eta", value(training_at))?,
        lambda: parse_f64("lambda", value(training_at + 1))?,
        batch_size: parse("batch_size", value(training_at + 2))?,
    };
    let arch = if kind == "cnn" {
        Arch::Cnn(CnnArch {
            channels: parse_list("channels", value(1))?,
            downsample: parse_list("downsample", value(2))?,
            bn_fraction: parse::<Quarters>("bn_fraction", value(3))?,
            dropout_fraction: parse::<Quarters>("dropout_fraction", value(4))?,
            input_drop_prob: parse_f64("input_drop_prob", value(5))?,
            hidden_drop_prob: parse_f64("hidden_drop_prob", value(6))?,
            shortcut: parse::<ShortcutPolicy>("shortcut", value(7))?,
        })
    } else {
        Arch::Mlp(MlpArch {
            hidden: parse_list("hidden", value(1))?,
            drop_prob: parse_f64("drop_prob", value(2))?,
        })
    };
    Ok(Config { arch, training })
}

fn parse<T>(key: &'static str, v: &str) -> Result<T, EncodingError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| EncodingError::Value { key, reason: e.to_string() })
}

fn parse_f64(key: &'static str, v: &str) -> Result<f64, EncodingError> {
    let x: f64 = parse(key, v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(EncodingError::Value { key, reason: "not finite".into() })
    }
}

fn parse_list<T>(key: &'static str, v: &str) -> Result<Vec<T>, EncodingError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|item| parse(key, item.trim())).collect()
}
