use std::fmt;

use super::{expand_downsampling, Arch, Config, SearchSpace};

/// One failed invariant. `field` names the offending config key.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

const EXP_TOL: f64 = 1e-9;

fn probability_ok(p: f64) -> bool {
    (0.0..1.0).contains(&p)
}

/// Checks every config invariant against the space's bounds. An empty list
/// means the config is valid.
pub fn validate(config: &Config, space: &SearchSpace) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |field: &'static str, message: String| out.push(Violation { field, message });

    if config.kind() != space.kind {
        push("kind", format!("config is {} but the space is {}", config.kind(), space.kind));
    }

    match &config.arch {
        Arch::Cnn(a) => {
            let b = &space.bounds.cnn;
            let n = a.channels.len() as u32;
            if n < b.min_layers || n > b.max_layers {
                push("channels", format!("{n} conv layers outside [{}, {}]", b.min_layers, b.max_layers));
            }
            if let Some(&first) = a.channels.first() {
                if first < b.first_channels.0 || first > b.first_channels.1 {
                    push(
                        "channels",
                        format!("first layer has {first} channels, outside [{}, {}]", b.first_channels.0, b.first_channels.1),
                    );
                }
            }
            for (i, w) in a.channels.windows(2).enumerate() {
                let (prev, next) = (w[0], w[1]);
                if next < prev {
                    push("channels", format!("channel decreases at layer {}", i + 2));
                } else if u64::from(next) > 2 * u64::from(prev) {
                    push("channels", format!("channel more than doubles at layer {}", i + 2));
                } else if next > b.max_channels {
                    push("channels", format!("layer {} exceeds the {} channel cap", i + 2, b.max_channels));
                }
            }
            let points = expand_downsampling(&a.channels).len();
            if a.downsample.len() != points {
                push(
                    "downsample",
                    format!("{} styles given for {points} downsampling points", a.downsample.len()),
                );
            }
            if !probability_ok(a.input_drop_prob) {
                push("input_drop_prob", format!("{} is not a probability in [0, 1)", a.input_drop_prob));
            }
            if !probability_ok(a.hidden_drop_prob) {
                push("hidden_drop_prob", format!("{} is not a probability in [0, 1)", a.hidden_drop_prob));
            }
        }
        Arch::Mlp(a) => {
            let b = &space.bounds.mlp;
            let n = a.hidden.len() as u32;
            if n < b.min_hidden_layers || n > b.max_hidden_layers {
                push(
                    "hidden",
                    format!("{n} hidden layers outside [{}, {}]", b.min_hidden_layers, b.max_hidden_layers),
                );
            }
            for (i, &h) in a.hidden.iter().enumerate() {
                if h < b.nodes.0 || h > b.nodes.1 {
                    push("hidden", format!("layer {} has {h} nodes, outside [{}, {}]", i + 1, b.nodes.0, b.nodes.1));
                }
            }
            if !probability_ok(a.drop_prob) {
                push("drop_prob", format!("{} is not a probability in [0, 1)", a.drop_prob));
            }
        }
    }

    let t = &space.bounds.training;
    let hp = &config.training;
    if hp.batch_size < t.batch_size.0 {
        push("batch_size", format!("batch size below lower bound {}", t.batch_size.0));
    }
    if hp.batch_size > t.batch_size.1 {
        push("batch_size", format!("batch size above upper bound {}", t.batch_size.1));
    }
    if !(hp.eta > 0.0) || !hp.eta.is_finite() {
        push("eta", format!("learning rate {} is not positive", hp.eta));
    } else {
        let x = hp.eta.log10();
        if x < t.eta_exp.0 - EXP_TOL || x > t.eta_exp.1 + EXP_TOL {
            push("eta", format!("learning rate {} outside [1e{}, 1e{}]", hp.eta, t.eta_exp.0, t.eta_exp.1));
        }
    }
    if !(hp.lambda >= 0.0) || !hp.lambda.is_finite() {
        push("lambda", format!("weight decay {} is negative", hp.lambda));
    } else if hp.lambda > 0.0 {
        let x = hp.lambda.log10();
        let lo = t.lambda_zero_below.max(t.lambda_exp.0);
        if x < lo - EXP_TOL || x > t.lambda_exp.1 + EXP_TOL {
            push("lambda", format!("weight decay {} outside {{0}} and [1e{lo}, 1e{}]", hp.lambda, t.lambda_exp.1));
        }
    }
    out
}
