//! Protocol test double: answers evaluate requests with a synthetic
//! surface's result and the engine's own structural digest, and can be told
//! to misbehave.

use std::io::{self, BufRead, Write};
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use frugal::config::NetworkPlan;
use frugal::evaluators::protocol::{Message, PROTOCOL_VERSION};
use frugal::evaluators::synthetic::SyntheticObjective;
use frugal::evaluators::{Capabilities, DatasetDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fault {
    /// Reply to the handshake with the wrong version.
    BadVersion,
    /// Reply with a line that is not JSON.
    Malformed,
    /// Reply with an error record.
    Error,
    /// Exit without replying.
    Exit,
    /// Never reply.
    Hang,
    /// Reply with the wrong request id.
    WrongId,
    /// Reply with a digest that does not match the config.
    BadDigest,
}

#[derive(Debug, Parser)]
#[command(about = "Line-protocol evaluator backed by a synthetic surface")]
struct Args {
    /// Synthetic problem that scores configs.
    #[arg(long, default_value = "mlp-smooth")]
    problem: String,
    /// Misbehaviour to inject.
    #[arg(long, value_enum)]
    fail: Option<Fault>,
    /// Number of well-behaved evaluations before the fault kicks in.
    #[arg(long, default_value_t = 0)]
    after: usize,
    /// Leave the dataset out of the handshake.
    #[arg(long)]
    no_dataset: bool,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let objective = SyntheticObjective::by_name(&args.problem).with_context(|| format!("unknown problem `{}`", args.problem))?;
    let kind = objective.kind();
    let caps = Capabilities {
        cnn: kind == frugal::config::ProblemKind::Cnn,
        mlp: kind == frugal::config::ProblemKind::Mlp,
        vote: false,
        deterministic: true,
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut served = 0usize;
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fault = args.fail.filter(|_| served >= args.after);
        let reply = match Message::from_line(&line) {
            Ok(Message::Hello { .. }) => {
                let version = if args.fail == Some(Fault::BadVersion) { PROTOCOL_VERSION + 1 } else { PROTOCOL_VERSION };
                let dataset = (!args.no_dataset).then(|| DatasetDescriptor { name: objective.name.clone(), shape: objective.shape });
                Message::Hello { version, capabilities: caps.names().into_iter().map(String::from).collect(), dataset }.to_line()
            }
            Ok(Message::Evaluate { id, config, epochs, seed }) => {
                served += 1;
                match fault {
                    Some(Fault::Malformed) => "this is not a record".to_string(),
                    Some(Fault::Error) => Message::Error { id, reason: "injected failure".into() }.to_line(),
                    Some(Fault::Exit) => std::process::exit(3),
                    Some(Fault::Hang) => loop {
                        std::thread::sleep(Duration::from_secs(60));
                    },
                    _ => match config.to_config() {
                        Ok(config) => {
                            let r = objective.result(&config, seed, epochs);
                            let digest = match fault {
                                Some(Fault::BadDigest) => "0".repeat(16),
                                _ => NetworkPlan::build(&config.arch, &objective.shape).digest(),
                            };
                            let id = if fault == Some(Fault::WrongId) { id + 1 } else { id };
                            Message::Result {
                                id,
                                best_val_acc: r.best_val_acc,
                                t_tr_sec: r.t_tr_sec,
                                n_params: r.n_params,
                                digest: Some(digest),
                            }
                            .to_line()
                        }
                        Err(e) => Message::Error { id, reason: e.to_string() }.to_line(),
                    },
                }
            }
            Ok(_) => Message::Error { id: 0, reason: "unexpected record".into() }.to_line(),
            Err(e) => Message::Error { id: 0, reason: format!("unparseable request: {e}") }.to_line(),
        };
        writeln!(out, "{reply}")?;
        out.flush()?;
    }
    Ok(())
}
