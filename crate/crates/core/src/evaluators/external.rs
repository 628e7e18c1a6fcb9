//! Evaluator backed by a child process speaking [`super::protocol`].

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::protocol::{Message, WireConfig, PROTOCOL_VERSION};
use super::{count_params, Capabilities, DatasetDescriptor, Evaluator, EvaluatorContract};
use crate::config::{Config, InputShape, NetworkPlan, ProblemShape};
use crate::objective::EvalResult;

const TRANSCRIPT_LINES: usize = 6;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("empty evaluator command")]
    EmptyCommand,
    #[error("could not start `{command}`")]
    Spawn { command: String, source: std::io::Error },
    #[error("evaluator speaks protocol version {theirs}, expected {ours}")]
    VersionMismatch { ours: u32, theirs: u32 },
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("evaluator closed its output")]
    Closed,
    #[error("could not write to evaluator: {0}")]
    Write(std::io::Error),
    #[error("malformed line `{line}`: {reason}")]
    Malformed { line: String, reason: String },
    #[error("expected {expected}, got `{line}`")]
    Unexpected { expected: &'static str, line: String },
    #[error("evaluator did not describe its dataset and none was configured")]
    NoDataset,
}

/// How to launch and talk to an external evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSpec {
    pub command: Vec<String>,
    pub epochs: u32,
    pub timeout: Duration,
    /// Used when the evaluator's hello carries no dataset.
    pub dataset: Option<DatasetDescriptor>,
}

pub struct ExternalEvaluator {
    contract: EvaluatorContract,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    next_id: u64,
    transcript: VecDeque<String>,
    dead: Option<String>,
}

impl ExternalEvaluator {
    /// Starts the process and completes the handshake.
    pub fn spawn(spec: &ExternalSpec) -> Result<Self, ProtocolError> {
        let (program, args) = spec.command.split_first().ok_or(ProtocolError::EmptyCommand)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ProtocolError::Spawn { command: spec.command.join(" "), source })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });

        let contract = EvaluatorContract {
            id: format!("external:{}", spec.command.join(" ")),
            capabilities: Capabilities::default(),
            dataset: DatasetDescriptor {
                name: String::new(),
                shape: ProblemShape { input: InputShape::Flat { features: 1 }, classes: 2 },
            },
            epochs: spec.epochs,
            timeout: spec.timeout,
        };
        let mut this = ExternalEvaluator { contract, child, stdin, lines, next_id: 1, transcript: VecDeque::new(), dead: None };
        match this.handshake(spec) {
            Ok(()) => Ok(this),
            Err(e) => {
                this.kill();
                Err(e)
            }
        }
    }

    fn handshake(&mut self, spec: &ExternalSpec) -> Result<(), ProtocolError> {
        self.send(&Message::hello())?;
        let line = self.receive()?;
        match Message::from_line(&line) {
            Ok(Message::Hello { version, capabilities, dataset }) => {
                if version != PROTOCOL_VERSION {
                    return Err(ProtocolError::VersionMismatch { ours: PROTOCOL_VERSION, theirs: version });
                }
                self.contract.capabilities = Capabilities::from_names(&capabilities);
                self.contract.dataset = dataset.or_else(|| spec.dataset.clone()).ok_or(ProtocolError::NoDataset)?;
                Ok(())
            }
            Ok(_) => Err(ProtocolError::Unexpected { expected: "hello", line }),
            Err(e) => Err(ProtocolError::Malformed { line, reason: e.to_string() }),
        }
    }

    fn note(&mut self, line: String) {
        if self.transcript.len() == TRANSCRIPT_LINES {
            self.transcript.pop_front();
        }
        self.transcript.push_back(line);
    }

    fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        let line = msg.to_line();
        self.note(format!("> {line}"));
        writeln!(self.stdin, "{line}").and_then(|_| self.stdin.flush()).map_err(ProtocolError::Write)
    }

    fn receive(&mut self) -> Result<String, ProtocolError> {
        match self.lines.recv_timeout(self.contract.timeout) {
            Ok(line) => {
                self.note(format!("< {line}"));
                Ok(line)
            }
            Err(RecvTimeoutError::Timeout) => Err(ProtocolError::Timeout(self.contract.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ProtocolError::Closed),
        }
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// Recent protocol lines, oldest first.
    pub fn transcript(&self) -> Vec<String> {
        self.transcript.iter().cloned().collect()
    }

    /// Why the process is unusable, if it is.
    pub fn dead_reason(&self) -> Option<&str> {
        self.dead.as_deref()
    }

    fn fail(&self, reason: impl std::fmt::Display) -> EvalResult {
        EvalResult::failure(format!("{reason}; transcript: {}", self.transcript().join(" | ")))
    }

    fn round_trip(&mut self, config: &Config, seed: u64) -> Result<EvalResult, ProtocolError> {
        let id = self.next_id;
        self.next_id += 1;
        self.send(&Message::Evaluate { id, config: WireConfig::from_config(config), epochs: self.contract.epochs, seed })?;
        let line = self.receive()?;
        let msg = Message::from_line(&line).map_err(|e| ProtocolError::Malformed { line: line.clone(), reason: e.to_string() })?;
        let (got, result) = match msg {
            Message::Result { id: got, best_val_acc, t_tr_sec, n_params, digest } => {
                let result = if !(0.0..=1.0).contains(&best_val_acc) {
                    self.fail(format!("best_val_acc {best_val_acc} outside [0, 1]"))
                } else if !(t_tr_sec > 0.0) || !t_tr_sec.is_finite() {
                    self.fail(format!("t_tr_sec {t_tr_sec} is not positive"))
                } else {
                    let shape = self.contract.dataset.shape;
                    let expected = NetworkPlan::build(&config.arch, &shape).digest();
                    match digest {
                        Some(d) if d != expected => self.fail(format!("structural digest {d} does not match {expected}")),
                        _ => {
                            let ours = count_params(&config.arch, &shape);
                            if ours != n_params {
                                tracing::warn!(ours, theirs = n_params, "parameter count differs from the evaluator's");
                            }
                            EvalResult::ok(best_val_acc, t_tr_sec, n_params, self.contract.epochs)
                        }
                    }
                };
                (got, result)
            }
            Message::Error { id: got, reason } => (got, EvalResult::failure(format!("evaluator error: {reason}"))),
            _ => return Err(ProtocolError::Unexpected { expected: "result or error", line }),
        };
        if got != id {
            return Ok(self.fail(format!("response id {got} does not match request id {id}")));
        }
        Ok(result)
    }
}

impl Evaluator for ExternalEvaluator {
    fn contract(&self) -> &EvaluatorContract {
        &self.contract
    }

    fn fatal(&self) -> Option<String> {
        self.dead.clone()
    }

    fn evaluate(&mut self, config: &Config, seed: u64) -> EvalResult {
        if let Some(reason) = &self.dead {
            return EvalResult::failure(format!("evaluator unavailable: {reason}"));
        }
        if let Err(e) = self.preflight(config) {
            return EvalResult::failure(e.to_string());
        }
        match self.round_trip(config, seed) {
            Ok(r) => r,
            Err(e) => {
                let result = self.fail(&e);
                if matches!(e, ProtocolError::Timeout(_) | ProtocolError::Closed | ProtocolError::Write(_)) {
                    self.kill();
                    self.dead = Some(e.to_string());
                }
                result
            }
        }
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        self.kill();
    }
}
