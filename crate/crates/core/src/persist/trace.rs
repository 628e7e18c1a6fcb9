//! Append-only run trace, one JSON record per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Config, ProblemKind};
use crate::objective::{ComplexityMetric, EvalResult, ScoreBreakdown};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

/// Where in the search a record was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    /// `main` for shared stages, `b1`, `b2`, ... per carried incumbent.
    pub branch: String,
    /// 0 for calibration, then 1, 2, 3.
    pub stage: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_stage: Option<String>,
}

impl Labels {
    pub fn new(branch: impl Into<String>, stage: u8, sub_stage: Option<&str>) -> Self {
        Labels { branch: branch.into(), stage, sub_stage: sub_stage.map(str::to_string) }
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub seq: usize,
    /// Milliseconds since the run started.
    pub t_ms: u64,
    #[serde(flatten)]
    pub labels: Labels,
    /// BO step, absent for prior samples and grid points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub config: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub f: Option<f64>,
    pub f_p: Option<f64>,
    pub f_c: Option<f64>,
    pub metric_value: Option<f64>,
    pub best_val_acc: f64,
    pub t_tr_sec: f64,
    pub n_params: u64,
    pub epochs: u32,
}

impl EvaluationRecord {
    pub fn f_or_inf(&self) -> f64 {
        self.f.unwrap_or(f64::INFINITY)
    }

    pub fn decode_config(&self) -> Result<Config, crate::config::EncodingError> {
        crate::config::decode_config(&self.config)
    }
}

/// Marks the config a stage (or sub-stage) froze. `seq` points at the
/// evaluation record of that config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncumbentRecord {
    #[serde(flatten)]
    pub labels: Labels,
    pub seq: usize,
    pub f: Option<f64>,
}

/// First record of a run: everything needed to recompute its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub kind: ProblemKind,
    pub evaluator: String,
    pub seed: u64,
    pub w_c: f64,
    pub metric: ComplexityMetric,
    pub c0: f64,
    pub greedy_width: usize,
    /// Evaluation epochs per config, for the search-cost total.
    pub epochs: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transferred_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Run(RunHeader),
    Evaluation(EvaluationRecord),
    Incumbent(IncumbentRecord),
}

/// Collects trace records in memory and optionally appends them to a file
/// as they happen. Write errors are kept and reported by [`Recorder::finish`].
pub struct Recorder {
    started: Instant,
    records: Vec<TraceRecord>,
    sink: Option<BufWriter<File>>,
    error: Option<io::Error>,
}

impl Default for Recorder {
    fn default() -> Self {
        Recorder::in_memory()
    }
}

impl Recorder {
    pub fn in_memory() -> Self {
        Recorder { started: Instant::now(), records: Vec::new(), sink: None, error: None }
    }

    pub fn to_file(path: &Path) -> io::Result<Self> {
        let file = File::create(path)?;
        Ok(Recorder { sink: Some(BufWriter::new(file)), ..Recorder::in_memory() })
    }

    fn push(&mut self, record: TraceRecord) {
        if let (Some(sink), None) = (&mut self.sink, &self.error) {
            let line = serde_json::to_string(&record).expect("trace records serialize");
            if let Err(e) = writeln!(sink, "{line}").and_then(|_| sink.flush()) {
                self.error = Some(e);
            }
        }
        self.records.push(record);
    }

    pub fn next_seq(&self) -> usize {
        self.records.iter().filter(|r| matches!(r, TraceRecord::Evaluation(_))).count()
    }

    /// Appends an evaluation and returns its sequence number.
    pub fn evaluation(
        &mut self,
        labels: &Labels,
        step: Option<usize>,
        config: &Config,
        result: &EvalResult,
        score: &ScoreBreakdown,
    ) -> usize {
        let seq = self.next_seq();
        let record = EvaluationRecord {
            seq,
            t_ms: self.started.elapsed().as_millis() as u64,
            labels: labels.clone(),
            step,
            config: config.encode(),
            status: if result.failed { Status::Failed } else { Status::Ok },
            reason: result.reason.clone(),
            f: finite(score.f),
            f_p: finite(score.f_p),
            f_c: finite(score.f_c),
            metric_value: finite(score.metric_value),
            best_val_acc: result.best_val_acc,
            t_tr_sec: result.t_tr_sec,
            n_params: result.n_params,
            epochs: result.epochs_run,
        };
        self.push(TraceRecord::Evaluation(record));
        seq
    }

    pub fn header(&mut self, header: RunHeader) {
        self.push(TraceRecord::Run(header));
    }

    pub fn incumbent(&mut self, labels: &Labels, seq: usize, f: f64) {
        self.push(TraceRecord::Incumbent(IncumbentRecord { labels: labels.clone(), seq, f: finite(f) }));
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn evaluations(&self) -> impl Iterator<Item = &EvaluationRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Evaluation(e) => Some(e),
            _ => None,
        })
    }

    /// Surfaces the first write error, if any.
    pub fn finish(&mut self) -> io::Result<()> {
        match self.error.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

pub fn read_trace(path: &Path) -> io::Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::*;
    use crate::objective::{breakdown, ComplexityMetric, ObjectiveSpec};

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let mut rec = Recorder::to_file(&path).unwrap();
        let config = Config {
            arch: Arch::Mlp(MlpArch { hidden: vec![10], drop_prob: 0.1 }),
            training: TrainingHp { eta: 1e-3, lambda: 0.0, batch_size: 64 },
        };
        let spec = ObjectiveSpec::new(0.5, ComplexityMetric::Params, 100.0).unwrap();
        let ok = EvalResult::ok(0.9, 1.0, 50, 3);
        let bad = EvalResult::failure("boom");
        let labels = Labels::new("main", 1, None);
        let s0 = rec.evaluation(&labels, None, &config, &ok, &breakdown(&ok, &spec));
        let s1 = rec.evaluation(&labels, Some(0), &config, &bad, &breakdown(&bad, &spec));
        rec.incumbent(&labels, s0, 0.35);
        rec.finish().unwrap();
        assert_eq!((s0, s1), (0, 1));
        let back = read_trace(&path).unwrap();
        assert_eq!(back, rec.records());
        let TraceRecord::Evaluation(e) = &back[1] else { panic!() };
        assert_eq!(e.f, None);
        assert_eq!(e.status, Status::Failed);
        assert_eq!(e.decode_config().unwrap(), config);
    }
}
