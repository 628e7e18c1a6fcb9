//! Run directories: trace, summary, wall-clock info and the c0 cache.
//!
//! ```text
//! <run>/manifest.toml   resolved manifest, when the run came from one
//! <run>/trace.jsonl     header, every evaluation, every incumbent
//! <run>/summary.json    recomputable from trace.jsonl alone
//! <run>/run_info.json   wall-clock facts, not reproducible
//! <root>/c0.json        reference complexities keyed by space, evaluator, metric
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::trace::{read_trace, EvaluationRecord, Recorder, RunHeader, Status, TraceRecord};
use crate::config::{Config, ProblemShape};
use crate::evaluators::Evaluator;
use crate::objective::{ComplexityMetric, ObjectiveSpec};
use crate::pipeline::{calibrate, search_transfer, Engine, EnsembleCandidate, PipelineError, StagePlan};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RUN_INFO_FILE: &str = "run_info.json";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const C0_FILE: &str = "c0.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("i/o failure at {}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed trace: {0}")]
    Trace(String),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageIncumbent {
    pub branch: String,
    pub stage: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_stage: Option<String>,
    pub seq: usize,
    pub config: String,
    pub f: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalConfig {
    pub seq: usize,
    pub config: String,
    pub f: f64,
    pub f_p: f64,
    pub f_c: f64,
    pub best_val_acc: f64,
    pub t_tr_sec: f64,
    pub n_params: u64,
}

/// Machine-readable result of one run, derived from its trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(flatten)]
    pub header: RunHeader,
    pub evaluations: usize,
    pub failed_evaluations: usize,
    /// Keyed by stage number.
    pub evaluations_per_stage: BTreeMap<u8, usize>,
    /// Sum over evaluations of per-epoch training time times epochs run.
    pub search_cost_sec: f64,
    pub incumbents: Vec<StageIncumbent>,
    #[serde(rename = "final")]
    pub final_config: FinalConfig,
}

impl Summary {
    pub fn from_trace(records: &[TraceRecord]) -> Result<Self, RunError> {
        let bad = |m: &str| RunError::Trace(m.to_string());
        let Some(TraceRecord::Run(header)) = records.first() else {
            return Err(bad("the first record is not a run header"));
        };
        let evals: Vec<&EvaluationRecord> = records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Evaluation(e) => Some(e),
                _ => None,
            })
            .collect();
        if evals.iter().enumerate().any(|(i, e)| e.seq != i) {
            return Err(bad("evaluation sequence numbers are not 0, 1, 2, ..."));
        }
        let mut per_stage = BTreeMap::new();
        for e in &evals {
            *per_stage.entry(e.labels.stage).or_insert(0) += 1;
        }
        let search_cost_sec = evals
            .iter()
            .filter(|e| e.status == Status::Ok)
            .map(|e| e.t_tr_sec * f64::from(e.epochs))
            .sum();
        let mut incumbents = Vec::new();
        let mut last = None;
        for r in records {
            if let TraceRecord::Incumbent(i) = r {
                let e = evals.get(i.seq).ok_or_else(|| bad("incumbent points past the last evaluation"))?;
                if i.labels.branch == "final" {
                    last = Some(*e);
                    continue;
                }
                incumbents.push(StageIncumbent {
                    branch: i.labels.branch.clone(),
                    stage: i.labels.stage,
                    sub_stage: i.labels.sub_stage.clone(),
                    seq: i.seq,
                    config: e.config.clone(),
                    f: i.f,
                });
            }
        }
        let e = last.ok_or_else(|| bad("no final incumbent"))?;
        let finite = |x: Option<f64>| x.ok_or_else(|| bad("the final config failed"));
        let final_config = FinalConfig {
            seq: e.seq,
            config: e.config.clone(),
            f: finite(e.f)?,
            f_p: finite(e.f_p)?,
            f_c: finite(e.f_c)?,
            best_val_acc: e.best_val_acc,
            t_tr_sec: e.t_tr_sec,
            n_params: e.n_params,
        };
        Ok(Summary {
            header: header.clone(),
            evaluations: evals.len(),
            failed_evaluations: evals.iter().filter(|e| e.status == Status::Failed).count(),
            evaluations_per_stage: per_stage,
            search_cost_sec,
            incumbents,
            final_config,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summaries serialize");
        s.push('\n');
        s
    }

    pub fn load(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(io_at(&path))?;
        serde_json::from_str(&text).map_err(|e| RunError::Trace(format!("{}: {e}", path.display())))
    }
}

/// Wall-clock facts about a run. Kept apart from the summary so that the
/// summary stays reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub started_unix_sec: u64,
    pub wall_clock_sec: f64,
    pub version: String,
}

/// What to run and how to label it.
#[derive(Debug, Clone)]
pub struct RunRequest<'a> {
    pub plan: &'a StagePlan,
    pub objective: ObjectiveSpec,
    pub seed: u64,
    pub greedy_width: usize,
    /// Written to the run directory as-is.
    pub manifest_toml: Option<String>,
}

impl RunRequest<'_> {
    fn header(&self, evaluator: &dyn Evaluator, transferred_from: Option<String>) -> RunHeader {
        RunHeader {
            kind: self.plan.kind,
            evaluator: evaluator.contract().id.clone(),
            seed: self.seed,
            w_c: self.objective.w_c,
            metric: self.objective.metric,
            c0: self.objective.c0,
            greedy_width: self.greedy_width,
            epochs: evaluator.contract().epochs,
            transferred_from,
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(io_at(path))
}

fn finish_dir(dir: &Path, recorder: &Recorder, started: (SystemTime, Instant)) -> Result<Summary, RunError> {
    let summary = Summary::from_trace(recorder.records())?;
    write_file(&dir.join(SUMMARY_FILE), &summary.to_json())?;
    let info = RunInfo {
        started_unix_sec: started.0.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        wall_clock_sec: started.1.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_file(&dir.join(RUN_INFO_FILE), &serde_json::to_string_pretty(&info).expect("run info serializes"))?;
    Ok(summary)
}

fn open_dir(dir: &Path, request: &RunRequest<'_>) -> Result<Recorder, RunError> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    if let Some(text) = &request.manifest_toml {
        write_file(&dir.join(MANIFEST_FILE), text)?;
    }
    let trace = dir.join(TRACE_FILE);
    Recorder::to_file(&trace).map_err(io_at(&trace))
}

/// Runs all three stages into `dir`.
pub fn search_to_dir(request: &RunRequest<'_>, evaluator: &mut dyn Evaluator, dir: &Path) -> Result<Summary, RunError> {
    let started = (SystemTime::now(), Instant::now());
    let mut recorder = open_dir(dir, request)?;
    recorder.header(request.header(evaluator, None));
    Engine::new(request.plan, request.objective, evaluator, &mut recorder, request.seed).run_full(request.greedy_width)?;
    finish_dir(dir, &recorder, started)
}

/// Reruns Stage 3 for `source` into `dir`, tagging the run with `source_id`.
pub fn transfer_to_dir(
    request: &RunRequest<'_>,
    source: &Config,
    source_id: &str,
    evaluator: &mut dyn Evaluator,
    dir: &Path,
) -> Result<Summary, RunError> {
    evaluator.preflight(source).map_err(PipelineError::from)?;
    let started = (SystemTime::now(), Instant::now());
    let mut recorder = open_dir(dir, request)?;
    recorder.header(request.header(evaluator, Some(source_id.to_string())));
    let mut engine = Engine::new(request.plan, request.objective, evaluator, &mut recorder, request.seed);
    search_transfer(&mut engine, source)?;
    finish_dir(dir, &recorder, started)
}

pub fn load_trace(dir: &Path) -> Result<Vec<TraceRecord>, RunError> {
    let path = dir.join(TRACE_FILE);
    read_trace(&path).map_err(io_at(&path))
}

/// The config Stage 2 froze in `branch`.
pub fn stage2_incumbent(records: &[TraceRecord], branch: &str) -> Result<Config, RunError> {
    let seq = records
        .iter()
        .rev()
        .find_map(|r| match r {
            TraceRecord::Incumbent(i) if i.labels.branch == branch && i.labels.stage == 2 => Some(i.seq),
            _ => None,
        })
        .ok_or_else(|| RunError::Trace(format!("no Stage-2 incumbent for branch `{branch}`")))?;
    evaluation(records, seq)?.decode_config().map_err(|e| RunError::Trace(e.to_string()))
}

fn evaluation(records: &[TraceRecord], seq: usize) -> Result<&EvaluationRecord, RunError> {
    records
        .iter()
        .find_map(|r| match r {
            TraceRecord::Evaluation(e) if e.seq == seq => Some(e),
            _ => None,
        })
        .ok_or_else(|| RunError::Trace(format!("no evaluation {seq}")))
}

/// Stage-3 evaluations of `branch`, as ensemble candidates.
pub fn stage3_candidates(records: &[TraceRecord], branch: &str) -> Result<Vec<EnsembleCandidate>, RunError> {
    let mut out = Vec::new();
    for r in records {
        if let TraceRecord::Evaluation(e) = r {
            if e.labels.stage == 3 && e.labels.branch == branch {
                let config = e.decode_config().map_err(|err| RunError::Trace(err.to_string()))?;
                out.push(EnsembleCandidate { seq: e.seq, config, f: e.f_or_inf(), n_params: e.n_params });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C0Entry {
    pub space: String,
    pub evaluator: String,
    pub metric: ComplexityMetric,
    pub c0: f64,
}

/// Hash of everything that decides the calibration config.
pub fn space_key(plan: &StagePlan, shape: &ProblemShape) -> String {
    let text = serde_json::to_string(&(plan.kind, &plan.bounds, &plan.presets, shape)).expect("plans serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn read_c0(root: &Path) -> Vec<C0Entry> {
    fs::read_to_string(root.join(C0_FILE)).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default()
}

/// Returns the cached c0 for this space, evaluator and metric, or measures
/// it and stores it under `root`. Fresh calibrations are traced to
/// `calibration-<key>.jsonl`.
pub fn calibrate_cached(
    plan: &StagePlan,
    evaluator: &mut dyn Evaluator,
    metric: ComplexityMetric,
    seed: u64,
    root: &Path,
) -> Result<f64, RunError> {
    let space = space_key(plan, &evaluator.contract().dataset.shape);
    let id = evaluator.contract().id.clone();
    let mut entries = read_c0(root);
    if let Some(e) = entries.iter().find(|e| e.space == space && e.evaluator == id && e.metric == metric) {
        return Ok(e.c0);
    }
    fs::create_dir_all(root).map_err(io_at(root))?;
    let trace = root.join(format!("calibration-{}.jsonl", &space[..12]));
    let mut recorder = Recorder::to_file(&trace).map_err(io_at(&trace))?;
    let c0 = calibrate(plan, evaluator, metric, seed, &mut recorder)?;
    recorder.finish().map_err(io_at(&trace))?;
    entries.push(C0Entry { space, evaluator: id, metric, c0 });
    let path = root.join(C0_FILE);
    write_file(&path, &serde_json::to_string_pretty(&entries).expect("c0 entries serialize"))?;
    Ok(c0)
}

/// One row of the performance/complexity tradeoff export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub w_c: f64,
    pub acc: f64,
    pub t_tr_sec: f64,
    pub n_params: u64,
    pub search_cost_sec: f64,
}

pub fn tradeoff_rows(summaries: &[Summary]) -> Vec<TradeoffRow> {
    let mut rows: Vec<TradeoffRow> = summaries
        .iter()
        .map(|s| TradeoffRow {
            w_c: s.header.w_c,
            acc: s.final_config.best_val_acc,
            t_tr_sec: s.final_config.t_tr_sec,
            n_params: s.final_config.n_params,
            search_cost_sec: s.search_cost_sec,
        })
        .collect();
    rows.sort_by(|a, b| a.w_c.total_cmp(&b.w_c));
    rows
}

pub fn write_tradeoff_csv<W: Write>(rows: &[TradeoffRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Run directories at or below each path, in sorted order.
pub fn find_runs(paths: &[PathBuf]) -> io::Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
        if dir.join(SUMMARY_FILE).is_file() {
            out.push(dir.to_path_buf());
            return Ok(());
        }
        let mut children: Vec<PathBuf> =
            fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        children.sort();
        for child in children {
            walk(&child, out)?;
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        walk(p, &mut out)?;
    }
    Ok(out)
}
