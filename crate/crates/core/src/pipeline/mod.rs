//! The three-stage greedy search.
//!
//! Stage 1 runs BO over depth and widths with everything else at
//! [`Presets`]. Stage 2 walks the ordered [`SubStage`] grids, freezing each
//! winner. Stage 3 runs BO over learning rate, weight decay and batch size
//! for the frozen architecture. With a greedy width `w > 1` the `w` best
//! Stage-1 configs each get their own Stage 2 and 3, and the `w` best of
//! every Stage 3 are kept, giving `w²` finals.

pub mod experiments;
pub mod presets;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::{bo_minimize, ArchDecoder, BoError, BoSettings, CandidateRecord, PointDecoder, SearchMode, TrainingDecoder};
use crate::config::{Bounds, Config, ProblemKind, SearchSpace};
use crate::evaluators::{Evaluator, Incompatible};
use crate::kernel::{KernelError, KernelSpec};
use crate::objective::{breakdown, calibrate_c0, ComplexityMetric, Evaluation, ObjectiveError, ObjectiveSpec};
use crate::persist::trace::{Labels, Recorder};
use crate::sobol::MAX_DIMS;

pub use experiments::{ensemble_select, search_transfer, Ensemble, EnsembleCandidate};
pub use presets::{Grids, Presets, SubStage};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Bo(#[from] BoError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("incompatible with the target evaluator: {0}")]
    Incompatible(#[from] Incompatible),
    #[error("evaluator failure: {0}")]
    Evaluator(String),
    #[error("every evaluation of {0} failed")]
    AllFailed(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("an ensemble of {n} needs more than the {budget} Stage-3 evaluations")]
    EnsembleTooLarge { n: usize, budget: usize },
    #[error("could not write the trace")]
    Io(#[from] io::Error),
}

/// Declarative description of one search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub kind: ProblemKind,
    pub bounds: Bounds,
    /// Seeds are derived from the run seed; the field here is ignored.
    pub stage1: BoSettings,
    pub stage2: Vec<SubStage>,
    pub grids: Grids,
    pub stage3: BoSettings,
    pub presets: Presets,
    pub omega: f64,
    pub ramp_power: f64,
}

impl StagePlan {
    /// Balanced BO in both searched stages, default grids and presets.
    pub fn new(kind: ProblemKind) -> Self {
        StagePlan {
            kind,
            bounds: Bounds::default(),
            stage1: BoSettings::for_mode(SearchMode::Balanced, 0),
            stage2: SubStage::default_order(kind),
            grids: Grids::default(),
            stage3: BoSettings::for_mode(SearchMode::Balanced, 0),
            presets: Presets::default(),
            omega: crate::config::space::DEFAULT_OMEGA,
            ramp_power: crate::config::space::DEFAULT_RAMP_POWER,
        }
    }

    /// Uses the mode's budgets in both BO stages.
    pub fn with_mode(mut self, mode: SearchMode) -> Self {
        self.stage1 = BoSettings { seed: 0, ..BoSettings::for_mode(mode, 0) };
        self.stage3 = self.stage1.clone();
        self
    }

    pub fn arch_space(&self) -> SearchSpace {
        SearchSpace::architecture(self.kind, self.bounds.clone()).with_ramp(self.omega, self.ramp_power)
    }

    pub fn training_space(&self) -> SearchSpace {
        SearchSpace::training(self.kind, self.bounds.clone()).with_ramp(self.omega, self.ramp_power)
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let plan = |m: String| PipelineError::Plan(m);
        self.stage1.check()?;
        self.stage3.check()?;
        for space in [self.arch_space(), self.training_space()] {
            space.check().map_err(|e| plan(e.to_string()))?;
        }
        let b = &self.bounds;
        if b.cnn.min_layers == 0 || b.cnn.min_layers > b.cnn.max_layers {
            return Err(plan("cnn layer bounds must satisfy 1 <= min_layers <= max_layers".into()));
        }
        if b.cnn.first_channels.0 == 0 || b.cnn.first_channels.0 > b.cnn.first_channels.1 {
            return Err(plan("cnn first-layer channel bounds are empty".into()));
        }
        if b.mlp.min_hidden_layers > b.mlp.max_hidden_layers || b.mlp.nodes.0 == 0 || b.mlp.nodes.0 > b.mlp.nodes.1 {
            return Err(plan("mlp bounds are empty".into()));
        }
        if b.training.batch_size.0 == 0 || b.training.batch_size.0 > b.training.batch_size.1 {
            return Err(plan("batch size bounds are empty".into()));
        }
        let dims = 1 + match self.kind {
            ProblemKind::Cnn => b.cnn.max_layers as usize,
            ProblemKind::Mlp => b.mlp.max_hidden_layers as usize,
        };
        if dims > MAX_DIMS {
            return Err(plan(format!("{dims} sampling dimensions exceed the Sobol table ({MAX_DIMS})")));
        }
        if let Some(s) = self.stage2.iter().find(|s| s.kind() != self.kind) {
            return Err(plan(format!("sub-stage `{s}` does not apply to {} searches", self.kind)));
        }
        Ok(())
    }

    /// Stage-2 evaluations for a given Stage-1 incumbent.
    pub fn stage2_evaluations(&self, stage1_incumbent: &Config) -> usize {
        self.stage2.iter().map(|&s| self.grids.size(s, stage1_incumbent)).sum()
    }

    /// Total objective calls of a search, given the Stage-1 incumbents
    /// carried into each branch.
    pub fn expected_evaluations(&self, carried: &[Config]) -> usize {
        self.stage1.budget() + carried.iter().map(|c| self.stage2_evaluations(c) + self.stage3.budget()).sum::<usize>()
    }
}

/// Mixes a run seed with a tag into an independent stream seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Configs a stage evaluated, in order, and the one it froze.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub labels: Labels,
    pub evaluations: Vec<(Config, Evaluation)>,
    pub incumbent: (Config, Evaluation),
    pub candidates: Vec<CandidateRecord>,
}

impl StageResult {
    /// The `k` best finite evaluations with distinct configs, best first.
    pub fn top_distinct(&self, k: usize) -> Vec<(Config, Evaluation)> {
        let mut idx: Vec<usize> = (0..self.evaluations.len()).filter(|&i| self.evaluations[i].1.score.f.is_finite()).collect();
        idx.sort_by(|&a, &b| self.evaluations[a].1.score.f.total_cmp(&self.evaluations[b].1.score.f).then(a.cmp(&b)));
        let mut out: Vec<(Config, Evaluation)> = Vec::with_capacity(k);
        for i in idx {
            if out.len() == k {
                break;
            }
            let (c, e) = &self.evaluations[i];
            if !out.iter().any(|(o, _)| o == c) {
                out.push((c.clone(), e.clone()));
            }
        }
        out
    }
}

/// One carried Stage-1 incumbent and everything searched from it.
#[derive(Debug, Clone)]
pub struct Branch {
    /// 1-based rank of the Stage-1 config this branch started from.
    pub index: usize,
    pub stage2: StageResult,
    pub stage3: StageResult,
    /// Best Stage-3 configs, `w` of them.
    pub finals: Vec<(Config, Evaluation)>,
}

#[derive(Debug, Clone)]
pub struct FullRun {
    pub stage1: StageResult,
    pub branches: Vec<Branch>,
}

impl FullRun {
    /// Every final config labelled `x{i}{j}`, best first.
    pub fn finals(&self) -> Vec<(String, Config, Evaluation)> {
        let mut out: Vec<(String, Config, Evaluation)> = self
            .branches
            .iter()
            .flat_map(|b| {
                b.finals.iter().enumerate().map(move |(j, (c, e))| (format!("x{}{}", b.index, j + 1), c.clone(), e.clone()))
            })
            .collect();
        out.sort_by(|a, b| a.2.score.f.total_cmp(&b.2.score.f).then(a.0.cmp(&b.0)));
        out
    }

    pub fn best(&self) -> (String, Config, Evaluation) {
        self.finals().swap_remove(0)
    }

    /// Pure-greedy final: the best Stage-3 config of the first branch.
    pub fn greedy(&self) -> &(Config, Evaluation) {
        &self.branches[0].stage3.incumbent
    }
}

/// Runs stages against one evaluator, recording every evaluation.
pub struct Engine<'a> {
    pub plan: &'a StagePlan,
    pub objective: ObjectiveSpec,
    pub evaluator: &'a mut dyn Evaluator,
    pub recorder: &'a mut Recorder,
    /// Run seed; also passed to every evaluation.
    pub seed: u64,
}

/// Lexicographic `(f, complexity)` order, failures last.
fn stage2_key(e: &Evaluation) -> (f64, f64) {
    (e.score.f, e.score.metric_value)
}

fn less_or_equal(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).is_le()
}

impl<'a> Engine<'a> {
    pub fn new(
        plan: &'a StagePlan,
        objective: ObjectiveSpec,
        evaluator: &'a mut dyn Evaluator,
        recorder: &'a mut Recorder,
        seed: u64,
    ) -> Self {
        Engine { plan, objective, evaluator, recorder, seed }
    }

    fn shape(&self) -> crate::config::ProblemShape {
        self.evaluator.contract().dataset.shape
    }

    /// Evaluates and records one config.
    pub fn evaluate(&mut self, labels: &Labels, step: Option<usize>, config: &Config) -> Evaluation {
        let result = self.evaluator.evaluate(config, self.seed);
        let score = breakdown(&result, &self.objective);
        let seq = self.recorder.evaluation(labels, step, config, &result, &score);
        Evaluation { seq, result, score }
    }

    fn check_fatal(&self) -> Result<(), PipelineError> {
        match self.evaluator.fatal() {
            Some(reason) => Err(PipelineError::Evaluator(reason)),
            None => Ok(()),
        }
    }

    fn run_bo<D: PointDecoder + ?Sized>(
        &mut self,
        labels: Labels,
        decoder: &D,
        spec: &KernelSpec,
        settings: &BoSettings,
    ) -> Result<StageResult, PipelineError> {
        let n1 = settings.n1;
        let mut calls = 0usize;
        let outcome = bo_minimize(decoder, spec, settings, |c| {
            let step = (calls >= n1).then(|| calls - n1);
            calls += 1;
            self.evaluate(&labels, step, c)
        })?;
        self.check_fatal()?;
        let best = outcome.best().clone();
        if !best.outcome.score.f.is_finite() {
            return Err(PipelineError::AllFailed(format!("stage {} ({})", labels.stage, labels.branch)));
        }
        self.recorder.incumbent(&labels, best.outcome.seq, best.outcome.score.f);
        Ok(StageResult {
            labels,
            evaluations: outcome.evaluations.into_iter().map(|e| (e.config, e.outcome)).collect(),
            incumbent: (best.config, best.outcome),
            candidates: outcome.candidates,
        })
    }

    /// BO over the core architecture with everything else at presets.
    pub fn run_stage1(&mut self) -> Result<StageResult, PipelineError> {
        let plan = self.plan;
        let shape = self.shape();
        let kind = plan.kind;
        let presets = &plan.presets;
        let decoder = ArchDecoder::new(kind, plan.bounds.clone(), move |w| presets.complete(kind, w, &shape));
        let spec = KernelSpec::from_space(&plan.arch_space())?;
        let settings = BoSettings { seed: derive_seed(self.seed, 1), ..plan.stage1.clone() };
        self.run_bo(Labels::new("main", 1, None), &decoder, &spec, &settings)
    }

    /// Ordered grid sub-stages starting from `start`. The carried config
    /// keeps its known score and loses every tie.
    pub fn run_stage2(&mut self, start: (Config, Evaluation), branch: &str) -> Result<StageResult, PipelineError> {
        let plan = self.plan;
        let shape = self.shape();
        let mut current = start;
        let mut evaluations: Vec<(Config, Evaluation)> = Vec::new();
        for &sub in &plan.stage2 {
            let labels = Labels::new(branch, 2, Some(sub.as_str()));
            let grid = plan.grids.expand(sub, &current.0, &plan.presets, &shape);
            let mut best: Option<usize> = None;
            let first = evaluations.len();
            for config in grid {
                let e = self.evaluate(&labels, None, &config);
                self.check_fatal()?;
                let i = evaluations.len();
                if best.is_none_or(|b: usize| !less_or_equal(stage2_key(&evaluations[b].1), stage2_key(&e))) {
                    best = Some(i);
                }
                evaluations.push((config, e));
            }
            if let Some(b) = best {
                let (c, e): &(Config, Evaluation) = &evaluations[b];
                if less_or_equal(stage2_key(e), stage2_key(&current.1)) {
                    current = (c.clone(), e.clone());
                }
            }
            tracing::debug!(sub = sub.as_str(), evaluated = evaluations.len() - first, f = current.1.score.f, "sub-stage frozen");
            self.recorder.incumbent(&labels, current.1.seq, current.1.score.f);
        }
        Ok(StageResult { labels: Labels::new(branch, 2, None), evaluations, incumbent: current, candidates: Vec::new() })
    }

    /// BO over training hyperparameters around the frozen architecture.
    pub fn run_stage3(&mut self, frozen: &Config, branch: &str, seed_tag: u64) -> Result<StageResult, PipelineError> {
        let plan = self.plan;
        let decoder = TrainingDecoder::new(plan.bounds.training.clone(), frozen.arch.clone());
        let spec = KernelSpec::from_space(&plan.training_space())?;
        let settings = BoSettings { seed: derive_seed(derive_seed(self.seed, 3), seed_tag), ..plan.stage3.clone() };
        self.run_bo(Labels::new(branch, 3, None), &decoder, &spec, &settings)
    }

    /// All three stages. `width` 1 is the pure greedy search.
    pub fn run_full(&mut self, width: usize) -> Result<FullRun, PipelineError> {
        if width == 0 {
            return Err(PipelineError::Plan("greedy width must be at least 1".into()));
        }
        self.plan.check()?;
        let stage1 = self.run_stage1()?;
        let mut branches = Vec::with_capacity(width);
        for (i, start) in stage1.top_distinct(width).into_iter().enumerate() {
            let name = format!("b{}", i + 1);
            let stage2 = self.run_stage2(start, &name)?;
            let stage3 = self.run_stage3(&stage2.incumbent.0, &name, i as u64)?;
            let finals = stage3.top_distinct(width);
            branches.push(Branch { index: i + 1, stage2, stage3, finals });
        }
        let run = FullRun { stage1, branches };
        let (_, _, best) = run.best();
        self.recorder.incumbent(&Labels::new("final", 3, None), best.seq, best.score.f);
        self.recorder.finish()?;
        Ok(run)
    }
}

/// Measures `c0` on the most complex config of the plan's space and
/// records the calibration run as stage 0.
pub fn calibrate(
    plan: &StagePlan,
    evaluator: &mut dyn Evaluator,
    metric: ComplexityMetric,
    seed: u64,
    recorder: &mut Recorder,
) -> Result<f64, PipelineError> {
    let shape = evaluator.contract().dataset.shape;
    let reference = plan.presets.maximal(plan.kind, &plan.bounds, &shape);
    let calibration = calibrate_c0(&reference, evaluator, metric, seed)?;
    let spec = ObjectiveSpec::new(0.0, metric, calibration.c0)?;
    let score = breakdown(&calibration.result, &spec);
    recorder.evaluation(&Labels::new("calibration", 0, None), None, &reference, &calibration.result, &score);
    Ok(calibration.c0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluators::synthetic::{SyntheticEvaluator, SyntheticObjective};

    fn quick(kind: ProblemKind) -> StagePlan {
        let mut plan = StagePlan::new(kind);
        plan.stage1.n3 = 100;
        plan.stage3.n3 = 100;
        plan
    }

    fn run(plan: &StagePlan, objective: SyntheticObjective, width: usize, seed: u64) -> (FullRun, Recorder) {
        let mut eval = SyntheticEvaluator::new(objective, 5);
        let mut rec = Recorder::in_memory();
        let c0 = calibrate(plan, &mut eval, ComplexityMetric::TrainTime, seed, &mut rec).unwrap();
        let spec = ObjectiveSpec::new(0.1, ComplexityMetric::TrainTime, c0).unwrap();
        let out = Engine::new(plan, spec, &mut eval, &mut rec, seed).run_full(width).unwrap();
        (out, rec)
    }

    #[test]
    fn mlp_budget() {
        let plan = quick(ProblemKind::Mlp);
        let (out, rec) = run(&plan, SyntheticObjective::mlp_smooth(), 1, 3);
        assert_eq!(out.stage1.evaluations.len(), 30);
        assert_eq!(out.branches[0].stage2.evaluations.len(), 5);
        assert_eq!(out.branches[0].stage3.evaluations.len(), 30);
        assert_eq!(rec.evaluations().count(), 1 + 65);
        assert_eq!(plan.expected_evaluations(&[out.stage1.incumbent.0.clone()]), 65);
    }

    #[test]
    fn cnn_chain_integrity() {
        let plan = quick(ProblemKind::Cnn);
        let (out, rec) = run(&plan, SyntheticObjective::cnn_smooth(), 1, 5);
        let b = &out.branches[0];
        let s1 = &out.stage1.incumbent.0;
        assert_eq!(b.stage2.evaluations.len(), plan.stage2_evaluations(s1));
        assert_eq!(b.stage3.incumbent.0.arch, b.stage2.incumbent.0.arch);
        let s2 = b.stage2.incumbent.0.arch.as_cnn().unwrap();
        assert_eq!(s2.channels, s1.arch.as_cnn().unwrap().channels);
        assert_eq!(rec.evaluations().count(), 1 + plan.expected_evaluations(&[s1.clone()]));
        assert!(b.stage2.incumbent.1.score.f <= out.stage1.incumbent.1.score.f);
    }

    #[test]
    fn width_three_gives_nine_finals() {
        let plan = quick(ProblemKind::Mlp);
        let (out, _) = run(&plan, SyntheticObjective::mlp_interacting(), 3, 8);
        assert_eq!(out.branches.len(), 3);
        assert_eq!(out.finals().len(), 9);
        let (one, _) = run(&plan, SyntheticObjective::mlp_interacting(), 1, 8);
        assert_eq!(one.greedy().0, out.greedy().0);
    }

    #[test]
    fn rejects_mismatched_sub_stage() {
        let mut plan = StagePlan::new(ProblemKind::Mlp);
        plan.stage2 = vec![SubStage::BatchNorm];
        assert!(matches!(plan.check(), Err(PipelineError::Plan(_))));
    }

    #[test]
    fn seeds_differ_by_tag() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 3));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
    }
}
