//! Harnesses built on the stages: search transfer and free ensembling.

use serde::{Deserialize, Serialize};

use super::{Engine, PipelineError, StageResult};
use crate::config::Config;
use crate::persist::trace::Labels;

/// Reruns only Stage 3 for `source`'s architecture against the engine's
/// evaluator. Incompatible architectures are rejected before any
/// evaluation is spent.
pub fn search_transfer(engine: &mut Engine<'_>, source: &Config) -> Result<StageResult, PipelineError> {
    engine.evaluator.preflight(source)?;
    if source.kind() != engine.plan.kind {
        return Err(PipelineError::Plan(format!("source is a {} config, the plan searches {}", source.kind(), engine.plan.kind)));
    }
    let out = engine.run_stage3(source, "transfer", 0)?;
    engine.recorder.incumbent(&Labels::new("final", 3, None), out.incumbent.1.seq, out.incumbent.1.score.f);
    engine.recorder.finish()?;
    Ok(out)
}

/// One Stage-3 evaluation offered to the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCandidate {
    pub seq: usize,
    pub config: Config,
    pub f: f64,
    pub n_params: u64,
}

/// How members combine at inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteProcedure {
    pub method: String,
    pub tie_break: String,
}

impl Default for VoteProcedure {
    fn default() -> Self {
        VoteProcedure { method: "majority".into(), tie_break: "highest_mean_softmax".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<EnsembleCandidate>,
    /// Members share one architecture, so this is `n * n_params`.
    pub effective_params: u64,
    pub vote: VoteProcedure,
}

/// The `n` lowest-f Stage-3 configs. `budget` is the number of Stage-3
/// evaluations already paid for; asking for more members is an error.
pub fn ensemble_select(candidates: &[EnsembleCandidate], n: usize, budget: usize) -> Result<Ensemble, PipelineError> {
    if n > budget {
        return Err(PipelineError::EnsembleTooLarge { n, budget });
    }
    if n == 0 {
        return Err(PipelineError::Plan("an ensemble needs at least one member".into()));
    }
    let mut ranked: Vec<&EnsembleCandidate> = candidates.iter().filter(|c| c.f.is_finite()).collect();
    ranked.sort_by(|a, b| a.f.total_cmp(&b.f).then(a.seq.cmp(&b.seq)));
    if ranked.len() < n {
        return Err(PipelineError::Plan(format!("only {} successful Stage-3 evaluations for {n} members", ranked.len())));
    }
    let members: Vec<EnsembleCandidate> = ranked.into_iter().take(n).cloned().collect();
    let arch = &members[0].config.arch;
    if members.iter().any(|m| &m.config.arch != arch) {
        return Err(PipelineError::Plan("ensemble members differ in architecture".into()));
    }
    let effective_params = members[0].n_params * n as u64;
    Ok(Ensemble { members, effective_params, vote: VoteProcedure::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::*;

    fn candidate(seq: usize, f: f64, eta: f64) -> EnsembleCandidate {
        EnsembleCandidate {
            seq,
            config: Config {
                arch: Arch::Mlp(MlpArch { hidden: vec![30], drop_prob: 0.2 }),
                training: TrainingHp { eta, lambda: 0.0, batch_size: 64 },
            },
            f,
            n_params: 1000,
        }
    }

    #[test]
    fn selects_lowest_f() {
        let pool = vec![candidate(0, 0.3, 1e-3), candidate(1, 0.1, 1e-2), candidate(2, f64::INFINITY, 1e-4), candidate(3, 0.2, 1e-4)];
        let one = ensemble_select(&pool, 1, 30).unwrap();
        assert_eq!(one.members[0].seq, 1);
        let three = ensemble_select(&pool, 3, 30).unwrap();
        assert_eq!(three.members.iter().map(|m| m.seq).collect::<Vec<_>>(), vec![1, 3, 0]);
        assert_eq!(three.effective_params, 3000);
        assert_eq!(three.vote.method, "majority");
    }

    #[test]
    fn budget_boundary() {
        let pool: Vec<_> = (0..30).map(|i| candidate(i, i as f64, 1e-3)).collect();
        assert!(ensemble_select(&pool, 30, 30).is_ok());
        assert!(matches!(ensemble_select(&pool, 31, 30), Err(PipelineError::EnsembleTooLarge { n: 31, budget: 30 })));
    }
}
