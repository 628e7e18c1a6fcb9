use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use frugal::bayesopt::SearchMode;
use frugal::evaluators::Evaluator;
use frugal::objective::{ComplexityMetric, ObjectiveError, ObjectiveSpec};
use frugal::persist::manifest::{FactoryError, StageSection};
use frugal::persist::run::{
    calibrate_cached, find_runs, load_trace, search_to_dir, stage2_incumbent, stage3_candidates, tradeoff_rows,
    transfer_to_dir, write_tradeoff_csv,
};
use frugal::persist::{Manifest, ManifestError, RunError, RunRequest, Summary};
use frugal::pipeline::{ensemble_select, PipelineError, StagePlan};
use tracing_subscriber::EnvFilter;

/// Default output root when neither `--out` nor the manifest names one.
const OUT_ENV: &str = "FRUGAL_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "frugal", version, about = "Complexity-aware architecture and hyperparameter search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunFlags {
    /// Run manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated complexity weights; one run per value.
    #[arg(long, value_delimiter = ',')]
    wc: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluator id, overriding the manifest.
    #[arg(long)]
    evaluator: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the three-stage search.
    Search {
        #[command(flatten)]
        run: RunFlags,
        /// Search mode for both BO stages, overriding the manifest.
        #[arg(long)]
        mode: Option<SearchMode>,
        /// Stage-1 incumbents carried forward.
        #[arg(long)]
        greedy_width: Option<usize>,
    },
    /// Run the search once per mode and seed and tabulate the final scores.
    Compare {
        #[command(flatten)]
        run: RunFlags,
        /// Comma-separated search modes.
        #[arg(long, value_delimiter = ',', default_value = "random,grid,balanced,extreme")]
        mode: Vec<SearchMode>,
        /// Seeds per mode, counting up from the base seed.
        #[arg(long, default_value_t = 1)]
        repeats: u64,
    },
    /// Rerun Stage 3 of a finished run's architecture on another evaluator.
    Transfer {
        #[command(flatten)]
        run: RunFlags,
        /// Finished source run directory.
        #[arg(long)]
        source: PathBuf,
    },
    /// Pick the n best Stage-3 configs of a finished run.
    Ensemble {
        /// Finished run directory.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "b1")]
        branch: String,
        /// Where to write the selection (default `<run>/ensemble.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the accuracy/complexity tradeoff of finished runs as CSV.
    Export {
        /// Run directories, or roots containing them.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// CSV file (default stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// An error the user can fix by changing the invocation.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn exit_code(err: &anyhow::Error) -> u8 {
    fn pipeline(e: &PipelineError) -> u8 {
        match e {
            PipelineError::Evaluator(_) | PipelineError::AllFailed(_) => 2,
            PipelineError::Objective(ObjectiveError::CalibrationFailed(_) | ObjectiveError::BadReference(_)) => 2,
            PipelineError::Plan(_) | PipelineError::Incompatible(_) | PipelineError::EnsembleTooLarge { .. } => 1,
            PipelineError::Objective(_) => 1,
            _ => 3,
        }
    }
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<ManifestError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<FactoryError>() {
            return if matches!(e, FactoryError::Protocol(_)) { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<RunError>() {
            return match e {
                RunError::Pipeline(p) => pipeline(p),
                RunError::Trace(_) => 1,
                RunError::Io { .. } => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return pipeline(e);
        }
    }
    3
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("FRUGAL_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Search { run, mode, greedy_width } => {
            let mut manifest = load(&run)?;
            if let Some(mode) = mode {
                apply_mode(&mut manifest, mode);
            }
            if let Some(w) = greedy_width {
                manifest.greedy_width = w;
            }
            manifest.check()?;
            let root = out_dir(&run, &manifest, &format!("search-{}-seed{}", manifest.kind, manifest.seed));
            let mut evaluator = manifest.evaluator.build()?;
            let summaries = sweep(&manifest, evaluator.as_mut(), &root)?;
            for s in &summaries {
                println!("w_c={} f={:.6} acc={:.4} t_tr={:.6}s n_params={}", s.header.w_c, s.final_config.f, s.final_config.best_val_acc, s.final_config.t_tr_sec, s.final_config.n_params);
            }
            println!("{}", root.display());
            Ok(())
        }
        Command::Compare { run, mode, repeats } => {
            let base = load(&run)?;
            if mode.is_empty() || repeats == 0 {
                return Err(Usage("compare needs at least one mode and one repeat".into()).into());
            }
            let root = out_dir(&run, &base, &format!("compare-{}-seed{}", base.kind, base.seed));
            let mut evaluator = base.evaluator.build()?;
            let mut table = csv::Writer::from_path(root_file(&root, "compare.csv")?)?;
            table.write_record(["mode", "seed", "w_c", "f", "acc", "t_tr_sec", "n_params", "evaluations"])?;
            for &m in &mode {
                for i in 0..repeats {
                    let mut manifest = base.clone();
                    apply_mode(&mut manifest, m);
                    manifest.seed = base.seed + i;
                    let dir = root.join(m.as_str()).join(format!("seed_{}", manifest.seed));
                    for s in sweep(&manifest, evaluator.as_mut(), &dir)? {
                        let fc = &s.final_config;
                        table.serialize((m.as_str(), s.header.seed, s.header.w_c, fc.f, fc.best_val_acc, fc.t_tr_sec, fc.n_params, s.evaluations))?;
                        println!("{:<9} seed={} w_c={} f={:.6}", m.as_str(), s.header.seed, s.header.w_c, fc.f);
                    }
                }
            }
            table.flush()?;
            println!("{}", root.display());
            Ok(())
        }
        Command::Transfer { run, source } => {
            let manifest = load(&run)?;
            let records = load_trace(&source).with_context(|| format!("reading source run {}", source.display()))?;
            let source_summary = Summary::load(&source)?;
            let arch_config = stage2_incumbent(&records, "b1")?;
            let source_id = source.canonicalize().unwrap_or(source.clone()).display().to_string();
            let root = out_dir(&run, &manifest, &format!("transfer-{}-seed{}", manifest.kind, manifest.seed));
            let mut evaluator = manifest.evaluator.build()?;
            evaluator.preflight(&arch_config).map_err(PipelineError::from)?;
            let plan = manifest.plan()?;
            let c0 = reference(&manifest, &plan, evaluator.as_mut(), &root)?;
            let w_c = single_wc(&manifest)?;
            let objective = ObjectiveSpec::new(w_c, manifest.objective.metric, c0)?;
            let request = RunRequest { plan: &plan, objective, seed: manifest.seed, greedy_width: 1, manifest_toml: Some(manifest.to_toml()) };
            let s = transfer_to_dir(&request, &arch_config, &source_id, evaluator.as_mut(), &root)?;
            println!("variant  f          acc     t_tr_sec");
            let (n, t) = (&source_summary.final_config, &s.final_config);
            println!("native   {:<10.6} {:<7.4} {:.6}", n.f, n.best_val_acc, n.t_tr_sec);
            println!("transfer {:<10.6} {:<7.4} {:.6}", t.f, t.best_val_acc, t.t_tr_sec);
            println!("{}", root.display());
            Ok(())
        }
        Command::Ensemble { run, n, branch, out } => {
            let records = load_trace(&run)?;
            let candidates = stage3_candidates(&records, &branch)?;
            if candidates.is_empty() {
                return Err(Usage(format!("run has no Stage-3 evaluations in branch `{branch}`")).into());
            }
            let ensemble = ensemble_select(&candidates, n, candidates.len())?;
            let path = out.unwrap_or_else(|| run.join("ensemble.json"));
            fs::write(&path, serde_json::to_string_pretty(&ensemble)?).with_context(|| format!("writing {}", path.display()))?;
            println!("{} members, effective n_params {}", ensemble.members.len(), ensemble.effective_params);
            println!("{}", path.display());
            Ok(())
        }
        Command::Export { runs, out } => {
            let dirs = find_runs(&runs).context("scanning run directories")?;
            if dirs.is_empty() {
                return Err(Usage("no finished runs found".into()).into());
            }
            let summaries = dirs.iter().map(|d| Summary::load(d)).collect::<Result<Vec<_>, _>>()?;
            let rows = tradeoff_rows(&summaries);
            match out {
                Some(path) => write_tradeoff_csv(&rows, fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?,
                None => write_tradeoff_csv(&rows, std::io::stdout().lock())?,
            }
            Ok(())
        }
    }
}

fn load(flags: &RunFlags) -> Result<Manifest> {
    let mut manifest = Manifest::load(&flags.manifest)?;
    if let Some(wc) = &flags.wc {
        manifest.objective.w_c = wc.clone();
    }
    if let Some(seed) = flags.seed {
        manifest.seed = seed;
    }
    if let Some(id) = &flags.evaluator {
        manifest.evaluator.id = id.clone();
    }
    manifest.check()?;
    Ok(manifest)
}

fn apply_mode(manifest: &mut Manifest, mode: SearchMode) {
    manifest.stage1 = StageSection { mode, n1: None, n2: None, n3: manifest.stage1.n3, ..manifest.stage1.clone() };
    manifest.stage3 = StageSection { mode, n1: None, n2: None, n3: manifest.stage3.n3, ..manifest.stage3.clone() };
}

fn out_dir(flags: &RunFlags, manifest: &Manifest, name: &str) -> PathBuf {
    if let Some(out) = &flags.out {
        return out.clone();
    }
    if let Some(out) = &manifest.out_dir {
        return out.clone();
    }
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")).join(name)
}

fn root_file(root: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    Ok(root.join(name))
}

fn single_wc(manifest: &Manifest) -> Result<f64> {
    match manifest.objective.w_c.as_slice() {
        [w] => Ok(*w),
        _ => bail!(Usage("transfer takes a single w_c".into())),
    }
}

fn reference(manifest: &Manifest, plan: &StagePlan, evaluator: &mut dyn Evaluator, root: &Path) -> Result<f64> {
    let metric: ComplexityMetric = manifest.objective.metric;
    Ok(match manifest.objective.c0 {
        Some(c0) => c0,
        None => calibrate_cached(plan, evaluator, metric, manifest.seed, root)?,
    })
}

/// One run per w_c. A single weight runs directly in `root`; a sweep gets
/// one `wc_<value>` directory per weight. Calibration is shared.
fn sweep(manifest: &Manifest, evaluator: &mut dyn Evaluator, root: &Path) -> Result<Vec<Summary>> {
    let plan = manifest.plan()?;
    let c0 = reference(manifest, &plan, evaluator, root)?;
    let mut out = Vec::new();
    for &w_c in &manifest.objective.w_c {
        let dir = if manifest.objective.w_c.len() == 1 { root.to_path_buf() } else { root.join(format!("wc_{w_c}")) };
        let mut resolved = manifest.clone();
        resolved.objective.w_c = vec![w_c];
        resolved.objective.c0 = Some(c0);
        let objective = ObjectiveSpec::new(w_c, manifest.objective.metric, c0)?;
        let request = RunRequest {
            plan: &plan,
            objective,
            seed: manifest.seed,
            greedy_width: manifest.greedy_width,
            manifest_toml: Some(resolved.to_toml()),
        };
        let summary = search_to_dir(&request, evaluator, &dir).with_context(|| format!("run in {}", dir.display()))?;
        out.push(summary);
    }
    Ok(out)
}
