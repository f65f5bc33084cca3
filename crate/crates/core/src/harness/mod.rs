//! Experiment configs, metric files and the commands behind the `hamdpo`
//! binary.

mod config;
mod metrics;

pub use config::{EnvConfig, ExperimentConfig, OUTPUT_DIR_ENV};
pub use metrics::{
    metrics_header, MetricsWriter, CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE, TIMING_FILE,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{Env, MultiAgentEnv};
use crate::error::{Error, Result};
use crate::tabular::verify::{run_suite, VerificationReport, VerifyOptions};
use crate::trainer::{init_state, iteration, Algorithm, IterationMetrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Window for `final_mean_return`.
pub const FINAL_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub iteration: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub sgd_steps: usize,
    pub iterations_requested: usize,
    pub iterations_completed: usize,
    /// Mean of `mean_return` over the last completed iterations (at most
    /// [`FINAL_WINDOW`]). Absent when no iteration completed.
    pub final_mean_return: Option<f64>,
    pub env_steps: u64,
    pub grad_clip_events: usize,
    pub clamped_actions: usize,
    pub aborted: Option<Abort>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.aborted.is_some() {
            EXIT_FAILURE
        } else {
            EXIT_OK
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Exit status for an error raised outside a training iteration.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// A config together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let config = ExperimentConfig::load(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn build_env(&self) -> Result<Env> {
        self.config.env.build(&self.base_dir)
    }
}

/// Runs every iteration of `exp`, writing the metric files, the summary and
/// a final checkpoint into `out_dir`. A failing iteration ends the run and
/// is recorded in the summary; only setup and I/O failures are returned as
/// errors.
pub fn train_into(
    exp: &Experiment,
    out_dir: &Path,
    mut on_iteration: impl FnMut(&IterationMetrics),
) -> Result<RunSummary> {
    let cfg = &exp.config;
    cfg.validate()?;
    let env = exp.build_env()?;
    let spec = env.spec().clone();
    let trainer = &cfg.trainer;
    let mut state = init_state(&spec, trainer).map_err(|e| Error::Config(e.to_string()))?;
    let hash = cfg.hash();

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut writer = MetricsWriter::create(out_dir, spec.n_agents, &hash, cfg.flush_interval)?;
    let mut returns = Vec::with_capacity(trainer.iterations);
    let mut grad_clip_events = 0;
    let mut clamped_actions = 0;
    let mut aborted = None;
    for k in 0..trainer.iterations {
        let start = Instant::now();
        match iteration(&mut state, &env, trainer, k) {
            Ok(m) => {
                writer.record(&m, start.elapsed().as_millis())?;
                returns.push(m.mean_return);
                grad_clip_events += m.grad_clips;
                clamped_actions += m.clamped_actions;
                on_iteration(&m);
            }
            Err(e) => {
                aborted = Some(Abort {
                    iteration: k,
                    error: e.to_string(),
                });
                break;
            }
        }
    }
    writer.flush()?;
    state.save(&out_dir.join(CHECKPOINT_FILE))?;

    let tail = &returns[returns.len().saturating_sub(FINAL_WINDOW)..];
    let summary = RunSummary {
        config_hash: hash,
        seed: trainer.seed,
        algorithm: trainer.algorithm,
        sgd_steps: trainer.sgd_steps,
        iterations_requested: trainer.iterations,
        iterations_completed: returns.len(),
        final_mean_return: (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64),
        env_steps: state.env_steps,
        grad_clip_events,
        clamped_actions,
        aborted,
    };
    let path = out_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// `train <config>`: loads the config and trains into its output directory.
pub fn run_train(
    config_path: &Path,
    on_iteration: impl FnMut(&IterationMetrics),
) -> Result<RunSummary> {
    let exp = Experiment::load(config_path)?;
    let out = exp.config.output_dir.clone();
    train_into(&exp, &out, on_iteration)
}

/// `ablate <config> --sgd-steps ...`: the same seeded experiment once per
/// value of `g`, each written to `<output_dir>/g<g>/`.
pub fn run_ablate(
    config_path: &Path,
    sgd_steps: &[usize],
    mut on_iteration: impl FnMut(usize, &IterationMetrics),
) -> Result<Vec<(usize, RunSummary)>> {
    if sgd_steps.is_empty() {
        return Err(Error::InvalidArgument("at least one sgd-steps value is required".into()));
    }
    if let Some(g) = sgd_steps.iter().find(|&&g| g == 0) {
        return Err(Error::InvalidArgument(format!("sgd-steps values must be at least 1, got {g}")));
    }
    let exp = Experiment::load(config_path)?;
    let mut out = Vec::with_capacity(sgd_steps.len());
    for &g in sgd_steps {
        let mut run = exp.clone();
        run.config.trainer.sgd_steps = g;
        let dir = exp.config.output_dir.join(format!("g{g}"));
        let summary = train_into(&run, &dir, |m| on_iteration(g, m))?;
        out.push((g, summary));
    }
    Ok(out)
}

/// `verify`: runs the oracle suite and writes the report to `out`. The
/// report is written whether or not every identity passes.
pub fn run_verify(opts: &VerifyOptions, out: &Path) -> Result<VerificationReport> {
    let report = run_suite(opts)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    report.write(out)?;
    Ok(report)
}
