//! Metric files written by a training run.
//!
//! `metrics.csv` columns, in order:
//!
//! | column            | meaning                                              |
//! |-------------------|------------------------------------------------------|
//! | `iteration`       | zero-based iteration index                           |
//! | `env_steps`       | environment steps collected so far                   |
//! | `mean_return`     | mean undiscounted episode return of the batch        |
//! | `policy_loss`     | mean over agents of the final per-agent loss         |
//! | `critic_loss`     | critic regression loss after its update              |
//! | `entropy`         | mean policy entropy on the batch, before the update  |
//! | `stepsize`        | mirror descent step size `t_k`                       |
//! | `grad_clips`      | gradient clipping events in this iteration           |
//! | `clamped_actions` | continuous actions clamped to their bounds           |
//! | `kl_0` ... `kl_{n-1}` | mean `KL(new || old)` of each agent              |
//! | `config_hash`     | hash of the experiment config                        |
//!
//! Wall-clock times go to `timing.csv` (`iteration,wall_time_ms,config_hash`)
//! so that `metrics.csv` is reproducible byte for byte.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::IterationMetrics;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub fn metrics_header(n_agents: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "iteration",
        "env_steps",
        "mean_return",
        "policy_loss",
        "critic_loss",
        "entropy",
        "stepsize",
        "grad_clips",
        "clamped_actions",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..n_agents).map(|i| format!("kl_{i}")));
    cols.push("config_hash".into());
    cols
}

fn metrics_row(m: &IterationMetrics, hash: &str) -> Vec<String> {
    let mut row = vec![
        m.iteration.to_string(),
        m.env_steps.to_string(),
        m.mean_return.to_string(),
        m.policy_loss.to_string(),
        m.critic_loss.to_string(),
        m.entropy.to_string(),
        m.stepsize.to_string(),
        m.grad_clips.to_string(),
        m.clamped_actions.to_string(),
    ];
    row.extend(m.agent_kl.iter().map(|x| x.to_string()));
    row.push(hash.to_string());
    row
}

pub struct MetricsWriter {
    metrics: csv::Writer<BufWriter<File>>,
    timing: csv::Writer<BufWriter<File>>,
    hash: String,
    flush_interval: usize,
    rows: usize,
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

impl MetricsWriter {
    /// Creates both files in `dir` and writes their headers.
    pub fn create(dir: &Path, n_agents: usize, hash: &str, flush_interval: usize) -> Result<Self> {
        let mut metrics = create(&dir.join(METRICS_FILE))?;
        metrics.write_record(metrics_header(n_agents))?;
        let mut timing = create(&dir.join(TIMING_FILE))?;
        timing.write_record(["iteration", "wall_time_ms", "config_hash"])?;
        let mut w = Self {
            metrics,
            timing,
            hash: hash.to_string(),
            flush_interval: flush_interval.max(1),
            rows: 0,
        };
        w.flush()?;
        Ok(w)
    }

    pub fn record(&mut self, m: &IterationMetrics, wall_time_ms: u128) -> Result<()> {
        self.metrics.write_record(metrics_row(m, &self.hash))?;
        self.timing.write_record([
            m.iteration.to_string(),
            wall_time_ms.to_string(),
            self.hash.clone(),
        ])?;
        self.rows += 1;
        if self.rows % self.flush_interval == 0 {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        let wrap = |e: std::io::Error| Error::Csv(csv::Error::from(e));
        self.metrics.flush().map_err(wrap)?;
        self.timing.flush().map_err(wrap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_has_one_kl_column_per_agent() {
        let h = metrics_header(3);
        assert_eq!(h.len(), 9 + 3 + 1);
        assert_eq!(h[9], "kl_0");
        assert_eq!(h[11], "kl_2");
        assert_eq!(h.last().unwrap(), "config_hash");
    }
}
