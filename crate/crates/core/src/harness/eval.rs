use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, EnvSpec};
use crate::policy::{Decoding, PolicyNet};
use crate::seeds::{derive_seed, Domain};
use crate::trajectory::{outcome_reward, rollout, EpisodeTask, RolloutError};

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub episode: usize,
    pub task_seed: u64,
    pub success: bool,
    pub score: f64,
    pub length: usize,
}

/// Aggregates over fresh seeded episodes; all recomputable from `rows`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: EnvKind,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_score: f64,
    pub mean_episode_length: f64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn from_rows(env: EnvKind, seed: u64, rows: Vec<EvalRow>) -> Self {
        let n = rows.len();
        let (success_rate, mean_score, mean_episode_length) = if n == 0 {
            (0.0, 0.0, 0.0)
        } else {
            let nf = n as f64;
            (
                rows.iter().filter(|r| r.success).count() as f64 / nf,
                rows.iter().map(|r| r.score).sum::<f64>() / nf,
                rows.iter().map(|r| r.length).sum::<usize>() as f64 / nf,
            )
        };
        Self {
            env,
            seed,
            success_rate,
            mean_score,
            mean_episode_length,
            rows,
        }
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["episode", "task_seed", "success", "score", "length"])?;
        for r in &self.rows {
            w.write_record([
                r.episode.to_string(),
                r.task_seed.to_string(),
                u8::from(r.success).to_string(),
                r.score.to_string(),
                r.length.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn summary(&self) -> String {
        format!(
            "env={} seed={} episodes={} success_rate={:.4} mean_score={:.4} mean_episode_length={:.3}",
            self.env,
            self.seed,
            self.rows.len(),
            self.success_rate,
            self.mean_score,
            self.mean_episode_length
        )
    }

    /// CSV rows plus a one-line summary next to them.
    pub fn write(&self, csv_path: &Path, summary_path: &Path) -> std::io::Result<()> {
        self.write_csv(csv_path)?;
        let mut f = std::fs::File::create(summary_path)?;
        writeln!(f, "{}", self.summary())
    }
}

/// Task seed of evaluation episode `i` for evaluation seed `seed`.
pub fn eval_task_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, Domain::EvalTask, i as u64, 0)
}

/// Plays `episodes` fresh tasks, one rollout each.
pub fn evaluate(net: &PolicyNet, spec: &EnvSpec, episodes: usize, seed: u64, decoding: Decoding) -> Result<EvalReport, RolloutError> {
    let tasks: Vec<EpisodeTask> = (0..episodes)
        .map(|i| EpisodeTask {
            episode_id: format!("eval-{i:05}"),
            task_seed: eval_task_seed(seed, i),
            sample_seed: derive_seed(seed, Domain::EvalSample, i as u64, 0),
        })
        .collect();
    let trajs = rollout(net, 0, spec, &tasks, decoding)?;
    let rows = trajs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let o = outcome_reward(t).expect("rollout plays every episode to completion");
            EvalRow {
                episode: i,
                task_seed: t.task_seed,
                success: o.success,
                score: o.score,
                length: t.len(),
            }
        })
        .collect();
    Ok(EvalReport::from_rows(spec.kind(), seed, rows))
}

/// Mean and population standard deviation, as reported across seeds.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}
