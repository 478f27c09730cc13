//! Operational surface: evaluation, replay, gradient audit, curves, the
//! ablation matrix, multi-seed aggregation and the command line.

pub mod cli;
pub mod curves;
pub mod eval;
pub mod gradcheck;
pub mod replay;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::advantage::EpisodeEstimator;
use crate::policy::PolicyError;
use crate::trainer::{read_manifest, Ablation, RunPaths, TrainConfig, TrainError};

use self::eval::mean_std;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad flags or flag combinations; exit status 1.
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl HarnessError {
    /// 1 for usage errors, 2 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Train(TrainError::Config(_)) => 1,
            _ => 2,
        }
    }
}

/// One cell of the method × ablation × estimator grid.
#[derive(Debug, Clone)]
pub struct MatrixCell {
    pub istar: bool,
    pub ablation: Ablation,
    pub algo: EpisodeEstimator,
    /// The runnable configuration, or why the cell is rejected.
    pub config: Result<TrainConfig, String>,
}

impl MatrixCell {
    pub fn label(&self) -> String {
        format!(
            "istar={} ablation={} algo={}",
            if self.istar { "on" } else { "off" },
            self.ablation,
            self.algo
        )
    }
}

pub const ABLATIONS: [Ablation; 4] = [Ablation::None, Ablation::Merged, Ablation::TokenLevel, Ablation::GtStep];
pub const ESTIMATORS: [EpisodeEstimator; 3] = [EpisodeEstimator::Grpo, EpisodeEstimator::Rloo, EpisodeEstimator::Reinforcepp];

/// Every flag combination on top of `base`, each validated.
pub fn ablation_matrix(base: &TrainConfig) -> Vec<MatrixCell> {
    let mut out = Vec::new();
    for istar in [true, false] {
        for ablation in ABLATIONS {
            for algo in ESTIMATORS {
                let cfg = TrainConfig {
                    istar,
                    ablation,
                    algo,
                    ..base.clone()
                };
                let config = cfg.validate().map(|_| cfg).map_err(|e| e.to_string());
                out.push(MatrixCell {
                    istar,
                    ablation,
                    algo,
                    config,
                });
            }
        }
    }
    out
}

/// Final evaluation of one seed, recomputed from its per-episode rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub dir: PathBuf,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_score: f64,
    pub mean_episode_length: f64,
}

/// Mean ± population std across the seeds of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub label: String,
    pub seeds: Vec<SeedResult>,
    pub success_mean: f64,
    pub success_std: f64,
    pub score_mean: f64,
    pub score_std: f64,
}

/// Reads `final_eval.csv` of a finished run and recomputes its aggregates.
pub fn seed_result(dir: &Path) -> Result<(String, SeedResult), HarnessError> {
    let paths = RunPaths::new(dir);
    let manifest = read_manifest(&paths)?;
    let mut reader = csv::Reader::from_path(paths.final_eval_csv())?;
    let (mut n, mut wins, mut score, mut len) = (0usize, 0usize, 0.0, 0usize);
    let bad = |msg: String| HarnessError::Format {
        path: paths.final_eval_csv(),
        msg,
    };
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad(format!("row {n} lacks column {i}")));
        wins += usize::from(field(2)? == "1");
        score += field(3)?.parse::<f64>().map_err(|e| bad(e.to_string()))?;
        len += field(4)?.parse::<usize>().map_err(|e| bad(e.to_string()))?;
        n += 1;
    }
    let nf = n.max(1) as f64;
    Ok((
        manifest.label,
        SeedResult {
            dir: dir.to_path_buf(),
            seed: manifest.seed,
            success_rate: wins as f64 / nf,
            mean_score: score / nf,
            mean_episode_length: len as f64 / nf,
        },
    ))
}

/// Groups finished runs by method label.
pub fn aggregate(dirs: &[PathBuf]) -> Result<Vec<AggregateRow>, HarnessError> {
    let mut by_label: BTreeMap<String, Vec<SeedResult>> = BTreeMap::new();
    for d in dirs {
        let (label, r) = seed_result(d)?;
        by_label.entry(label).or_default().push(r);
    }
    Ok(by_label
        .into_iter()
        .map(|(label, mut seeds)| {
            seeds.sort_by_key(|s| s.seed);
            let succ: Vec<f64> = seeds.iter().map(|s| s.success_rate).collect();
            let score: Vec<f64> = seeds.iter().map(|s| s.mean_score).collect();
            let (success_mean, success_std) = mean_std(&succ);
            let (score_mean, score_std) = mean_std(&score);
            AggregateRow {
                label,
                seeds,
                success_mean,
                success_std,
                score_mean,
                score_std,
            }
        })
        .collect())
}

/// Plain-text table of [`aggregate`] output.
pub fn format_aggregate(rows: &[AggregateRow]) -> String {
    let mut s = format!("{:<28} {:>5} {:>17} {:>17}  per-seed success\n", "method", "seeds", "success", "score");
    for r in rows {
        let per: Vec<String> = r.seeds.iter().map(|x| format!("{}:{:.3}", x.seed, x.success_rate)).collect();
        s.push_str(&format!(
            "{:<28} {:>5} {:>8.3} ± {:<6.3} {:>8.3} ± {:<6.3}  {}\n",
            r.label,
            r.seeds.len(),
            r.success_mean,
            r.success_std,
            r.score_mean,
            r.score_std,
            per.join(" ")
        ));
    }
    s
}
