//! Run directories: manifest, config snapshot, CSV logs, replay logs,
//! checkpoints and evaluation reports.
//!
//! ```text
//! run/
//!   manifest.json        config, seeds, code version, per-iteration artifacts
//!   config.toml          exact configuration
//!   metrics.csv          one row per iteration
//!   step_rewards.csv     implicit reward per step (reward-model runs only)
//!   advantages.csv       advantage components per step or token
//!   eval_curve.csv       periodic evaluation
//!   final_eval.csv/.txt  last evaluation, rows and summary
//!   trajectories/iter_NNNN.jsonl
//!   checkpoints/state_NNNN.ckpt
//!   failure.json         only after an abort
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::harness::eval::EvalReport;
use crate::trajectory::write_replay_log;

use super::{Ablation, Granularity, IterationRecord, TrainConfig, TrainError, Trainer};

pub const METRICS_HEADER: [&str; 8] = [
    "iteration",
    "success_rate",
    "mean_score",
    "mean_episode_length",
    "mean_episode_reward",
    "mean_step_reward",
    "prm_loss",
    "clip_fraction",
];

const EVAL_HEADER: [&str; 4] = ["iteration", "success_rate", "mean_score", "mean_episode_length"];
const STEP_REWARD_HEADER: [&str; 5] = ["iteration", "group", "traj", "step", "r_phi"];

/// File layout of one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn step_rewards(&self) -> PathBuf {
        self.root.join("step_rewards.csv")
    }
    pub fn advantages(&self) -> PathBuf {
        self.root.join("advantages.csv")
    }
    pub fn eval_curve(&self) -> PathBuf {
        self.root.join("eval_curve.csv")
    }
    pub fn final_eval_csv(&self) -> PathBuf {
        self.root.join("final_eval.csv")
    }
    pub fn final_eval_summary(&self) -> PathBuf {
        self.root.join("final_eval.txt")
    }
    pub fn failure(&self) -> PathBuf {
        self.root.join("failure.json")
    }
    pub fn trajectories_dir(&self) -> PathBuf {
        self.root.join("trajectories")
    }
    pub fn trajectory_rel(iteration: usize) -> String {
        format!("trajectories/iter_{iteration:04}.jsonl")
    }
    pub fn trajectories(&self, iteration: usize) -> PathBuf {
        self.root.join(Self::trajectory_rel(iteration))
    }
    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint_rel(iteration: usize) -> String {
        format!("checkpoints/state_{iteration:04}.ckpt")
    }
    pub fn checkpoint(&self, iteration: usize) -> PathBuf {
        self.root.join(Self::checkpoint_rel(iteration))
    }

    /// Iterations with a saved state, ascending.
    pub fn checkpoint_iterations(&self) -> Vec<usize> {
        let mut out: Vec<usize> = fs::read_dir(self.checkpoints_dir())
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_prefix("state_")?.strip_suffix(".ckpt")?.parse().ok()
            })
            .collect();
        out.sort_unstable();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationArtifact {
    pub iteration: usize,
    pub trajectories: String,
    pub batch_hash: String,
    pub snapshot_version: u64,
    pub preference_pairs: usize,
    pub prm_skipped: Option<bool>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub label: String,
    pub code_version: String,
    pub status: String,
    pub seed: u64,
    pub eval_seed: u64,
    pub iterations_completed: usize,
    pub policy_parameters: usize,
    pub config: TrainConfig,
    pub initial_checkpoint: String,
    pub artifacts: Vec<IterationArtifact>,
    pub final_eval: Option<String>,
}

pub fn read_manifest(paths: &RunPaths) -> Result<Manifest, TrainError> {
    let text = fs::read_to_string(paths.manifest())?;
    serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(format!("manifest: {e}")))
}

fn write_manifest(paths: &RunPaths, m: &Manifest) -> Result<(), TrainError> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    let tmp = paths.root.join("manifest.json.tmp");
    fs::write(&tmp, text + "\n")?;
    fs::rename(tmp, paths.manifest())?;
    Ok(())
}

fn advantage_header(cfg: &TrainConfig) -> Vec<&'static str> {
    let mut h = vec!["iteration", "group", "traj", "step"];
    if cfg.istar && cfg.ablation == Ablation::TokenLevel {
        h.push("token");
    }
    h.push("A_E");
    if cfg.istar && cfg.ablation != Ablation::Merged {
        h.push("A_S");
    }
    h.push("A");
    h
}

struct Logs {
    metrics: csv::Writer<File>,
    step_rewards: Option<csv::Writer<File>>,
    advantages: csv::Writer<File>,
    eval: csv::Writer<File>,
}

impl Logs {
    fn open(paths: &RunPaths, cfg: &TrainConfig, fresh: bool) -> Result<Self, TrainError> {
        let open = |p: PathBuf, header: &[&str]| -> Result<csv::Writer<File>, TrainError> {
            let f = OpenOptions::new().create(true).append(true).truncate(false).open(&p)?;
            let mut w = csv::Writer::from_writer(f);
            if fresh {
                w.write_record(header)?;
                w.flush()?;
            }
            Ok(w)
        };
        Ok(Self {
            metrics: open(paths.metrics(), &METRICS_HEADER)?,
            step_rewards: if cfg.uses_prm() { Some(open(paths.step_rewards(), &STEP_REWARD_HEADER)?) } else { None },
            advantages: open(paths.advantages(), &advantage_header(cfg))?,
            eval: open(paths.eval_curve(), &EVAL_HEADER)?,
        })
    }

    fn eval_row(&mut self, iteration: usize, r: &EvalReport) -> Result<(), TrainError> {
        self.eval.write_record([
            iteration.to_string(),
            r.success_rate.to_string(),
            r.mean_score.to_string(),
            r.mean_episode_length.to_string(),
        ])?;
        self.eval.flush()?;
        Ok(())
    }

    fn iteration(&mut self, cfg: &TrainConfig, rec: &IterationRecord) -> Result<(), TrainError> {
        let it = rec.iteration.to_string();
        let n = cfg.group_size;
        self.metrics.write_record(rec.metrics.record())?;
        if let (Some(w), Some(t)) = (self.step_rewards.as_mut(), rec.step_rewards.as_ref()) {
            for (i, steps) in t.rewards.iter().enumerate() {
                for (s, r) in steps.iter().enumerate() {
                    w.write_record([it.clone(), (i / n).to_string(), (i % n).to_string(), s.to_string(), r.to_string()])?;
                }
            }
        }
        let with_step = advantage_header(cfg).contains(&"A_S");
        for (g, table) in rec.advantages.iter().enumerate() {
            for (i, rows) in table.combined.iter().enumerate() {
                let traj = &rec.trajectories[g * n + i];
                let positions: Vec<(usize, Option<usize>)> = match rec.granularity {
                    Granularity::Step => (0..traj.len()).map(|s| (s, None)).collect(),
                    Granularity::Token => traj
                        .steps
                        .iter()
                        .enumerate()
                        .flat_map(|(s, st)| (0..st.action.scored()).map(move |k| (s, Some(k))))
                        .collect(),
                };
                for (r, (s, k)) in positions.into_iter().enumerate() {
                    let mut rec_row = vec![it.clone(), g.to_string(), i.to_string(), s.to_string()];
                    if let Some(k) = k {
                        rec_row.push(k.to_string());
                    }
                    rec_row.push(table.episode[i].to_string());
                    if with_step {
                        rec_row.push(table.step.as_ref().map(|st| st[i][r].to_string()).unwrap_or_default());
                    }
                    rec_row.push(rows[r].to_string());
                    self.advantages.write_record(&rec_row)?;
                }
            }
        }
        self.metrics.flush()?;
        self.advantages.flush()?;
        if let Some(w) = self.step_rewards.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

fn due(iteration: usize, every: usize, last: usize) -> bool {
    iteration == last || (every > 0 && iteration.is_multiple_of(every))
}

fn write_trajectories(paths: &RunPaths, trainer: &Trainer, rec: &IterationRecord) -> Result<(), TrainError> {
    let f = BufWriter::new(File::create(paths.trajectories(rec.iteration))?);
    write_replay_log(f, &rec.trajectories, &trainer.spec().vocabulary())?;
    Ok(())
}

#[derive(Serialize)]
struct Failure<'a> {
    iteration: usize,
    error: String,
    non_finite: bool,
    last_completed_iteration: usize,
    last_checkpoint: Option<&'a str>,
}

/// Trains `cfg.iterations` iterations into `dir` (created if missing).
pub fn run(cfg: &TrainConfig, dir: &Path) -> Result<RunPaths, TrainError> {
    cfg.validate()?;
    let paths = RunPaths::new(dir);
    fs::create_dir_all(paths.trajectories_dir())?;
    fs::create_dir_all(paths.checkpoints_dir())?;
    fs::write(paths.config(), cfg.to_toml_string())?;
    let trainer = Trainer::new(cfg.clone())?;
    let manifest = Manifest {
        label: cfg.label(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        status: "running".into(),
        seed: cfg.seed,
        eval_seed: cfg.eval_seed,
        iterations_completed: 0,
        policy_parameters: trainer.policy().num_parameters(),
        config: cfg.clone(),
        initial_checkpoint: RunPaths::checkpoint_rel(0),
        artifacts: Vec::new(),
        final_eval: None,
    };
    write_manifest(&paths, &manifest)?;
    let mut logs = Logs::open(&paths, cfg, true)?;
    trainer.save_state(&paths.checkpoint(0))?;
    let initial = trainer.evaluate()?;
    logs.eval_row(0, &initial)?;
    continue_run(&paths, trainer, manifest, logs, Some(initial))?;
    Ok(paths)
}

/// Continues an interrupted run from its latest checkpoint. Logs past the
/// checkpoint are discarded first, so the finished directory matches an
/// uninterrupted run byte for byte.
pub fn resume(dir: &Path) -> Result<RunPaths, TrainError> {
    let paths = RunPaths::new(dir);
    let cfg = TrainConfig::load(&paths.config())?;
    let at = *paths
        .checkpoint_iterations()
        .last()
        .ok_or_else(|| TrainError::Checkpoint(format!("no checkpoints under {}", dir.display())))?;
    let trainer = Trainer::load_state(cfg.clone(), &paths.checkpoint(at))?;
    truncate_logs(&paths, at)?;
    let mut manifest = read_manifest(&paths)?;
    manifest.artifacts.retain(|a| a.iteration <= at);
    manifest.iterations_completed = at;
    manifest.status = "running".into();
    manifest.final_eval = None;
    let _ = fs::remove_file(paths.failure());
    for c in paths.checkpoint_iterations().into_iter().filter(|&c| c > at) {
        fs::remove_file(paths.checkpoint(c))?;
    }
    let logs = Logs::open(&paths, &cfg, false)?;
    let last_eval = if at == cfg.iterations { Some(trainer.evaluate()?) } else { None };
    continue_run(&paths, trainer, manifest, logs, last_eval)?;
    Ok(paths)
}

/// Drops every log row and replay file of iterations after `iteration`.
pub fn truncate_logs(paths: &RunPaths, iteration: usize) -> Result<(), TrainError> {
    for p in [paths.metrics(), paths.step_rewards(), paths.advantages(), paths.eval_curve()] {
        if !p.exists() {
            continue;
        }
        let lines: Vec<String> = BufReader::new(File::open(&p)?).lines().collect::<Result<_, _>>()?;
        let mut out = String::new();
        for (i, line) in lines.iter().enumerate() {
            let keep = i == 0 || line.split(',').next().and_then(|f| f.parse::<usize>().ok()).is_some_and(|it| it <= iteration);
            if keep {
                out.push_str(line);
                out.push('\n');
            }
        }
        fs::write(&p, out)?;
    }
    let mut it = iteration + 1;
    while paths.trajectories(it).exists() {
        fs::remove_file(paths.trajectories(it))?;
        it += 1;
    }
    Ok(())
}

fn continue_run(paths: &RunPaths, mut trainer: Trainer, mut manifest: Manifest, mut logs: Logs, mut last_eval: Option<EvalReport>) -> Result<(), TrainError> {
    let cfg = trainer.config().clone();
    let total = cfg.iterations;
    while trainer.iteration() < total {
        let rec = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                let last_ckpt = manifest.artifacts.iter().rev().find_map(|a| a.checkpoint.as_deref()).unwrap_or(&manifest.initial_checkpoint).to_string();
                let failure = Failure {
                    iteration: trainer.iteration() + 1,
                    error: e.to_string(),
                    non_finite: e.is_non_finite(),
                    last_completed_iteration: trainer.iteration(),
                    last_checkpoint: Some(&last_ckpt),
                };
                fs::write(paths.failure(), serde_json::to_string_pretty(&failure).expect("failure serializes") + "\n")?;
                manifest.status = "failed".into();
                write_manifest(paths, &manifest)?;
                return Err(e);
            }
        };
        let it = rec.iteration;
        write_trajectories(paths, &trainer, &rec)?;
        logs.iteration(&cfg, &rec)?;
        if due(it, cfg.eval_every, total) {
            let r = trainer.evaluate()?;
            logs.eval_row(it, &r)?;
            last_eval = Some(r);
        }
        let checkpoint = if due(it, cfg.checkpoint_every, total) {
            trainer.save_state(&paths.checkpoint(it))?;
            Some(RunPaths::checkpoint_rel(it))
        } else {
            None
        };
        manifest.artifacts.push(IterationArtifact {
            iteration: it,
            trajectories: RunPaths::trajectory_rel(it),
            batch_hash: rec.batch_hash.clone(),
            snapshot_version: rec.snapshot_version,
            preference_pairs: rec.pairs.len(),
            prm_skipped: rec.prm.as_ref().map(|p| p.skipped),
            checkpoint,
        });
        manifest.iterations_completed = it;
        write_manifest(paths, &manifest)?;
    }
    let report = match last_eval {
        Some(r) => r,
        None => trainer.evaluate()?,
    };
    report.write(&paths.final_eval_csv(), &paths.final_eval_summary())?;
    manifest.status = "completed".into();
    manifest.final_eval = Some("final_eval.csv".into());
    write_manifest(paths, &manifest)?;
    let mut f = OpenOptions::new().append(true).open(paths.final_eval_summary())?;
    writeln!(f, "label={} iterations={}", manifest.label, manifest.iterations_completed)?;
    Ok(())
}
