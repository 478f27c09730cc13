//! Deterministic replay: re-executes one logged iteration's rollouts from the
//! nearest earlier checkpoint and diffs them against the logged JSONL.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::trainer::{RunPaths, TrainConfig, TrainError, Trainer};
use crate::trajectory::replay_lines;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayVerdict {
    Pass {
        iteration: usize,
        lines: usize,
    },
    /// `line` is 1-based; a missing side is `None`.
    Fail {
        iteration: usize,
        line: usize,
        logged: Option<String>,
        replayed: Option<String>,
    },
}

impl ReplayVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, Self::Pass { .. })
    }
}

impl fmt::Display for ReplayVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pass { iteration, lines } => write!(f, "PASS iteration {iteration}: {lines} records identical"),
            Self::Fail {
                iteration,
                line,
                logged,
                replayed,
            } => {
                let show = |s: &Option<String>| s.clone().unwrap_or_else(|| "<missing>".into());
                write!(
                    f,
                    "FAIL iteration {iteration}: first divergence at line {line}\n  logged:   {}\n  replayed: {}",
                    show(logged),
                    show(replayed)
                )
            }
        }
    }
}

/// First position where two line sequences differ.
pub fn first_divergence(logged: &[String], replayed: &[String]) -> Option<usize> {
    let n = logged.len().max(replayed.len());
    (0..n).find(|&i| logged.get(i) != replayed.get(i))
}

/// Rebuilds the trainer state at the start of `iteration` (1-based): loads
/// the latest checkpoint before it and re-runs the iterations in between.
pub fn trainer_before(dir: &Path, iteration: usize) -> Result<Trainer, TrainError> {
    if iteration == 0 {
        return Err(TrainError::Config("iterations are numbered from 1".into()));
    }
    let paths = RunPaths::new(dir);
    let cfg = TrainConfig::load(&paths.config())?;
    let start = paths
        .checkpoint_iterations()
        .into_iter()
        .filter(|&c| c < iteration)
        .max()
        .ok_or_else(|| TrainError::Checkpoint(format!("{}: no checkpoint before iteration {iteration}", dir.display())))?;
    let mut trainer = Trainer::load_state(cfg, &paths.checkpoint(start))?;
    while trainer.iteration() + 1 < iteration {
        trainer.step()?;
    }
    Ok(trainer)
}

/// Replays `iteration` of the run in `dir` and compares byte-for-byte.
pub fn replay_iteration(dir: &Path, iteration: usize) -> Result<ReplayVerdict, TrainError> {
    let paths = RunPaths::new(dir);
    let logged_text = fs::read_to_string(paths.trajectories(iteration))?;
    let trainer = trainer_before(dir, iteration)?;
    let trajs = trainer.collect()?;
    let replayed = replay_lines(&trajs, &trainer.spec().vocabulary());
    let logged: Vec<String> = logged_text.lines().map(str::to_string).collect();
    let trailing_ok = logged_text.is_empty() || logged_text.ends_with('\n');
    Ok(match first_divergence(&logged, &replayed) {
        None if trailing_ok => ReplayVerdict::Pass {
            iteration,
            lines: logged.len(),
        },
        None => ReplayVerdict::Fail {
            iteration,
            line: logged.len(),
            logged: logged.last().cloned(),
            replayed: replayed.last().map(|l| format!("{l} (log lacks the final newline)")),
        },
        Some(i) => ReplayVerdict::Fail {
            iteration,
            line: i + 1,
            logged: logged.get(i).cloned(),
            replayed: replayed.get(i).cloned(),
        },
    })
}
