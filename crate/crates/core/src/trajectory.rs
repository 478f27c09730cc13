//! Episodes as recorded step lists, lockstep rollout collection, and the
//! JSON Lines replay log.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{Env, EnvError, EnvSpec, Observation, StepInfo, Token};
use crate::policy::{ActionSequence, Context, Decoding, PolicyArch, PolicyError, PolicyNet, TokenBatch};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("environment failure for task seed {task_seed}: {source}")]
    Env { task_seed: u64, source: EnvError },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Rendering of the observation the action was chosen from.
    pub observation_tag: String,
    pub context: Context,
    pub action: ActionSequence,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub episode_id: String,
    pub task_seed: u64,
    pub sample_seed: u64,
    /// Version of the snapshot that generated the actions.
    pub snapshot_version: u64,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub score: f64,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.steps.last().is_some_and(|s| s.done)
    }

    /// Sum of log-probs recorded while sampling.
    pub fn recorded_log_prob(&self) -> f64 {
        self.steps.iter().map(|s| s.action.log_prob()).sum()
    }

    pub fn env_rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn replay_records(&self, vocab: &crate::envs::Vocabulary) -> Vec<ReplayRecord> {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, s)| ReplayRecord {
                episode_id: self.episode_id.clone(),
                step: t,
                observation_tag: s.observation_tag.clone(),
                action_tokens: s.action.to_tokens(vocab),
                reward: s.reward,
                done: s.done,
                info: s.info,
            })
            .collect()
    }
}

/// Score is the sum of environment rewards; success is the terminal flag.
/// The corridor pays only on its last step, so the same rule yields its
/// `{0, 1}` score.
pub fn outcome_reward(traj: &Trajectory) -> Result<Outcome, EnvError> {
    let last = traj.steps.last().ok_or(EnvError::Incomplete)?;
    if !last.done {
        return Err(EnvError::Incomplete);
    }
    Ok(Outcome {
        score: traj.steps.iter().map(|s| s.reward).sum(),
        success: last.info.success,
    })
}

/// `Σ_t log π(a_t | ctx_t)` recomputed under `net`.
pub fn trajectory_log_prob(net: &PolicyNet, traj: &Trajectory) -> Result<f64, PolicyError> {
    if traj.is_empty() {
        return Ok(0.0);
    }
    let mut batch = TokenBatch::new(net.arch());
    for s in &traj.steps {
        batch.push(net.arch(), &s.context, &s.action)?;
    }
    Ok(net.eval_token_log_probs(&batch)?.iter().sum())
}

/// All steps of several trajectories in one token batch.
#[derive(Debug, Clone)]
pub struct FlatBatch {
    pub tokens: TokenBatch,
    /// Trajectory index (position in the input slice) of every step.
    pub step_traj: Vec<usize>,
    /// `offsets[i]..offsets[i + 1]` are the steps of trajectory `i`.
    pub offsets: Vec<usize>,
}

impl FlatBatch {
    pub fn build(arch: &PolicyArch, trajs: &[&Trajectory]) -> Result<Self, PolicyError> {
        let mut tokens = TokenBatch::new(arch);
        let mut step_traj = Vec::new();
        let mut offsets = vec![0];
        for (i, t) in trajs.iter().enumerate() {
            for s in &t.steps {
                tokens.push(arch, &s.context, &s.action)?;
                step_traj.push(i);
            }
            offsets.push(step_traj.len());
        }
        Ok(Self {
            tokens,
            step_traj,
            offsets,
        })
    }

    pub fn trajectories(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Row range of every step, derived from the token batch.
    pub fn step_rows(&self) -> Vec<std::ops::Range<usize>> {
        let mut out: Vec<Option<std::ops::Range<usize>>> = vec![None; self.tokens.steps()];
        for (row, &step) in self.tokens.row_step().iter().enumerate() {
            match &mut out[step] {
                Some(r) => r.end = row + 1,
                slot @ None => *slot = Some(row..row + 1),
            }
        }
        out.into_iter().map(|r| r.expect("every step scores at least one token")).collect()
    }

    /// Splits a per-step vector into per-trajectory vectors.
    pub fn split_steps<T: Clone>(&self, per_step: &[T]) -> Vec<Vec<T>> {
        self.offsets.windows(2).map(|w| per_step[w[0]..w[1]].to_vec()).collect()
    }
}

/// Which episode to play and with which sampling stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeTask {
    pub episode_id: String,
    pub task_seed: u64,
    pub sample_seed: u64,
}

/// Plays every task to completion, stepping all live episodes together so
/// the network sees one batch per decoding position. Each episode draws
/// from its own RNG, so the result does not depend on the batch makeup.
pub fn rollout(
    net: &PolicyNet,
    snapshot_version: u64,
    spec: &EnvSpec,
    tasks: &[EpisodeTask],
    decoding: Decoding,
) -> Result<Vec<Trajectory>, RolloutError> {
    let arch = net.arch();
    let mut rooms: HashMap<u64, Env> = HashMap::new();
    let mut envs = Vec::with_capacity(tasks.len());
    for t in tasks {
        let env = match rooms.entry(t.task_seed) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(spec.reset(t.task_seed).map_err(|source| RolloutError::Env {
                task_seed: t.task_seed,
                source,
            })?),
        };
        envs.push(env.clone());
    }
    let mut rngs: Vec<ChaCha8Rng> = tasks.iter().map(|t| ChaCha8Rng::seed_from_u64(t.sample_seed)).collect();
    let mut history: Vec<Vec<Observation>> = envs.iter().map(|e| vec![e.observation()]).collect();
    let mut trajs: Vec<Trajectory> = tasks
        .iter()
        .map(|t| Trajectory {
            episode_id: t.episode_id.clone(),
            task_seed: t.task_seed,
            sample_seed: t.sample_seed,
            snapshot_version,
            steps: Vec::new(),
        })
        .collect();
    let vocab = &arch.vocabulary;
    let mut active: Vec<usize> = (0..tasks.len()).filter(|&i| !envs[i].is_done()).collect();
    while !active.is_empty() {
        let contexts = active
            .iter()
            .map(|&i| {
                let recent: Vec<&Observation> = history[i].iter().rev().take(arch.context_k).rev().collect();
                let prev = trajs[i].steps.last().map(|s| s.action.tokens.as_slice());
                Context::encode(arch, tasks[i].task_seed, &recent, prev)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ctx_refs: Vec<&Context> = contexts.iter().collect();
        let mut batch_rngs: Vec<ChaCha8Rng> = active.iter().map(|&i| rngs[i].clone()).collect();
        let actions = net.sample_actions(&ctx_refs, decoding, &mut batch_rngs)?;
        let mut still = Vec::with_capacity(active.len());
        for (((&i, ctx), action), rng) in active.iter().zip(contexts).zip(actions).zip(batch_rngs) {
            rngs[i] = rng;
            let tokens: Vec<Token> = action.to_tokens(vocab);
            let tag = history[i].last().expect("history starts with the reset observation").tag.clone();
            let out = envs[i].step(&tokens).map_err(|source| RolloutError::Env {
                task_seed: tasks[i].task_seed,
                source,
            })?;
            trajs[i].steps.push(StepRecord {
                observation_tag: tag,
                context: ctx,
                action,
                reward: out.reward,
                done: out.done,
                info: out.info,
            });
            let h = &mut history[i];
            h.push(out.observation);
            if h.len() > arch.context_k {
                h.remove(0);
            }
            if !out.done {
                still.push(i);
            }
        }
        active = still;
    }
    Ok(trajs)
}

/// One line of the replay log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub episode_id: String,
    pub step: usize,
    pub observation_tag: String,
    pub action_tokens: Vec<Token>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Replay log lines, one per step, in trajectory order.
pub fn replay_lines(trajs: &[Trajectory], vocab: &crate::envs::Vocabulary) -> Vec<String> {
    trajs
        .iter()
        .flat_map(|t| t.replay_records(vocab))
        .map(|r| serde_json::to_string(&r).expect("replay records always serialize"))
        .collect()
}

pub fn write_replay_log<W: Write>(mut w: W, trajs: &[Trajectory], vocab: &crate::envs::Vocabulary) -> std::io::Result<()> {
    for line in replay_lines(trajs, vocab) {
        writeln!(w, "{line}")?;
    }
    Ok(())
}
