//! Alternating optimization of the policy and the implicit reward model.
//!
//! One iteration, in order: roll out `G × N` episodes under the frozen
//! snapshot, score outcomes, compute implicit step rewards, update the
//! reward model on preference pairs, compute advantages, update the policy
//! with the clipped surrogate, then refresh the snapshot. The snapshot that
//! generated the batch is the reference for the step rewards, the
//! preference loss and the importance ratios alike.

mod config;
mod objective;
mod run;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::advantage::{self, AdvError, AdvantageTable};
use crate::envs::EnvSpec;
use crate::harness::eval::{evaluate, EvalReport};
use crate::policy::{PolicyArch, PolicyError, PolicyNet, Snapshot};
use crate::prm::{self, PreferencePair, PrmUpdate, PrmUpdateStats, StepRewardTable};
use crate::seeds::{derive_seed, Domain};
use crate::tensor::{read_checkpoint, write_checkpoint, CheckpointEntry, ParameterSet, TensorError};
use crate::trajectory::{self, outcome_reward, rollout, EpisodeTask, FlatBatch, Outcome, RolloutError, Trajectory};

pub use config::{Ablation, LossNorm, PositiveRuleKind, RatioMode, RewardTiming, TrainConfig};
pub use objective::{clip_fraction, policy_objective, policy_update, surrogate_graph, Granularity, PolicyBatch, PolicyUpdate, PolicyUpdateStats, Surrogate};
pub use run::{read_manifest, resume, run, truncate_logs, IterationArtifact, Manifest, RunPaths, METRICS_HEADER};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Advantage(#[from] AdvError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("iteration {iteration}: {source}")]
    Iteration { iteration: usize, source: Box<TrainError> },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Policy(PolicyError::Tensor(e))
    }
}

impl From<csv::Error> for TrainError {
    fn from(e: csv::Error) -> Self {
        TrainError::Io(std::io::Error::other(e))
    }
}

impl TrainError {
    /// Whether a non-finite value stopped the computation.
    pub fn is_non_finite(&self) -> bool {
        match self {
            TrainError::Policy(PolicyError::Tensor(TensorError::NonFinite(_))) => true,
            TrainError::Iteration { source, .. } => source.is_non_finite(),
            _ => false,
        }
    }
}

/// Per-iteration summary; one row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub success_rate: f64,
    pub mean_score: f64,
    pub mean_episode_length: f64,
    /// Mean summed environment reward per episode.
    pub mean_episode_reward: f64,
    /// Mean implicit step reward; absent without a reward model.
    pub mean_step_reward: Option<f64>,
    /// Preference loss before the reward-model update.
    pub prm_loss: Option<f64>,
    pub clip_fraction: f64,
}

impl MetricsRow {
    pub fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.iteration.to_string(),
            self.success_rate.to_string(),
            self.mean_score.to_string(),
            self.mean_episode_length.to_string(),
            self.mean_episode_reward.to_string(),
            opt(self.mean_step_reward),
            opt(self.prm_loss),
            self.clip_fraction.to_string(),
        ]
    }
}

/// Everything one iteration produced.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub snapshot_version: u64,
    pub trajectories: Vec<Trajectory>,
    pub outcomes: Vec<Outcome>,
    /// SHA-256 of the batch's replay log.
    pub batch_hash: String,
    pub step_rewards: Option<StepRewardTable>,
    pub pairs: Vec<PreferencePair>,
    pub prm: Option<PrmUpdateStats>,
    /// One table per group.
    pub advantages: Vec<AdvantageTable>,
    pub granularity: Granularity,
    pub policy: PolicyUpdateStats,
    pub metrics: MetricsRow,
}

/// Hex SHA-256 of the replay log of `trajs`.
pub fn batch_hash(trajs: &[Trajectory], spec: &EnvSpec) -> String {
    let mut h = Sha256::new();
    for line in trajectory::replay_lines(trajs, &spec.vocabulary()) {
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Mutable training state: policy, reward model, snapshot and counters.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    spec: EnvSpec,
    policy: PolicyNet,
    prm: Option<PolicyNet>,
    snapshot: Snapshot,
    prm_version: u64,
    iteration: usize,
}

impl Trainer {
    /// Policy, reward model and snapshot all start from one initialization.
    pub fn new(cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let spec = cfg.env_spec()?;
        let mut policy = PolicyNet::new(cfg.arch(&spec), derive_seed(cfg.seed, Domain::Init, 0, 0))?;
        let prm = cfg.uses_prm().then(|| policy.fresh_copy());
        let snapshot = policy.snapshot();
        Ok(Self {
            cfg,
            spec,
            policy,
            prm,
            snapshot,
            prm_version: 0,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }

    pub fn prm(&self) -> Option<&PolicyNet> {
        self.prm.as_ref()
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Episodes of iteration `iteration` (1-based): task seeds per group,
    /// sampling seeds per episode.
    pub fn tasks(cfg: &TrainConfig, iteration: usize) -> Vec<EpisodeTask> {
        let mut out = Vec::with_capacity(cfg.groups * cfg.group_size);
        for g in 0..cfg.groups {
            let task_seed = derive_seed(cfg.seed, Domain::Task, iteration as u64, g as u64);
            for i in 0..cfg.group_size {
                out.push(EpisodeTask {
                    episode_id: format!("it{iteration:04}-g{g:02}-t{i:02}"),
                    task_seed,
                    sample_seed: derive_seed(cfg.seed, Domain::Sample, iteration as u64, (g * cfg.group_size + i) as u64),
                });
            }
        }
        out
    }

    /// Rollouts of the next iteration under the current snapshot.
    pub fn collect(&self) -> Result<Vec<Trajectory>, TrainError> {
        let tasks = Self::tasks(&self.cfg, self.iteration + 1);
        let decoding = crate::policy::Decoding::Sample(self.cfg.rollout_temperature);
        Ok(rollout(self.snapshot.net(), self.snapshot.version(), &self.spec, &tasks, decoding)?)
    }

    pub fn evaluate(&self) -> Result<EvalReport, TrainError> {
        Ok(evaluate(&self.policy, &self.spec, self.cfg.eval_episodes, self.cfg.eval_seed, self.cfg.eval_decoding())?)
    }

    fn group_slices<'a, T>(&self, flat: &'a [T]) -> Vec<&'a [T]> {
        flat.chunks(self.cfg.group_size).collect()
    }

    /// Runs one full iteration and advances the state.
    pub fn step(&mut self) -> Result<IterationRecord, TrainError> {
        let iteration = self.iteration + 1;
        self.step_inner(iteration).map_err(|e| TrainError::Iteration {
            iteration,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self, iteration: usize) -> Result<IterationRecord, TrainError> {
        let cfg = self.cfg.clone();
        let snap = self.snapshot.clone();
        let trajs = self.collect()?;
        let hash = batch_hash(&trajs, &self.spec);
        let outcomes = trajs.iter().map(outcome_reward).collect::<Result<Vec<_>, _>>().map_err(|e| TrainError::Invariant(e.to_string()))?;

        let refs: Vec<&Trajectory> = trajs.iter().collect();
        let flat = FlatBatch::build(snap.net().arch(), &refs)?;
        let old_tok = snap.net().eval_token_log_probs(&flat.tokens)?;
        let recorded: Vec<f64> = trajs.iter().flat_map(|t| t.steps.iter().flat_map(|s| s.action.log_probs.iter().copied())).collect();
        let drift = old_tok.iter().zip(&recorded).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if drift > 1e-10 || trajs.iter().any(|t| t.snapshot_version != snap.version()) {
            return Err(TrainError::Invariant(format!("batch does not replay under snapshot v{} (drift {drift})", snap.version())));
        }
        let mut old_traj = vec![0.0; trajs.len()];
        for (row, lp) in old_tok.iter().enumerate() {
            old_traj[flat.step_traj[flat.tokens.row_step()[row]]] += lp;
        }

        let mut table = None;
        let mut pairs = Vec::new();
        let mut prm_stats = None;
        if let Some(prm_net) = self.prm.as_mut() {
            let agg = cfg.step_reward_token_agg;
            if cfg.prm_reward_timing == RewardTiming::PreUpdate {
                let prm_tok = prm_net.eval_token_log_probs(&flat.tokens)?;
                table = Some(StepRewardTable::from_log_probs(&flat, &prm_tok, &old_tok, cfg.beta, agg, self.prm_version, snap.version()));
            }
            for (g, chunk) in outcomes.chunks(cfg.group_size).enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Domain::Pairs, iteration as u64, g as u64));
                let task = trajs[g * cfg.group_size].task_seed;
                pairs.extend(prm::build_preference_pairs(g, task, g * cfg.group_size, chunk, cfg.positive_rule(), cfg.pair_cap(), &mut rng));
            }
            if batch_hash(&trajs, &self.spec) != hash {
                return Err(TrainError::Invariant("reward-model batch differs from the collected batch".into()));
            }
            let upd = PrmUpdate {
                beta: cfg.beta,
                optimizer: cfg.prm_optimizer(),
                epochs: cfg.prm_epochs,
                minibatches: cfg.prm_minibatches,
            };
            let stats = prm::prm_update(prm_net, &trajs, &old_traj, &pairs, &upd)?;
            if !stats.skipped {
                self.prm_version += 1;
            }
            prm_stats = Some(stats);
            if cfg.prm_reward_timing == RewardTiming::PostUpdate {
                let prm_tok = prm_net.eval_token_log_probs(&flat.tokens)?;
                table = Some(StepRewardTable::from_log_probs(&flat, &prm_tok, &old_tok, cfg.beta, agg, self.prm_version, snap.version()));
            }
        }

        let (advantages, granularity) = self.advantages(&trajs, &outcomes, table.as_ref())?;
        let rows: Vec<Vec<f64>> = advantages.iter().flat_map(|t| t.combined.iter().cloned()).collect();
        if batch_hash(&trajs, &self.spec) != hash {
            return Err(TrainError::Invariant("policy batch differs from the collected batch".into()));
        }
        if self.snapshot.version() != snap.version() {
            return Err(TrainError::Invariant("snapshot rotated mid-iteration".into()));
        }
        let upd = PolicyUpdate {
            optimizer: cfg.policy_optimizer(),
            clip_eps: cfg.clip_eps,
            epochs: cfg.policy_epochs,
            minibatches: cfg.policy_minibatches,
            loss_norm: cfg.loss_norm,
            ratio_mode: cfg.ratio_mode,
        };
        let policy_stats = policy_update(&mut self.policy, &trajs, &rows, granularity, &upd)?;
        self.snapshot = self.policy.snapshot();
        self.iteration = iteration;

        let n = trajs.len() as f64;
        let metrics = MetricsRow {
            iteration,
            success_rate: outcomes.iter().filter(|o| o.success).count() as f64 / n,
            mean_score: outcomes.iter().map(|o| o.score).sum::<f64>() / n,
            mean_episode_length: trajs.iter().map(Trajectory::len).sum::<usize>() as f64 / n,
            mean_episode_reward: trajs.iter().map(|t| t.env_rewards().iter().sum::<f64>()).sum::<f64>() / n,
            mean_step_reward: table.as_ref().map(StepRewardTable::mean_step_reward),
            prm_loss: prm_stats.as_ref().and_then(|s| s.loss_before),
            clip_fraction: policy_stats.clip_fraction,
        };
        Ok(IterationRecord {
            iteration,
            snapshot_version: snap.version(),
            trajectories: trajs,
            outcomes,
            batch_hash: hash,
            step_rewards: table,
            pairs,
            prm: prm_stats,
            advantages,
            granularity,
            policy: policy_stats,
            metrics,
        })
    }

    /// Per-group advantage tables for the configured estimator and ablation.
    fn advantages(&self, trajs: &[Trajectory], outcomes: &[Outcome], table: Option<&StepRewardTable>) -> Result<(Vec<AdvantageTable>, Granularity), TrainError> {
        let cfg = &self.cfg;
        let scores: Vec<Vec<f64>> = self.group_slices(outcomes).iter().map(|g| g.iter().map(|o| o.score).collect()).collect();
        let step_lens: Vec<Vec<usize>> = self.group_slices(trajs).iter().map(|g| g.iter().map(Trajectory::len).collect()).collect();
        let missing = || TrainError::Invariant("step rewards missing for an iStar iteration".into());
        if cfg.istar && cfg.ablation == Ablation::Merged {
            let t = table.ok_or_else(missing)?;
            let sums: Vec<Vec<f64>> = t.trajectory_sums().chunks(cfg.group_size).map(<[f64]>::to_vec).collect();
            return Ok((advantage::merged_reward_adv(&scores, &sums, cfg.algo, cfg.rpp_std, &step_lens)?, Granularity::Step));
        }
        let episode = advantage::episode_advantages(cfg.algo, &scores, cfg.rpp_std)?;
        let mut out = Vec::with_capacity(episode.len());
        match (cfg.istar, cfg.ablation) {
            (false, _) => {
                for (e, lens) in episode.iter().zip(&step_lens) {
                    out.push(advantage::combine_adv(e, None, cfg.alpha, lens)?);
                }
                Ok((out, Granularity::Step))
            }
            (true, Ablation::GtStep) => {
                for ((e, lens), group) in episode.iter().zip(&step_lens).zip(self.group_slices(trajs)) {
                    let env: Vec<Vec<f64>> = group.iter().map(Trajectory::env_rewards).collect();
                    let (s, _) = advantage::ground_truth_step_adv(&env, self.spec.has_step_rewards());
                    out.push(advantage::combine_adv(e, Some(&s), cfg.alpha, lens)?);
                }
                Ok((out, Granularity::Step))
            }
            (true, Ablation::TokenLevel) => {
                let t = table.ok_or_else(missing)?;
                for (g, e) in episode.iter().enumerate() {
                    let range = g * cfg.group_size..(g + 1) * cfg.group_size;
                    let tokens: Vec<Vec<f64>> = t.tokens[range].iter().map(|steps| steps.iter().flatten().copied().collect()).collect();
                    let lens: Vec<usize> = tokens.iter().map(Vec::len).collect();
                    let s = advantage::implicit_step_adv(&tokens, cfg.beta)?;
                    out.push(advantage::combine_adv(e, Some(&s), cfg.alpha, &lens)?);
                }
                Ok((out, Granularity::Token))
            }
            (true, _) => {
                let t = table.ok_or_else(missing)?;
                for (g, (e, lens)) in episode.iter().zip(&step_lens).enumerate() {
                    let s = advantage::implicit_step_adv(&t.rewards[g * cfg.group_size..(g + 1) * cfg.group_size], cfg.beta)?;
                    out.push(advantage::combine_adv(e, Some(&s), cfg.alpha, lens)?);
                }
                Ok((out, Granularity::Step))
            }
        }
    }

    /// Saves policy and reward model with optimizer state. The snapshot is
    /// the policy itself at iteration boundaries and is not stored twice.
    pub fn save_state(&self, path: &Path) -> Result<(), TrainError> {
        let mut entries: Vec<CheckpointEntry> = Vec::new();
        let prefixed = |prefix: &str, ps: &ParameterSet| {
            ps.to_entries(true).into_iter().map(|mut e| {
                e.name = format!("{prefix}/{}", e.name);
                e
            }).collect::<Vec<_>>()
        };
        entries.extend(prefixed("policy", self.policy.params()));
        if let Some(p) = &self.prm {
            entries.extend(prefixed("prm", p.params()));
        }
        let meta = serde_json::json!({
            "kind": "train_state",
            "iteration": self.iteration,
            "snapshot_version": self.snapshot.version(),
            "prm_version": self.prm_version,
            "arch": self.policy.arch(),
            "config": self.cfg,
        });
        write_checkpoint(path, &meta, &entries)?;
        Ok(())
    }

    /// Policy weights from a training state or a bare policy file, with the
    /// training configuration when the file carries one.
    pub fn load_policy(path: &Path) -> Result<(Option<TrainConfig>, PolicyNet), TrainError> {
        let (meta, entries) = read_checkpoint(path)?;
        if meta["kind"] != "train_state" {
            return Ok((None, PolicyNet::load(path)?));
        }
        let bad = |m: &str| TrainError::Checkpoint(format!("{}: {m}", path.display()));
        let cfg: TrainConfig = serde_json::from_value(meta["config"].clone()).map_err(|e| bad(&e.to_string()))?;
        let arch: PolicyArch = serde_json::from_value(meta["arch"].clone()).map_err(|e| bad(&e.to_string()))?;
        let own: Vec<CheckpointEntry> = entries
            .iter()
            .filter_map(|e| e.name.strip_prefix("policy/").map(|n| CheckpointEntry { name: n.to_string(), tensor: e.tensor.clone() }))
            .collect();
        let net = PolicyNet::from_params(arch, ParameterSet::from_entries(&own)?)?;
        Ok((Some(cfg), net))
    }

    /// Restores a state saved by [`Trainer::save_state`]; `cfg` must match
    /// the saved configuration.
    pub fn load_state(cfg: TrainConfig, path: &Path) -> Result<Self, TrainError> {
        let (meta, entries) = read_checkpoint(path)?;
        let bad = |m: &str| TrainError::Checkpoint(format!("{}: {m}", path.display()));
        let saved: TrainConfig = serde_json::from_value(meta["config"].clone()).map_err(|e| bad(&e.to_string()))?;
        if saved != cfg {
            return Err(bad("configuration differs from the one the state was saved with"));
        }
        let mut t = Self::new(cfg)?;
        let split = |prefix: &str| -> Result<ParameterSet, TrainError> {
            let own: Vec<CheckpointEntry> = entries
                .iter()
                .filter_map(|e| e.name.strip_prefix(&format!("{prefix}/")).map(|n| CheckpointEntry { name: n.to_string(), tensor: e.tensor.clone() }))
                .collect();
            Ok(ParameterSet::from_entries(&own)?)
        };
        let arch = t.policy.arch().clone();
        let snapshot_version = meta["snapshot_version"].as_u64().ok_or_else(|| bad("missing snapshot_version"))?;
        t.policy = PolicyNet::from_params(arch.clone(), split("policy")?)?;
        t.policy.set_snapshots_taken(snapshot_version - 1);
        t.snapshot = t.policy.snapshot();
        if t.prm.is_some() {
            t.prm = Some(PolicyNet::from_params(arch, split("prm")?)?);
        }
        t.prm_version = meta["prm_version"].as_u64().ok_or_else(|| bad("missing prm_version"))?;
        t.iteration = meta["iteration"].as_u64().ok_or_else(|| bad("missing iteration"))? as usize;
        Ok(t)
    }
}
