//! Implicit process reward model.
//!
//! The reward model is a second policy network `π_φ`. A step's reward is
//! `β · (log π_φ(a|ctx) − log π_old(a|ctx))`, so summed over a trajectory
//! the rewards telescope to `β` times the trajectory log-ratio, and the
//! trajectory preference loss is a Bradley–Terry loss on summed step
//! rewards.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::policy::{ActionSequence, Context, PolicyError, PolicyNet, TokenBatch};
use crate::tensor::{adamw_step, AdamW, Graph, ParameterSet, Tensor, Var};
use crate::trajectory::{FlatBatch, Outcome, Trajectory};

type Result<T> = std::result::Result<T, PolicyError>;

/// How token log-ratios inside one action become a step reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenAgg {
    /// Sequence log-ratio; telescopes to the trajectory log-ratio.
    #[default]
    Sum,
    Mean,
}

/// Which trajectories count as preferred.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PositiveRule {
    #[default]
    Success,
    ScoreAbove(f64),
}

impl PositiveRule {
    pub fn is_positive(self, o: &Outcome) -> bool {
        match self {
            PositiveRule::Success => o.success,
            PositiveRule::ScoreAbove(t) => o.score > t,
        }
    }
}

/// Indices into one flat trajectory list; both share a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreferencePair {
    pub group: usize,
    pub task_seed: u64,
    pub positive: usize,
    pub negative: usize,
}

/// Every positive × negative pair of one group, subsampled uniformly down to
/// `cap` when there are more. `offset` is the flat index of the group's first
/// trajectory.
pub fn build_preference_pairs(
    group: usize,
    task_seed: u64,
    offset: usize,
    outcomes: &[Outcome],
    rule: PositiveRule,
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<PreferencePair> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..outcomes.len()).partition(|&i| rule.is_positive(&outcomes[i]));
    let all: Vec<PreferencePair> = pos
        .iter()
        .flat_map(|&p| {
            neg.iter().map(move |&n| PreferencePair {
                group,
                task_seed,
                positive: offset + p,
                negative: offset + n,
            })
        })
        .collect();
    if all.len() <= cap {
        return all;
    }
    let mut keep = sample(rng, all.len(), cap).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| all[i]).collect()
}

fn check_compatible(prm: &PolicyNet, old: &PolicyNet) -> Result<()> {
    if prm.arch() != old.arch() {
        return Err(PolicyError::Usage("reward model and snapshot architectures differ".into()));
    }
    Ok(())
}

/// `log π_φ(τ) − log π_old(τ)` over action tokens.
pub fn trajectory_log_ratio(prm: &PolicyNet, old: &PolicyNet, traj: &Trajectory) -> Result<f64> {
    check_compatible(prm, old)?;
    if traj.is_empty() {
        return Ok(0.0);
    }
    let flat = FlatBatch::build(prm.arch(), &[traj])?;
    let a = prm.eval_token_log_probs(&flat.tokens)?;
    let b = old.eval_token_log_probs(&flat.tokens)?;
    Ok(a.iter().sum::<f64>() - b.iter().sum::<f64>())
}

/// `β · (ratio⁺ − ratio⁻)`.
pub fn dpo_margin(beta: f64, ratio_pos: f64, ratio_neg: f64) -> f64 {
    beta * (ratio_pos - ratio_neg)
}

/// `−ln σ(margin)`.
pub fn dpo_loss_from_margin(margin: f64) -> f64 {
    if margin >= 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

/// Trajectory preference loss for one pair.
pub fn dpo_pair_loss(prm: &PolicyNet, old: &PolicyNet, positive: &Trajectory, negative: &Trajectory, beta: f64) -> Result<f64> {
    let rp = trajectory_log_ratio(prm, old, positive)?;
    let rn = trajectory_log_ratio(prm, old, negative)?;
    Ok(dpo_loss_from_margin(dpo_margin(beta, rp, rn)))
}

/// Mean preference loss of `pairs` as a graph node, differentiable in
/// `params` (the reward model weights) only. `old_log_probs[i]` is the
/// snapshot log-probability of `trajs[i]`; pair indices point into `trajs`.
pub fn dpo_loss_graph(
    prm: &PolicyNet,
    params: &ParameterSet,
    g: &mut Graph,
    flat: &FlatBatch,
    old_log_probs: &[f64],
    pairs: &[(usize, usize)],
    beta: f64,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(PolicyError::Usage("no preference pairs".into()));
    }
    let n = flat.trajectories();
    if old_log_probs.len() != n {
        return Err(PolicyError::Usage("one snapshot log-probability per trajectory required".into()));
    }
    let steps = prm.step_log_probs_with(params, g, &flat.tokens, true)?;
    let per_traj = g.segment_sum(steps, &flat.step_traj, n)?;
    let old = g.constant(&Tensor::vector(old_log_probs.to_vec())?);
    let ratio = g.sub(per_traj, old)?;
    let pos_idx: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let neg_idx: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let rp = g.gather(ratio, &pos_idx)?;
    let rn = g.gather(ratio, &neg_idx)?;
    let diff = g.sub(rp, rn)?;
    let margin = g.scale(diff, beta)?;
    let ls = g.log_sigmoid(margin)?;
    let mean = g.mean(ls)?;
    Ok(g.scale(mean, -1.0)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrmUpdateStats {
    pub pairs: usize,
    pub skipped: bool,
    pub optimizer_steps: usize,
    /// Mean loss over all pairs before the first step.
    pub loss_before: Option<f64>,
    /// Mean loss over all pairs after the last step.
    pub loss_after: Option<f64>,
}

/// Settings of one reward-model update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrmUpdate {
    pub beta: f64,
    pub optimizer: AdamW,
    pub epochs: usize,
    pub minibatches: usize,
}

/// Compacts the trajectories referenced by `pairs` into one batch and
/// remaps pair indices into it.
fn paired_subset<'a>(
    trajs: &'a [Trajectory],
    old_log_probs: &[f64],
    pairs: &[PreferencePair],
) -> (Vec<&'a Trajectory>, Vec<f64>, Vec<(usize, usize)>) {
    let mut local = std::collections::BTreeMap::new();
    for p in pairs {
        let next = local.len();
        local.entry(p.positive).or_insert(next);
        let next = local.len();
        local.entry(p.negative).or_insert(next);
    }
    let mut order: Vec<(usize, usize)> = local.iter().map(|(&g, &l)| (l, g)).collect();
    order.sort_unstable();
    let subset = order.iter().map(|&(_, g)| &trajs[g]).collect();
    let olds = order.iter().map(|&(_, g)| old_log_probs[g]).collect();
    let remapped = pairs.iter().map(|p| (local[&p.positive], local[&p.negative])).collect();
    (subset, olds, remapped)
}

/// Mean preference loss over `pairs` without building gradients.
pub fn dpo_mean_loss(prm: &PolicyNet, trajs: &[Trajectory], old_log_probs: &[f64], pairs: &[PreferencePair], beta: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(PolicyError::Usage("no preference pairs".into()));
    }
    let (subset, olds, local) = paired_subset(trajs, old_log_probs, pairs);
    let flat = FlatBatch::build(prm.arch(), &subset)?;
    let tok = prm.eval_token_log_probs(&flat.tokens)?;
    let mut per_traj = vec![0.0; subset.len()];
    for (row, lp) in tok.iter().enumerate() {
        per_traj[flat.step_traj[flat.tokens.row_step()[row]]] += lp;
    }
    let ratios: Vec<f64> = per_traj.iter().zip(&olds).map(|(a, b)| a - b).collect();
    let total: f64 = local.iter().map(|&(p, n)| dpo_loss_from_margin(dpo_margin(beta, ratios[p], ratios[n]))).sum();
    Ok(total / local.len() as f64)
}

/// Minibatch AdamW descent on the mean preference loss. With no pairs the
/// reward model is left untouched and the update reports `skipped`.
///
/// `old_log_probs[i]` is the snapshot log-probability of `trajs[i]`.
pub fn prm_update(
    prm: &mut PolicyNet,
    trajs: &[Trajectory],
    old_log_probs: &[f64],
    pairs: &[PreferencePair],
    cfg: &PrmUpdate,
) -> Result<PrmUpdateStats> {
    if pairs.is_empty() {
        return Ok(PrmUpdateStats {
            pairs: 0,
            skipped: true,
            optimizer_steps: 0,
            loss_before: None,
            loss_after: None,
        });
    }
    let loss_before = dpo_mean_loss(prm, trajs, old_log_probs, pairs, cfg.beta)?;
    let chunks = cfg.minibatches.clamp(1, pairs.len());
    let chunk_len = pairs.len().div_ceil(chunks);
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        for chunk in pairs.chunks(chunk_len) {
            let (subset, olds, local) = paired_subset(trajs, old_log_probs, chunk);
            let flat = FlatBatch::build(prm.arch(), &subset)?;
            let mut g = Graph::new();
            let loss = dpo_loss_graph(prm, prm.params(), &mut g, &flat, &olds, &local, cfg.beta)?;
            g.backward(loss)?;
            let params = prm.params_mut();
            params.zero_grad();
            params.accumulate_grads(&g)?;
            adamw_step(params, &cfg.optimizer)?;
            params.clear_grads();
            steps += 1;
        }
    }
    let loss_after = dpo_mean_loss(prm, trajs, old_log_probs, pairs, cfg.beta)?;
    Ok(PrmUpdateStats {
        pairs: pairs.len(),
        skipped: false,
        optimizer_steps: steps,
        loss_before: Some(loss_before),
        loss_after: Some(loss_after),
    })
}

/// Bradley–Terry probability that the first trajectory is preferred, as a
/// softmax over summed step rewards.
pub fn bt_probability(pos_step_rewards: &[f64], neg_step_rewards: &[f64]) -> f64 {
    let a: f64 = pos_step_rewards.iter().sum();
    let b: f64 = neg_step_rewards.iter().sum();
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    ea / (ea + eb)
}

/// Per-token `β · (log π_φ − log π_old)`.
pub fn token_rewards_from(beta: f64, prm_log_probs: &[f64], old_log_probs: &[f64]) -> Vec<f64> {
    prm_log_probs.iter().zip(old_log_probs).map(|(a, b)| beta * (a - b)).collect()
}

/// Collapses per-token rewards into one step reward.
pub fn aggregate(tokens: &[f64], agg: TokenAgg) -> f64 {
    let s: f64 = tokens.iter().sum();
    match agg {
        TokenAgg::Sum => s,
        TokenAgg::Mean => s / tokens.len() as f64,
    }
}

fn single_step_token_log_probs(net: &PolicyNet, ctx: &Context, action: &ActionSequence) -> Result<Vec<f64>> {
    let mut batch = TokenBatch::new(net.arch());
    batch.push(net.arch(), ctx, action)?;
    net.eval_token_log_probs(&batch)
}

/// Per-token implicit rewards of one action.
pub fn token_level_rewards(prm: &PolicyNet, old: &PolicyNet, ctx: &Context, action: &ActionSequence, beta: f64) -> Result<Vec<f64>> {
    check_compatible(prm, old)?;
    let a = single_step_token_log_probs(prm, ctx, action)?;
    let b = single_step_token_log_probs(old, ctx, action)?;
    Ok(token_rewards_from(beta, &a, &b))
}

/// Implicit reward of one step.
pub fn step_reward(prm: &PolicyNet, old: &PolicyNet, ctx: &Context, action: &ActionSequence, beta: f64, agg: TokenAgg) -> Result<f64> {
    Ok(aggregate(&token_level_rewards(prm, old, ctx, action, beta)?, agg))
}

/// Implicit step rewards for a batch of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRewardTable {
    pub beta: f64,
    pub prm_version: u64,
    pub snapshot_version: u64,
    /// `rewards[i][t]` for trajectory `i`, step `t`.
    pub rewards: Vec<Vec<f64>>,
    /// `tokens[i][t][k]`; sums to `rewards[i][t]` under [`TokenAgg::Sum`].
    pub tokens: Vec<Vec<Vec<f64>>>,
}

impl StepRewardTable {
    /// Builds the table from per-row log-probs of `flat` under both models.
    pub fn from_log_probs(
        flat: &FlatBatch,
        prm_tok: &[f64],
        old_tok: &[f64],
        beta: f64,
        agg: TokenAgg,
        prm_version: u64,
        snapshot_version: u64,
    ) -> Self {
        let tok = token_rewards_from(beta, prm_tok, old_tok);
        let per_step: Vec<Vec<f64>> = flat.step_rows().into_iter().map(|r| tok[r].to_vec()).collect();
        let step_vals: Vec<f64> = per_step.iter().map(|t| aggregate(t, agg)).collect();
        Self {
            beta,
            prm_version,
            snapshot_version,
            rewards: flat.split_steps(&step_vals),
            tokens: flat.split_steps(&per_step),
        }
    }

    pub fn compute(prm: &PolicyNet, old: &PolicyNet, trajs: &[&Trajectory], beta: f64, agg: TokenAgg, prm_version: u64, snapshot_version: u64) -> Result<Self> {
        check_compatible(prm, old)?;
        let flat = FlatBatch::build(prm.arch(), trajs)?;
        let a = prm.eval_token_log_probs(&flat.tokens)?;
        let b = old.eval_token_log_probs(&flat.tokens)?;
        Ok(Self::from_log_probs(&flat, &a, &b, beta, agg, prm_version, snapshot_version))
    }

    pub fn trajectory_sums(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn mean_step_reward(&self) -> f64 {
        let n: usize = self.rewards.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.rewards.iter().flatten().sum::<f64>() / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn o(success: bool) -> Outcome {
        Outcome {
            score: if success { 1.0 } else { 0.0 },
            success,
        }
    }

    #[test]
    fn cross_pairs_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let outs = [o(true), o(false), o(false), o(true)];
        let pairs = build_preference_pairs(0, 1, 0, &outs, PositiveRule::Success, 100, &mut rng);
        assert_eq!(pairs.len(), 4);
        assert!(pairs.iter().all(|p| outs[p.positive].success && !outs[p.negative].success));
        assert!(build_preference_pairs(0, 1, 0, &[o(false); 4], PositiveRule::Success, 100, &mut rng).is_empty());
    }

    #[test]
    fn cap_subsamples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let outs: Vec<Outcome> = (0..8).map(|i| o(i % 2 == 0)).collect();
        let pairs = build_preference_pairs(3, 1, 16, &outs, PositiveRule::Success, 8, &mut rng);
        assert_eq!(pairs.len(), 8);
        assert!(pairs.iter().all(|p| p.group == 3 && p.positive >= 16 && p.negative >= 16));
    }

    #[test]
    fn margin_loss_values() {
        assert!((dpo_loss_from_margin(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let m = dpo_margin(0.05, 0.8, -0.2);
        assert!((dpo_loss_from_margin(m) - 0.668_459_648_013_286_3).abs() < 1e-12);
        assert!(dpo_loss_from_margin(50.0) < 1e-20);
        assert!((dpo_loss_from_margin(-50.0) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn aggregation_modes() {
        assert_eq!(aggregate(&[0.1, 0.3], TokenAgg::Sum), 0.4);
        assert_eq!(aggregate(&[0.1, 0.3], TokenAgg::Mean), 0.2);
        assert_eq!(token_rewards_from(0.05, &[-1.0], &[-1.5]), vec![0.025]);
    }
}
