//! Clipped surrogate objective and the policy update.

use serde::{Deserialize, Serialize};

use crate::policy::{PolicyError, PolicyNet};
use crate::tensor::{adamw_step, AdamW, Graph, ParameterSet, Tensor, Var};
use crate::trajectory::{FlatBatch, Trajectory};

use super::config::{LossNorm, RatioMode};

type Result<T> = std::result::Result<T, PolicyError>;

/// Whether advantages and ratios live on whole actions or single tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Step,
    Token,
}

/// Trajectories with their reference log-probs and per-row advantages.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    pub flat: FlatBatch,
    /// Snapshot log-prob of every token row.
    pub old_tokens: Vec<f64>,
    /// One per step, or one per token row.
    pub advantages: Vec<f64>,
    pub granularity: Granularity,
    /// Trajectory of every advantage row.
    row_traj: Vec<usize>,
    /// Token rows per step.
    step_tokens: Vec<usize>,
}

impl PolicyBatch {
    /// `advantages[i]` holds trajectory `i`'s rows. Reference log-probs are the
    /// ones recorded at sampling time.
    pub fn new(net: &PolicyNet, trajs: &[&Trajectory], advantages: &[Vec<f64>], granularity: Granularity) -> Result<Self> {
        if trajs.len() != advantages.len() {
            return Err(PolicyError::Usage("one advantage row set per trajectory required".into()));
        }
        let flat = FlatBatch::build(net.arch(), trajs)?;
        let old_tokens: Vec<f64> = trajs.iter().flat_map(|t| t.steps.iter().flat_map(|s| s.action.log_probs.iter().copied())).collect();
        if old_tokens.len() != flat.tokens.rows() {
            return Err(PolicyError::Usage("recorded log-probs do not match the scored tokens".into()));
        }
        let mut row_traj = Vec::new();
        for (i, (t, a)) in trajs.iter().zip(advantages).enumerate() {
            let expected = match granularity {
                Granularity::Step => t.len(),
                Granularity::Token => t.steps.iter().map(|s| s.action.scored()).sum(),
            };
            if a.len() != expected {
                return Err(PolicyError::Usage(format!(
                    "trajectory {i}: {} advantages for {expected} rows",
                    a.len()
                )));
            }
            row_traj.extend(std::iter::repeat_n(i, expected));
        }
        let step_tokens = trajs.iter().flat_map(|t| t.steps.iter().map(|s| s.action.scored())).collect();
        Ok(Self {
            flat,
            old_tokens,
            advantages: advantages.iter().flatten().copied().collect(),
            granularity,
            row_traj,
            step_tokens,
        })
    }

    pub fn rows(&self) -> usize {
        self.advantages.len()
    }

    fn weights(&self, norm: LossNorm) -> Vec<f64> {
        match norm {
            LossNorm::TotalSteps => vec![1.0 / self.rows() as f64; self.rows()],
            LossNorm::PerTrajMean => {
                let n = self.flat.trajectories();
                let mut per = vec![0usize; n];
                for &t in &self.row_traj {
                    per[t] += 1;
                }
                self.row_traj.iter().map(|&t| 1.0 / (per[t] as f64 * n as f64)).collect()
            }
        }
    }
}

/// Graph nodes of one surrogate evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Surrogate {
    /// Objective to maximize (scalar).
    pub objective: Var,
    /// Importance ratio of every advantage row.
    pub ratios: Var,
}

/// `Σ_r w_r · min(ρ_r A_r, clip(ρ_r, 1 − ε, 1 + ε) A_r)` with
/// `ρ = exp(log π(a) − log π_old(a))` per row.
pub fn surrogate_graph(
    net: &PolicyNet,
    params: &ParameterSet,
    g: &mut Graph,
    batch: &PolicyBatch,
    clip_eps: f64,
    norm: LossNorm,
    ratio_mode: RatioMode,
    track_grad: bool,
) -> Result<Surrogate> {
    if batch.rows() == 0 {
        return Err(PolicyError::Usage("empty policy batch".into()));
    }
    let tok = net.token_log_probs_with(params, g, &batch.flat.tokens, track_grad)?;
    let old = g.constant(&Tensor::vector(batch.old_tokens.clone())?);
    let delta = g.sub(tok, old)?;
    let log_ratio = match batch.granularity {
        Granularity::Token => delta,
        Granularity::Step => {
            let summed = g.segment_sum(delta, batch.flat.tokens.row_step(), batch.flat.tokens.steps())?;
            match ratio_mode {
                RatioMode::Sequence => summed,
                RatioMode::LengthNormalized => {
                    let inv: Vec<f64> = batch.step_tokens.iter().map(|&k| 1.0 / k as f64).collect();
                    g.mul_const(summed, &inv)?
                }
            }
        }
    };
    let ratios = g.exp(log_ratio)?;
    let plain = g.mul_const(ratios, &batch.advantages)?;
    let clipped_ratio = g.clamp(ratios, 1.0 - clip_eps, 1.0 + clip_eps)?;
    let clipped = g.mul_const(clipped_ratio, &batch.advantages)?;
    let per_row = g.min(plain, clipped)?;
    let weighted = g.mul_const(per_row, &batch.weights(norm))?;
    let objective = g.sum(weighted)?;
    Ok(Surrogate { objective, ratios })
}

/// Evaluation-only surrogate value and clip fraction.
pub fn policy_objective(net: &PolicyNet, batch: &PolicyBatch, clip_eps: f64, norm: LossNorm, ratio_mode: RatioMode) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let s = surrogate_graph(net, net.params(), &mut g, batch, clip_eps, norm, ratio_mode, false)?;
    Ok((g.item(s.objective)?, clip_fraction(g.value(s.ratios), clip_eps)))
}

/// Share of rows whose ratio lies outside `[1 − ε, 1 + ε]`.
pub fn clip_fraction(ratios: &[f64], clip_eps: f64) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().filter(|r| (*r - 1.0).abs() > clip_eps).count() as f64 / ratios.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyUpdate {
    pub optimizer: AdamW,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub loss_norm: LossNorm,
    pub ratio_mode: RatioMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyUpdateStats {
    /// Objective over the full batch before any step.
    pub objective_before: f64,
    pub objective_after: f64,
    /// Mean over minibatch steps of the share of clipped rows.
    pub clip_fraction: f64,
    /// Largest `|ρ − 1|` seen in the first minibatch.
    pub first_step_max_ratio_dev: f64,
    pub optimizer_steps: usize,
    /// Minibatches whose advantages were all zero; no step was taken.
    pub skipped_minibatches: usize,
}

/// Gradient ascent on the surrogate, one AdamW step per minibatch. Each
/// minibatch is a contiguous run of trajectories. A minibatch whose
/// advantages are all zero is skipped: its gradient is zero, yet Adam
/// momentum would still move the weights.
pub fn policy_update(net: &mut PolicyNet, trajs: &[Trajectory], advantages: &[Vec<f64>], granularity: Granularity, cfg: &PolicyUpdate) -> Result<PolicyUpdateStats> {
    let all: Vec<&Trajectory> = trajs.iter().collect();
    let full = PolicyBatch::new(net, &all, advantages, granularity)?;
    let (objective_before, _) = policy_objective(net, &full, cfg.clip_eps, cfg.loss_norm, cfg.ratio_mode)?;
    let chunks = cfg.minibatches.clamp(1, trajs.len().max(1));
    let chunk_len = trajs.len().div_ceil(chunks).max(1);
    let mut steps = 0;
    let mut skipped = 0;
    let mut clip_sum = 0.0;
    let mut first_dev = None;
    for _ in 0..cfg.epochs {
        for (c, idx) in (0..trajs.len()).collect::<Vec<_>>().chunks(chunk_len).enumerate() {
            let sub: Vec<&Trajectory> = idx.iter().map(|&i| &trajs[i]).collect();
            let adv: Vec<Vec<f64>> = idx.iter().map(|&i| advantages[i].clone()).collect();
            let batch = PolicyBatch::new(net, &sub, &adv, granularity)?;
            let mut g = Graph::new();
            let s = surrogate_graph(net, net.params(), &mut g, &batch, cfg.clip_eps, cfg.loss_norm, cfg.ratio_mode, true)?;
            let ratios = g.value(s.ratios);
            if first_dev.is_none() && c == 0 {
                first_dev = Some(ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max));
            }
            clip_sum += clip_fraction(ratios, cfg.clip_eps);
            if batch.advantages.iter().all(|&a| a == 0.0) {
                skipped += 1;
                continue;
            }
            let loss = g.scale(s.objective, -1.0)?;
            g.backward(loss)?;
            let params = net.params_mut();
            params.zero_grad();
            params.accumulate_grads(&g)?;
            adamw_step(params, &cfg.optimizer)?;
            params.clear_grads();
            steps += 1;
        }
    }
    let (objective_after, _) = policy_objective(net, &full, cfg.clip_eps, cfg.loss_norm, cfg.ratio_mode)?;
    let seen = steps + skipped;
    Ok(PolicyUpdateStats {
        objective_before,
        objective_after,
        clip_fraction: if seen == 0 { 0.0 } else { clip_sum / seen as f64 },
        first_step_max_ratio_dev: first_dev.unwrap_or(0.0),
        optimizer_steps: steps,
        skipped_minibatches: skipped,
    })
}
