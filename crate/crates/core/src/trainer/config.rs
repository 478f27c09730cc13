use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::advantage::EpisodeEstimator;
use crate::envs::{CorridorParams, EnvKind, EnvSpec, SokobanParams};
use crate::policy::{Decoding, PolicyArch};
use crate::prm::{PositiveRule, TokenAgg};
use crate::tensor::AdamW;

use super::TrainError;

/// Variant of the step-level signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Implicit step rewards, separate step advantage.
    #[default]
    None,
    /// Implicit rewards summed into the outcome before the episode estimator.
    Merged,
    /// Per-token implicit rewards, advantages and ratios.
    TokenLevel,
    /// Environment step rewards in place of implicit ones.
    GtStep,
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "merged" => Ok(Self::Merged),
            "token_level" => Ok(Self::TokenLevel),
            "gt_step" => Ok(Self::GtStep),
            other => Err(format!("unknown ablation {other:?}; expected none, merged, token_level or gt_step")),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Merged => "merged",
            Self::TokenLevel => "token_level",
            Self::GtStep => "gt_step",
        })
    }
}

/// Which reward-model weights produce the iteration's step rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardTiming {
    #[default]
    PreUpdate,
    PostUpdate,
}

/// Averaging of the surrogate over rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// Every row of the minibatch weighs the same.
    #[default]
    TotalSteps,
    /// Mean within each trajectory, then across trajectories.
    PerTrajMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// `exp(Σ_k Δ log p)` over the whole action.
    #[default]
    Sequence,
    /// `exp(mean_k Δ log p)`.
    LengthNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositiveRuleKind {
    #[default]
    Success,
    ScoreAbove,
}

/// Every knob of a training run. Loaded from flat TOML; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvKind,
    /// Sokoban side length including the wall ring.
    pub grid_size: usize,
    pub boxes: usize,
    pub corridor_length: usize,
    /// Episode step limit; 0 picks the environment default.
    pub horizon: usize,
    pub invalid_penalty: f64,

    pub algo: EpisodeEstimator,
    pub istar: bool,
    pub ablation: Ablation,
    pub seed: u64,
    pub iterations: usize,
    /// Tasks per iteration.
    pub groups: usize,
    /// Rollouts per task.
    pub group_size: usize,

    pub beta: f64,
    pub alpha: f64,
    pub clip_eps: f64,
    pub policy_lr: f64,
    pub prm_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub policy_epochs: usize,
    pub policy_minibatches: usize,
    pub prm_epochs: usize,
    pub prm_minibatches: usize,

    /// Preference pairs kept per group; 0 means `group_size`.
    pub pair_cap: usize,
    pub positive_rule: PositiveRuleKind,
    pub positive_threshold: f64,
    pub step_reward_token_agg: TokenAgg,
    pub prm_reward_timing: RewardTiming,
    pub rpp_std: bool,
    pub loss_norm: LossNorm,
    pub ratio_mode: RatioMode,

    pub rollout_temperature: f64,
    pub eval_temperature: f64,
    pub eval_greedy: bool,
    pub eval_episodes: usize,
    /// Evaluate every this many iterations (and at 0 and the end); 0 disables
    /// the periodic curve.
    pub eval_every: usize,
    pub eval_seed: u64,
    /// Checkpoint every this many iterations (and at 0 and the end).
    pub checkpoint_every: usize,

    pub context_k: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Sokoban,
            grid_size: 5,
            boxes: 1,
            corridor_length: 6,
            horizon: 0,
            invalid_penalty: -0.1,
            algo: EpisodeEstimator::Rloo,
            istar: true,
            ablation: Ablation::None,
            seed: 0,
            iterations: 200,
            groups: 8,
            group_size: 8,
            beta: 0.05,
            alpha: 1.0,
            clip_eps: 0.2,
            policy_lr: 1e-3,
            prm_lr: 2e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            policy_epochs: 1,
            policy_minibatches: 4,
            prm_epochs: 1,
            prm_minibatches: 1,
            pair_cap: 0,
            positive_rule: PositiveRuleKind::Success,
            positive_threshold: 0.0,
            step_reward_token_agg: TokenAgg::Sum,
            prm_reward_timing: RewardTiming::PreUpdate,
            rpp_std: true,
            loss_norm: LossNorm::TotalSteps,
            ratio_mode: RatioMode::Sequence,
            rollout_temperature: 1.0,
            eval_temperature: 0.4,
            eval_greedy: false,
            eval_episodes: 64,
            eval_every: 10,
            eval_seed: 1_000_003,
            checkpoint_every: 50,
            context_k: 2,
            embed_dim: 32,
            hidden: 128,
        }
    }
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Config(msg.into())
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, TrainError> {
        toml::from_str(s).map_err(|e| bad(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Checks ranges and flag combinations, naming the conflict.
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = |v: usize, name: &str| if v == 0 { Err(bad(format!("{name} must be at least 1"))) } else { Ok(()) };
        positive(self.groups, "groups")?;
        positive(self.policy_epochs, "policy_epochs")?;
        positive(self.policy_minibatches, "policy_minibatches")?;
        positive(self.prm_epochs, "prm_epochs")?;
        positive(self.prm_minibatches, "prm_minibatches")?;
        positive(self.context_k, "context_k")?;
        positive(self.embed_dim, "embed_dim")?;
        positive(self.hidden, "hidden")?;
        if self.group_size < 2 {
            return Err(bad("group_size must be at least 2"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(bad(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(bad(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(bad(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps)));
        }
        for (v, name) in [(self.policy_lr, "policy_lr"), (self.prm_lr, "prm_lr"), (self.adam_eps, "adam_eps")] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(format!("{name} must be positive, got {v}")));
            }
        }
        for (v, name) in [(self.adam_beta1, "adam_beta1"), (self.adam_beta2, "adam_beta2")] {
            if !(0.0..1.0).contains(&v) {
                return Err(bad(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(bad("weight_decay must be non-negative"));
        }
        for (v, name) in [(self.rollout_temperature, "rollout_temperature"), (self.eval_temperature, "eval_temperature")] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.istar && self.ablation != Ablation::None {
            return Err(bad(format!(
                "ablation {} modifies the step-reward path and needs istar on",
                self.ablation
            )));
        }
        if self.ablation == Ablation::GtStep && self.env == EnvKind::Corridor {
            return Err(bad("ablation gt_step needs environment step rewards; the corridor has none"));
        }
        self.env_spec()?;
        Ok(())
    }

    pub fn env_spec(&self) -> Result<EnvSpec, TrainError> {
        let spec = match self.env {
            EnvKind::Sokoban => {
                let mut p = SokobanParams::new(self.grid_size, self.boxes);
                if self.horizon > 0 {
                    p.horizon = self.horizon;
                }
                p.rewards.invalid_penalty = self.invalid_penalty;
                EnvSpec::Sokoban(p)
            }
            EnvKind::Corridor => {
                let mut p = CorridorParams::new(self.corridor_length, 12);
                if self.horizon > 0 {
                    p.horizon = self.horizon;
                }
                EnvSpec::Corridor(p)
            }
        };
        spec.reset(0).map_err(|e| bad(e.to_string()))?;
        Ok(spec)
    }

    pub fn arch(&self, spec: &EnvSpec) -> PolicyArch {
        PolicyArch {
            vocabulary: spec.vocabulary(),
            obs_len: spec.feature_len(),
            context_k: self.context_k,
            max_tokens: spec.max_action_tokens(),
            embed_dim: self.embed_dim,
            hidden: self.hidden,
        }
    }

    pub fn uses_prm(&self) -> bool {
        self.istar && self.ablation != Ablation::GtStep
    }

    pub fn pair_cap(&self) -> usize {
        if self.pair_cap == 0 {
            self.group_size
        } else {
            self.pair_cap
        }
    }

    pub fn positive_rule(&self) -> PositiveRule {
        match self.positive_rule {
            PositiveRuleKind::Success => PositiveRule::Success,
            PositiveRuleKind::ScoreAbove => PositiveRule::ScoreAbove(self.positive_threshold),
        }
    }

    fn adam(&self, lr: f64) -> AdamW {
        AdamW {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn policy_optimizer(&self) -> AdamW {
        self.adam(self.policy_lr)
    }

    pub fn prm_optimizer(&self) -> AdamW {
        self.adam(self.prm_lr)
    }

    pub fn eval_decoding(&self) -> Decoding {
        if self.eval_greedy {
            Decoding::Greedy
        } else {
            Decoding::Sample(self.eval_temperature)
        }
    }

    /// Short label such as `istar+rloo` or `vanilla+grpo`.
    pub fn label(&self) -> String {
        let base = if self.istar { "istar" } else { "vanilla" };
        match self.ablation {
            Ablation::None => format!("{base}+{}", self.algo),
            a => format!("{base}-{a}+{}", self.algo),
        }
    }
}
