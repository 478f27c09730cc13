//! Episode-level and step-level advantage estimators.
//!
//! Every z-score uses the population standard deviation plus
//! [`NORM_EPS`]. A population whose values are all identical yields zeros.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdvError {
    #[error("need at least 2 outcomes, got {0}")]
    TooFew(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("alpha must be finite and non-negative, got {0}")]
    Alpha(f64),
    #[error("beta must be finite and positive, got {0}")]
    Beta(f64),
}

pub type Result<T> = std::result::Result<T, AdvError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeEstimator {
    Grpo,
    #[default]
    Rloo,
    Reinforcepp,
}

impl std::str::FromStr for EpisodeEstimator {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "grpo" => Ok(Self::Grpo),
            "rloo" => Ok(Self::Rloo),
            "reinforcepp" => Ok(Self::Reinforcepp),
            other => Err(format!("unknown estimator {other:?}; expected grpo, rloo or reinforcepp")),
        }
    }
}

impl std::fmt::Display for EpisodeEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Grpo => "grpo",
            Self::Rloo => "rloo",
            Self::Reinforcepp => "reinforcepp",
        })
    }
}

fn all_equal(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64], m: f64) -> f64 {
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `(x − mean) / (std + ε)`; zeros for an empty or constant population.
pub fn zscore(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() || all_equal(xs) {
        return vec![0.0; xs.len()];
    }
    let m = mean(xs);
    let s = population_std(xs, m);
    if s == 0.0 {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - m) / (s + NORM_EPS)).collect()
}

fn need_two(n: usize) -> Result<()> {
    if n < 2 {
        return Err(AdvError::TooFew(n));
    }
    Ok(())
}

/// Group z-score of outcome rewards.
pub fn episode_adv_grpo(outcomes: &[f64]) -> Result<Vec<f64>> {
    need_two(outcomes.len())?;
    Ok(zscore(outcomes))
}

/// `r_i` minus the mean of the other `N − 1` outcomes.
///
/// The last entry is set to minus the left-to-right sum of the others, so
/// the advantages sum to exactly zero in that order; it differs from the
/// closed form by a few ulps at most.
pub fn episode_adv_rloo(outcomes: &[f64]) -> Result<Vec<f64>> {
    let n = outcomes.len();
    need_two(n)?;
    if all_equal(outcomes) {
        return Ok(vec![0.0; n]);
    }
    let total: f64 = outcomes.iter().sum();
    let mut adv: Vec<f64> = outcomes.iter().map(|r| r - (total - r) / (n - 1) as f64).collect();
    let head: f64 = adv[..n - 1].iter().sum();
    adv[n - 1] = -head;
    Ok(adv)
}

/// Normalization over the whole batch rather than per group. With
/// `use_std = false` only the batch mean is subtracted.
pub fn episode_adv_reinforcepp(batch: &[f64], use_std: bool) -> Result<Vec<f64>> {
    need_two(batch.len())?;
    if use_std {
        return Ok(zscore(batch));
    }
    if all_equal(batch) {
        return Ok(vec![0.0; batch.len()]);
    }
    let m = mean(batch);
    Ok(batch.iter().map(|r| r - m).collect())
}

/// Episode advantages for a batch laid out as consecutive groups.
pub fn episode_advantages(estimator: EpisodeEstimator, groups: &[Vec<f64>], rpp_std: bool) -> Result<Vec<Vec<f64>>> {
    match estimator {
        EpisodeEstimator::Grpo => groups.iter().map(|g| episode_adv_grpo(g)).collect(),
        EpisodeEstimator::Rloo => groups.iter().map(|g| episode_adv_rloo(g)).collect(),
        EpisodeEstimator::Reinforcepp => {
            let flat: Vec<f64> = groups.iter().flatten().copied().collect();
            let adv = episode_adv_reinforcepp(&flat, rpp_std)?;
            let mut out = Vec::with_capacity(groups.len());
            let mut at = 0;
            for g in groups {
                out.push(adv[at..at + g.len()].to_vec());
                at += g.len();
            }
            Ok(out)
        }
    }
}

/// Z-score of every step reward over the union of all steps of the group.
pub fn step_adv(step_rewards: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = step_rewards.iter().flatten().copied().collect();
    let z = zscore(&flat);
    let mut out = Vec::with_capacity(step_rewards.len());
    let mut at = 0;
    for r in step_rewards {
        out.push(z[at..at + r.len()].to_vec());
        at += r.len();
    }
    out
}

/// Step advantages of implicit rewards `β·ℓ`. The z-score runs on the
/// log-ratios `ℓ = r / β`, so the result does not depend on `β` beyond
/// rounding; normalizing `r` directly would leak `β` through `ε`.
pub fn implicit_step_adv(step_rewards: &[Vec<f64>], beta: f64) -> Result<Vec<Vec<f64>>> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(AdvError::Beta(beta));
    }
    let ratios: Vec<Vec<f64>> = step_rewards.iter().map(|r| r.iter().map(|x| x / beta).collect()).collect();
    Ok(step_adv(&ratios))
}

/// Step advantages from environment step rewards. Environments without
/// informative step rewards give zeros and `false`.
pub fn ground_truth_step_adv(env_rewards: &[Vec<f64>], env_has_step_rewards: bool) -> (Vec<Vec<f64>>, bool) {
    if !env_has_step_rewards {
        return (env_rewards.iter().map(|r| vec![0.0; r.len()]).collect(), false);
    }
    (step_adv(env_rewards), true)
}

/// Per-step (or per-token) advantages of one group with their components.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTable {
    pub alpha: f64,
    /// One value per trajectory.
    pub episode: Vec<f64>,
    /// Same layout as `combined`; absent when no step term was used.
    pub step: Option<Vec<Vec<f64>>>,
    /// `combined[i][t]`, the value the policy update uses.
    pub combined: Vec<Vec<f64>>,
}

impl AdvantageTable {
    pub fn rows(&self) -> usize {
        self.combined.iter().map(Vec::len).sum()
    }

    pub fn all_zero(&self) -> bool {
        self.combined.iter().flatten().all(|&a| a == 0.0)
    }
}

/// `A = A^E + α·A^S` with `A^E` broadcast over each trajectory's rows.
/// Without a step term, or with `α = 0`, the table is the broadcast episode
/// advantage with no arithmetic applied.
pub fn combine_adv(episode: &[f64], step: Option<&[Vec<f64>]>, alpha: f64, lens: &[usize]) -> Result<AdvantageTable> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(AdvError::Alpha(alpha));
    }
    if episode.len() != lens.len() {
        return Err(AdvError::Shape(format!("{} episode advantages for {} trajectories", episode.len(), lens.len())));
    }
    if let Some(s) = step {
        if s.len() != lens.len() || s.iter().zip(lens).any(|(r, &l)| r.len() != l) {
            return Err(AdvError::Shape("step advantages do not match trajectory lengths".into()));
        }
    }
    let combined = match step {
        Some(s) if alpha != 0.0 => episode
            .iter()
            .zip(s)
            .map(|(&e, row)| row.iter().map(|&a| e + alpha * a).collect())
            .collect(),
        _ => episode.iter().zip(lens).map(|(&e, &l)| vec![e; l]).collect(),
    };
    Ok(AdvantageTable {
        alpha,
        episode: episode.to_vec(),
        step: step.map(<[Vec<f64>]>::to_vec),
        combined,
    })
}

/// Outcome plus summed implicit rewards, fed to an episode estimator. For
/// batch-level estimators pass every group at once.
pub fn merged_rewards(outcomes: &[Vec<f64>], step_sums: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if outcomes.len() != step_sums.len() || outcomes.iter().zip(step_sums).any(|(a, b)| a.len() != b.len()) {
        return Err(AdvError::Shape("step-reward sums do not match outcomes".into()));
    }
    Ok(outcomes
        .iter()
        .zip(step_sums)
        .map(|(o, s)| o.iter().zip(s).map(|(a, b)| a + b).collect())
        .collect())
}

/// Episode advantages of merged rewards, broadcast per row.
pub fn merged_reward_adv(
    outcomes: &[Vec<f64>],
    step_sums: &[Vec<f64>],
    estimator: EpisodeEstimator,
    rpp_std: bool,
    lens: &[Vec<usize>],
) -> Result<Vec<AdvantageTable>> {
    let merged = merged_rewards(outcomes, step_sums)?;
    let adv = episode_advantages(estimator, &merged, rpp_std)?;
    adv.iter().zip(lens).map(|(a, l)| combine_adv(a, None, 0.0, l)).collect()
}
