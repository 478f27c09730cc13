//! Implicit step rewards from a reward model trained on trajectory
//! preferences: rolls out one group, pairs winners against losers, takes a
//! few preference-loss steps and prints the per-step rewards before and after.
//!
//! ```text
//! cargo run --release --example implicit_rewards -- [seed] [beta]
//! ```

use istar::envs::{CorridorParams, EnvSpec};
use istar::policy::{Decoding, PolicyArch, PolicyNet};
use istar::prm::{build_preference_pairs, prm_update, trajectory_log_ratio, PositiveRule, PrmUpdate, StepRewardTable, TokenAgg};
use istar::tensor::AdamW;
use istar::trajectory::{outcome_reward, rollout, trajectory_log_prob, EpisodeTask, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn show(label: &str, table: &StepRewardTable, trajs: &[Trajectory]) {
    println!("{label}");
    for (i, (row, t)) in table.rewards.iter().zip(trajs).enumerate() {
        let cells: Vec<String> = row.iter().map(|r| format!("{r:+.3}")).collect();
        let won = t.steps.last().is_some_and(|s| s.info.success);
        println!("  traj {i} {}  sum {:+.3}  [{}]", if won { "win " } else { "loss" }, row.iter().sum::<f64>(), cells.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let beta: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.5);
    let spec = EnvSpec::Corridor(CorridorParams::new(4, 8));
    let arch = PolicyArch {
        vocabulary: spec.vocabulary(),
        obs_len: spec.feature_len(),
        context_k: 1,
        max_tokens: spec.max_action_tokens(),
        embed_dim: 8,
        hidden: 32,
    };
    let old = PolicyNet::new(arch, seed)?;
    // the reward model starts as a copy of the policy
    let mut prm = old.fresh_copy();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // first task whose group holds both a win and a loss
    let (trajs, pairs) = (seed..seed + 100)
        .find_map(|task| {
            let tasks: Vec<EpisodeTask> = (0..16)
                .map(|i| EpisodeTask {
                    episode_id: format!("g0-{i}"),
                    task_seed: task,
                    sample_seed: task * 1000 + i,
                })
                .collect();
            let trajs = rollout(&old, 0, &spec, &tasks, Decoding::Sample(1.0)).ok()?;
            let outcomes = trajs.iter().map(outcome_reward).collect::<Result<Vec<_>, _>>().ok()?;
            let pairs = build_preference_pairs(0, task, 0, &outcomes, PositiveRule::Success, 64, &mut rng);
            (!pairs.is_empty()).then_some((trajs, pairs))
        })
        .ok_or("no group with both a win and a loss")?;
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    show("at init every reward is zero:", &StepRewardTable::compute(&prm, &old, &refs, beta, TokenAgg::Sum, 0, 0)?, &trajs);
    let olds = trajs.iter().map(|t| trajectory_log_prob(&old, t)).collect::<Result<Vec<_>, _>>()?;
    let cfg = PrmUpdate {
        beta,
        optimizer: AdamW {
            lr: 1e-2,
            ..AdamW::default()
        },
        epochs: 20,
        minibatches: 1,
    };
    let stats = prm_update(&mut prm, &trajs, &olds, &pairs, &cfg)?;
    println!(
        "{} pairs, preference loss {:.4} -> {:.4}",
        stats.pairs,
        stats.loss_before.unwrap_or(f64::NAN),
        stats.loss_after.unwrap_or(f64::NAN)
    );
    let table = StepRewardTable::compute(&prm, &old, &refs, beta, TokenAgg::Sum, 1, 0)?;
    show("after training winners collect positive reward:", &table, &trajs);
    let gap = table
        .trajectory_sums()
        .iter()
        .zip(&trajs)
        .map(|(s, t)| Ok((s - beta * trajectory_log_ratio(&prm, &old, t)?).abs()))
        .collect::<Result<Vec<f64>, istar::policy::PolicyError>>()?
        .into_iter()
        .fold(0.0, f64::max);
    println!("max |sum of step rewards - beta * trajectory log-ratio| = {gap:.2e}");
    Ok(())
}
