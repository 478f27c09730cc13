mod common;

use common::triple;
use istar::prm::{
    bt_probability, dpo_loss_from_margin, dpo_mean_loss, dpo_pair_loss, prm_update, step_reward, trajectory_log_ratio, PreferencePair,
    PrmUpdate, StepRewardTable, TokenAgg,
};
use istar::tensor::AdamW;
use istar::trajectory::Trajectory;
use proptest::prelude::*;

/// `log π(τ)` step by step through single-action queries.
fn log_prob(net: &istar::policy::PolicyNet, t: &Trajectory) -> f64 {
    t.steps.iter().map(|s| net.action_log_prob(&s.context, &s.action).unwrap()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Per-step implicit rewards sum to β times the trajectory log-ratio.
    #[test]
    fn rewards_telescope(seed in any::<u64>(), beta in 0.01f64..1.0) {
        let t = triple(seed, 3, 0.4);
        let refs: Vec<&Trajectory> = t.trajs.iter().collect();
        let table = StepRewardTable::compute(&t.prm, &t.old, &refs, beta, TokenAgg::Sum, 1, 0).unwrap();
        for (i, tr) in t.trajs.iter().enumerate() {
            let steps: f64 = tr
                .steps
                .iter()
                .map(|s| step_reward(&t.prm, &t.old, &s.context, &s.action, beta, TokenAgg::Sum).unwrap())
                .sum();
            let whole = beta * trajectory_log_ratio(&t.prm, &t.old, tr).unwrap();
            prop_assert!((steps - whole).abs() < 1e-9, "{} vs {}", steps, whole);
            prop_assert!((table.trajectory_sums()[i] - whole).abs() < 1e-9);
        }
    }

    /// The preference loss is `−ln σ(β(Δ⁺ − Δ⁻))` of independently computed
    /// log-ratios, and its probability matches the softmax over summed step
    /// rewards.
    #[test]
    fn preference_loss_matches_oracle(seed in any::<u64>(), beta in 0.01f64..1.0) {
        let t = triple(seed, 2, 0.4);
        let (p, n) = (&t.trajs[0], &t.trajs[1]);
        let dp = log_prob(&t.prm, p) - log_prob(&t.old, p);
        let dn = log_prob(&t.prm, n) - log_prob(&t.old, n);
        let z = beta * (dp - dn);
        let oracle = (1.0 + (-z).exp()).ln();
        let loss = dpo_pair_loss(&t.prm, &t.old, p, n, beta).unwrap();
        prop_assert!((loss - oracle).abs() < 1e-9 * (1.0 + oracle));
        let table = StepRewardTable::compute(&t.prm, &t.old, &[p, n], beta, TokenAgg::Sum, 1, 0).unwrap();
        let bt = bt_probability(&table.rewards[0], &table.rewards[1]);
        prop_assert!((bt - (-loss).exp()).abs() < 1e-9, "{} vs {}", bt, (-loss).exp());
    }

    /// With the reward model equal to the snapshot every pair costs ln 2.
    #[test]
    fn loss_at_init_is_ln2(seed in any::<u64>(), beta in 0.01f64..1.0) {
        let mut t = triple(seed, 2, 0.0);
        t.prm = t.old.fresh_copy();
        let loss = dpo_pair_loss(&t.prm, &t.old, &t.trajs[0], &t.trajs[1], beta).unwrap();
        prop_assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }
}

#[test]
fn margin_loss_is_stable_at_extremes() {
    assert_eq!(dpo_loss_from_margin(0.0), std::f64::consts::LN_2);
    assert!((dpo_loss_from_margin(800.0)).abs() < 1e-300);
    assert!((dpo_loss_from_margin(-800.0) - 800.0).abs() < 1e-9);
    assert!((bt_probability(&[400.0], &[-400.0]) - 1.0).abs() < 1e-15);
}

#[test]
fn mean_aggregation_averages_tokens() {
    let t = triple(3, 2, 0.4);
    let s = &t.trajs[0].steps[0];
    let sum = step_reward(&t.prm, &t.old, &s.context, &s.action, 0.2, TokenAgg::Sum).unwrap();
    let mean = step_reward(&t.prm, &t.old, &s.context, &s.action, 0.2, TokenAgg::Mean).unwrap();
    assert!((mean * s.action.scored() as f64 - sum).abs() < 1e-12);
}

#[test]
fn update_lowers_the_preference_loss() {
    let mut t = triple(5, 8, 0.0);
    let olds: Vec<f64> = t.trajs.iter().map(|tr| log_prob(&t.old, tr)).collect();
    let pairs: Vec<PreferencePair> = (0..4)
        .map(|i| PreferencePair {
            group: 0,
            task_seed: t.trajs[2 * i].task_seed,
            positive: 2 * i,
            negative: 2 * i + 1,
        })
        .collect();
    let cfg = PrmUpdate {
        beta: 0.5,
        optimizer: AdamW {
            lr: 1e-2,
            ..AdamW::default()
        },
        epochs: 5,
        minibatches: 2,
    };
    let before = dpo_mean_loss(&t.prm, &t.trajs, &olds, &pairs, 0.5).unwrap();
    assert!((before - std::f64::consts::LN_2).abs() < 1e-12);
    let stats = prm_update(&mut t.prm, &t.trajs, &olds, &pairs, &cfg).unwrap();
    assert_eq!(stats.optimizer_steps, 10);
    assert_eq!(stats.loss_before, Some(before));
    assert!(stats.loss_after.unwrap() < before);
    // the snapshot is untouched
    let again: Vec<f64> = t.trajs.iter().map(|tr| log_prob(&t.old, tr)).collect();
    assert_eq!(olds, again);
}

#[test]
fn no_pairs_leaves_the_model_alone() {
    let mut t = triple(7, 2, 0.0);
    let before = t.prm.clone();
    let cfg = PrmUpdate {
        beta: 0.05,
        optimizer: AdamW::default(),
        epochs: 1,
        minibatches: 1,
    };
    let stats = prm_update(&mut t.prm, &t.trajs, &[0.0, 0.0], &[], &cfg).unwrap();
    assert!(stats.skipped);
    assert_eq!(t.prm, before);
}
