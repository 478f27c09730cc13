use istar::advantage::{
    combine_adv, episode_adv_grpo, episode_adv_reinforcepp, episode_adv_rloo, episode_advantages, implicit_step_adv, merged_reward_adv,
    step_adv, EpisodeEstimator,
};
use proptest::prelude::*;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Outcomes on a 0.1 grid: any non-constant group has population std of at
/// least ~0.02, far above the normalizer's ε.
fn outcomes(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-100i32..100).prop_map(|k| f64::from(k) * 0.1), n)
}

fn ragged() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..12), 2..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn grpo_is_standardized(xs in outcomes(2..17)) {
        let a = episode_adv_grpo(&xs).unwrap();
        let (m, s) = mean_std(&a);
        prop_assert!(m.abs() < 1e-9);
        if mean_std(&xs).1 > 0.0 {
            prop_assert!((s - 1.0).abs() < 1e-6, "std {}", s);
        } else {
            prop_assert!(a.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rloo_sums_to_exact_zero(xs in prop::collection::vec(-50.0f64..50.0, 2..17)) {
        let a = episode_adv_rloo(&xs).unwrap();
        prop_assert_eq!(a.iter().sum::<f64>(), 0.0);
        // leave-one-out closed form
        let n = xs.len() as f64;
        for (i, v) in a.iter().enumerate() {
            let others: f64 = xs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, x)| x).sum();
            prop_assert!((v - (xs[i] - others / (n - 1.0))).abs() < 1e-9);
        }
    }

    #[test]
    fn reinforcepp_normalizes_the_whole_batch(groups in prop::collection::vec(outcomes(2..9), 1..5)) {
        let adv = episode_advantages(EpisodeEstimator::Reinforcepp, &groups, true).unwrap();
        let flat: Vec<f64> = adv.iter().flatten().copied().collect();
        let direct = episode_adv_reinforcepp(&groups.iter().flatten().copied().collect::<Vec<_>>(), true).unwrap();
        prop_assert_eq!(&flat, &direct);
        let (m, s) = mean_std(&flat);
        prop_assert!(m.abs() < 1e-9);
        prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn step_advantages_standardize_the_union(rows in ragged()) {
        let a = step_adv(&rows);
        for (r, x) in rows.iter().zip(&a) {
            prop_assert_eq!(r.len(), x.len());
        }
        let flat: Vec<f64> = a.iter().flatten().copied().collect();
        let (m, s) = mean_std(&flat);
        prop_assert!(m.abs() < 1e-9);
        prop_assert!((s - 1.0).abs() < 1e-6);
    }

    /// Scaling the log-ratios by any β leaves the step advantages unchanged.
    #[test]
    fn step_advantages_ignore_beta(ratios in ragged()) {
        let at = |beta: f64| {
            let r: Vec<Vec<f64>> = ratios.iter().map(|row| row.iter().map(|l| beta * l).collect()).collect();
            implicit_step_adv(&r, beta).unwrap()
        };
        let base = at(0.05);
        for beta in [0.01, 0.5] {
            for (a, b) in at(beta).iter().flatten().zip(base.iter().flatten()) {
                prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
            }
        }
    }

    /// α = 0 reproduces the episode-only table bit for bit.
    #[test]
    fn alpha_zero_is_vanilla(xs in outcomes(2..9), seed in any::<u64>()) {
        let lens: Vec<usize> = (0..xs.len()).map(|i| 1 + (seed as usize >> (i % 32)) % 7).collect();
        let e = episode_adv_rloo(&xs).unwrap();
        let s: Vec<Vec<f64>> = lens.iter().map(|&l| (0..l).map(|k| (k as f64 * 0.37).sin()).collect()).collect();
        let with = combine_adv(&e, Some(&s), 0.0, &lens).unwrap();
        let vanilla = combine_adv(&e, None, 1.0, &lens).unwrap();
        let bits = |t: &Vec<Vec<f64>>| t.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&with.combined), bits(&vanilla.combined));
    }

    #[test]
    fn combine_adds_weighted_step_term(xs in outcomes(2..6), alpha in 0.0f64..3.0) {
        let lens: Vec<usize> = (0..xs.len()).map(|i| i + 1).collect();
        let e = episode_adv_grpo(&xs).unwrap();
        let s: Vec<Vec<f64>> = lens.iter().map(|&l| (0..l).map(|k| k as f64 - 1.0).collect()).collect();
        let t = combine_adv(&e, Some(&s), alpha, &lens).unwrap();
        for i in 0..xs.len() {
            for k in 0..lens[i] {
                prop_assert!((t.combined[i][k] - (e[i] + alpha * s[i][k])).abs() < 1e-12);
            }
        }
    }

    /// Merged rewards are the outcome plus the summed step rewards, then the
    /// ordinary episode estimator.
    #[test]
    fn merged_matches_manual_sum(xs in outcomes(2..9), shift in -2.0f64..2.0) {
        let sums: Vec<f64> = (0..xs.len()).map(|i| shift * i as f64).collect();
        let lens: Vec<usize> = vec![3; xs.len()];
        let t = merged_reward_adv(std::slice::from_ref(&xs), std::slice::from_ref(&sums), EpisodeEstimator::Rloo, false, &[lens]).unwrap();
        let manual: Vec<f64> = xs.iter().zip(&sums).map(|(a, b)| a + b).collect();
        let e = episode_adv_rloo(&manual).unwrap();
        prop_assert!(t[0].step.is_none());
        for (row, v) in t[0].combined.iter().zip(&e) {
            prop_assert!(row.iter().all(|x| x.to_bits() == v.to_bits()));
        }
    }
}

#[test]
fn documented_examples() {
    let g = episode_adv_grpo(&[10.0, 0.0, 0.0, 10.0]).unwrap();
    for (a, b) in g.iter().zip([1.0, -1.0, -1.0, 1.0]) {
        assert!((a - b).abs() < 1e-8);
    }
    // [1, 0, 0, 0]: 1 − 0, 0 − 1/3, …
    let r = episode_adv_rloo(&[1.0, 0.0, 0.0, 0.0]).unwrap();
    for (a, b) in r.iter().zip([1.0, -1.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0]) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(episode_adv_rloo(&[2.0; 4]).unwrap(), vec![0.0; 4]);
    assert!(implicit_step_adv(&[vec![1.0]], 0.0).is_err());
    assert!(combine_adv(&[0.0], None, -1.0, &[1]).is_err());
}
