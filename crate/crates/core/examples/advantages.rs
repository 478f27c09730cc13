//! The advantage estimators on a hand-made group: episode-level GRPO, RLOO
//! and REINFORCE++, step-level normalization, and their combination.
//!
//! ```text
//! cargo run --example advantages -- [alpha]
//! ```

use istar::advantage::{combine_adv, episode_adv_grpo, episode_adv_reinforcepp, episode_adv_rloo, implicit_step_adv};

fn row(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:+.3}")).collect::<Vec<_>>().join(" ")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let alpha: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1.0);
    let beta = 0.05;
    // four episodes of one task: two solved, two not
    let outcomes = [10.4, -2.0, 9.8, -2.0];
    let step_rewards = vec![
        vec![0.02, 0.03, 0.01],
        vec![-0.01, 0.00, -0.02, -0.03, -0.01],
        vec![0.01, -0.01, 0.02, 0.02],
        vec![-0.02, -0.01, 0.00, -0.02, -0.02],
    ];
    println!("outcomes     {}", row(&outcomes));
    println!("grpo         {}", row(&episode_adv_grpo(&outcomes)?));
    let rloo = episode_adv_rloo(&outcomes)?;
    println!("rloo         {}   (sum {})", row(&rloo), rloo.iter().sum::<f64>());
    println!("reinforce++  {}", row(&episode_adv_reinforcepp(&outcomes, true)?));

    let step = implicit_step_adv(&step_rewards, beta)?;
    println!("\nstep advantages, normalized over the union of the group's steps:");
    for (i, s) in step.iter().enumerate() {
        println!("  traj {i}: {}", row(s));
    }
    let lens: Vec<usize> = step_rewards.iter().map(Vec::len).collect();
    let table = combine_adv(&rloo, Some(&step), alpha, &lens)?;
    println!("\ncombined = rloo + {alpha} * step:");
    for (i, c) in table.combined.iter().enumerate() {
        println!("  traj {i}: {}", row(c));
    }
    Ok(())
}
