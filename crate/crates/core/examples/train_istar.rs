//! Trains iStar + RLOO on 5×5 Sokoban and prints the learning curve.
//!
//! ```text
//! cargo run --release --example train_istar -- [iterations] [seed] [out_dir] [on|off]
//! ```

use std::time::Instant;

use istar::trainer::{TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let out = args.next().filter(|s| s != "-");
    let istar = args.next().is_none_or(|s| s != "off");
    let cfg = TrainConfig {
        iterations,
        seed,
        istar,
        ..TrainConfig::default()
    };
    if let Some(dir) = out {
        let paths = istar::trainer::run(&cfg, dir.as_ref())?;
        println!("{}", std::fs::read_to_string(paths.final_eval_summary())?);
        return Ok(());
    }
    let mut trainer = Trainer::new(cfg)?;
    println!("policy parameters: {}", trainer.policy().num_parameters());
    let start = Instant::now();
    for _ in 0..iterations {
        let rec = trainer.step()?;
        let m = &rec.metrics;
        println!(
            "iter {:4}  success {:.3}  len {:5.2}  reward {:6.3}  r_phi {:+.5}  prm_loss {:.4}  clip {:.3}  t {:.1}s",
            m.iteration,
            m.success_rate,
            m.mean_episode_length,
            m.mean_episode_reward,
            m.mean_step_reward.unwrap_or(0.0),
            m.prm_loss.unwrap_or(f64::NAN),
            m.clip_fraction,
            start.elapsed().as_secs_f64()
        );
    }
    let eval = trainer.evaluate()?;
    println!("{}", eval.summary());
    Ok(())
}
