//! Trains a short run, then re-executes every logged iteration from its
//! checkpoints and diffs the rollouts against the replay log.
//!
//! ```text
//! cargo run --release --example replay_run -- [run_dir]
//! ```

use istar::envs::EnvKind;
use istar::harness::cli::logged_iterations;
use istar::harness::replay::replay_iteration;
use istar::trainer::{self, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = std::env::args().nth(1).map_or_else(|| tmp.path().join("run"), Into::into);
    let cfg = TrainConfig {
        env: EnvKind::Corridor,
        iterations: 6,
        groups: 4,
        group_size: 4,
        hidden: 32,
        embed_dim: 8,
        eval_every: 3,
        eval_episodes: 16,
        checkpoint_every: 3,
        ..TrainConfig::default()
    };
    trainer::run(&cfg, &dir)?;
    println!("trained {} into {}", cfg.label(), dir.display());
    let mut ok = true;
    for it in logged_iterations(&dir) {
        let verdict = replay_iteration(&dir, it)?;
        println!("{verdict}");
        ok &= verdict.passed();
    }
    std::process::exit(if ok { 0 } else { 2 });
}
