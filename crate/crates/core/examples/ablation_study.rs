//! Lists the method × ablation × estimator grid, then trains the RLOO cells
//! on Sokoban across seeds and prints the aggregate table and aligned curves.
//!
//! ```text
//! cargo run --release --example ablation_study -- [iterations] [seeds] [out_dir]
//! ```

use std::path::PathBuf;

use istar::advantage::EpisodeEstimator;
use istar::harness::curves::emit_curves;
use istar::harness::{ablation_matrix, aggregate, format_aggregate};
use istar::trainer::{self, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let tmp = tempfile::tempdir()?;
    let out: PathBuf = args.next().map_or_else(|| tmp.path().to_path_buf(), Into::into);
    let base = TrainConfig {
        iterations,
        eval_every: (iterations / 4).max(1),
        ..TrainConfig::default()
    };
    let cells = ablation_matrix(&base);
    for c in &cells {
        println!("{:<44} {}", c.label(), c.config.as_ref().map_or_else(|e| format!("rejected: {e}"), |_| "ok".into()));
    }
    let mut dirs = Vec::new();
    for cell in cells.iter().filter(|c| c.algo == EpisodeEstimator::Rloo) {
        let Ok(cfg) = &cell.config else { continue };
        for seed in 0..seeds {
            let dir = out.join(format!("{}-s{seed}", cfg.label().replace('+', "-")));
            trainer::run(&TrainConfig { seed, ..cfg.clone() }, &dir)?;
            dirs.push(dir);
        }
    }
    println!();
    print!("{}", format_aggregate(&aggregate(&dirs)?));
    let per_seed0: Vec<PathBuf> = dirs.iter().filter(|d| d.to_string_lossy().ends_with("-s0")).cloned().collect();
    let aligned = emit_curves(&per_seed0, &out.join("curves"))?;
    println!("curves for {} runs over {} iterations in {}", aligned.runs.len(), aligned.iterations.len(), out.join("curves").display());
    Ok(())
}
