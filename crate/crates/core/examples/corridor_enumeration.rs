//! Plays every action sequence of the key-and-door corridor and counts the
//! successful ones, giving the exact success rate of a uniform policy.
//!
//! ```text
//! cargo run --release --example corridor_enumeration -- [length] [horizon] [seeds]
//! ```

use istar::envs::{Corridor, CorridorAction, CorridorParams};

/// Successful sequences below `env`, counting an episode that ends early as
/// all `3^(remaining)` sequences sharing its prefix.
fn wins(env: &Corridor, remaining: u32) -> (u64, u64) {
    let (mut won, mut episodes) = (0, 0);
    for a in CorridorAction::ALL {
        let mut e = env.clone();
        let out = e.step(&a.tokens()).expect("episode still running");
        if out.done {
            let weight = 3u64.pow(remaining - 1);
            won += if out.info.success { weight } else { 0 };
            episodes += 1;
        } else {
            let (w, n) = wins(&e, remaining - 1);
            won += w;
            episodes += n;
        }
    }
    (won, episodes)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let length: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(6);
    let horizon: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(12);
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let params = CorridorParams::new(length, horizon);
    let all = 3f64.powi(horizon as i32);
    for seed in 0..seeds {
        let env = Corridor::new(&params, seed)?;
        let (won, episodes) = wins(&env, horizon as u32);
        println!(
            "seed {seed}: {}  distinct episodes {episodes:>8}  successful sequences {won:>8} of {all}  p = {:.6}",
            env.render(),
            won as f64 / all
        );
    }
    Ok(())
}
