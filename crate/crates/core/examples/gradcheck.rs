//! Finite-difference audit of the token NLL, the preference loss and the
//! clipped surrogate, plus a deliberately broken backward pass that must fail.
//!
//! ```text
//! cargo run --release --example gradcheck -- [instances] [seed]
//! ```

use istar::harness::gradcheck::{run_gradcheck, Corruption};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let instances: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let table = run_gradcheck(instances, seed, None)?;
    print!("{table}");
    println!("\nwith one gradient scaled by 1.05:");
    print!("{}", run_gradcheck(instances.min(3), seed, Some(Corruption { factor: 1.05 }))?);
    std::process::exit(if table.passed() { 0 } else { 2 });
}
