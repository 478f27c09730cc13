//! Samples multi-token actions from a fresh policy and shows how the
//! per-token log-probabilities add up to the action's log-probability.
//!
//! ```text
//! cargo run --example sample_actions -- [seed] [temperature]
//! ```

use istar::envs::{EnvSpec, SokobanParams};
use istar::policy::{Context, Decoding, PolicyArch, PolicyNet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let temperature: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1.0);
    let spec = EnvSpec::Sokoban(SokobanParams::new(5, 1));
    let arch = PolicyArch {
        vocabulary: spec.vocabulary(),
        obs_len: spec.feature_len(),
        context_k: 2,
        max_tokens: spec.max_action_tokens(),
        embed_dim: 16,
        hidden: 64,
    };
    let net = PolicyNet::new(arch.clone(), seed)?;
    let env = spec.reset(seed)?;
    let obs = env.observation();
    println!("{} parameters\n{}", net.num_parameters(), obs.tag);
    let ctx = Context::encode(&arch, seed, &[&obs], None)?;
    let vocab = spec.vocabulary();
    let first = &net.next_token_log_probs(&[(&ctx, &[][..])])?[0];
    for (id, lp) in first.iter().enumerate() {
        println!("  p(first = {:<5}) = {:.4}", vocab.token(id).map_or("?", |t| t.as_str()), lp.exp());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for decoding in [Decoding::Sample(temperature), Decoding::Sample(temperature), Decoding::Greedy] {
        let act = net.sample_action(&ctx, decoding, &mut rng)?;
        let words: Vec<&str> = act.to_tokens(&vocab).iter().map(|t| t.as_str()).collect();
        let parts: Vec<String> = act.log_probs.iter().map(|lp| format!("{lp:.3}")).collect();
        println!(
            "{decoding:?}: [{}]  scored tokens {}  log p = {} = {:.4}  recomputed {:.4}",
            words.join(" "),
            act.scored(),
            parts.join(" + "),
            act.log_prob(),
            net.action_log_prob(&ctx, &act)?
        );
    }
    Ok(())
}
