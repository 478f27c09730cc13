//! Fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod corridor;

use istar::envs::{CorridorParams, EnvSpec, SokobanParams};
use istar::policy::{Decoding, PolicyArch, PolicyNet};
use istar::tensor::ParameterSet;
use istar::trajectory::{rollout, EpisodeTask, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Corridor for even seeds, 5×5 Sokoban for odd ones; short horizons.
pub fn small_spec(seed: u64) -> EnvSpec {
    if seed.is_multiple_of(2) {
        EnvSpec::Corridor(CorridorParams::new(4 + (seed as usize / 2) % 3, 8))
    } else {
        let mut p = SokobanParams::new(5, 1);
        p.horizon = 6;
        EnvSpec::Sokoban(p)
    }
}

pub fn small_arch(spec: &EnvSpec, rng: &mut ChaCha8Rng) -> PolicyArch {
    PolicyArch {
        vocabulary: spec.vocabulary(),
        obs_len: spec.feature_len(),
        context_k: rng.gen_range(1..=2),
        max_tokens: spec.max_action_tokens(),
        embed_dim: rng.gen_range(2..=4),
        hidden: rng.gen_range(4..=10),
    }
}

/// Adds uniform noise in `[-scale, scale]` to every weight.
pub fn jitter(params: &mut ParameterSet, scale: f64, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in names {
        for v in params.get_mut(&n).unwrap().values_mut() {
            *v += rng.gen_range(-scale..=scale);
        }
    }
}

pub fn tasks(seed: u64, n: usize) -> Vec<EpisodeTask> {
    (0..n as u64)
        .map(|i| EpisodeTask {
            episode_id: format!("t{i}"),
            task_seed: seed.wrapping_mul(31).wrapping_add(i / 2),
            sample_seed: seed.wrapping_mul(17).wrapping_add(i),
        })
        .collect()
}

/// A random policy, a jittered copy acting as reward model, and `n` sampled
/// trajectories of the policy.
pub struct Triple {
    pub spec: EnvSpec,
    pub old: PolicyNet,
    pub prm: PolicyNet,
    pub trajs: Vec<Trajectory>,
}

pub fn triple(seed: u64, n: usize, prm_noise: f64) -> Triple {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = small_spec(seed);
    let mut old = PolicyNet::new(small_arch(&spec, &mut rng), rng.gen()).unwrap();
    jitter(old.params_mut(), 0.3, &mut rng);
    let mut prm = old.fresh_copy();
    jitter(prm.params_mut(), prm_noise, &mut rng);
    let trajs = rollout(&old, 0, &spec, &tasks(seed, n), Decoding::Sample(1.0)).unwrap();
    Triple { spec, old, prm, trajs }
}
