use istar::envs::{Observation, Token, Vocabulary};
use istar::policy::{ActionSequence, Context, Decoding, PolicyArch, PolicyNet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: [Token; 5] = [Token::End, Token::Move, Token::Push, Token::Up, Token::Down];

fn arch(max_tokens: usize, context_k: usize) -> PolicyArch {
    PolicyArch {
        vocabulary: Vocabulary::new(VOCAB.to_vec()),
        obs_len: 6,
        context_k,
        max_tokens,
        embed_dim: 3,
        hidden: 8,
    }
}

fn ctx(arch: &PolicyArch, seed: u64) -> Context {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs: Vec<Observation> = (0..arch.context_k)
        .map(|_| Observation {
            features: (0..arch.obs_len).map(|_| f64::from(u8::from(rng.gen_bool(0.4)))).collect(),
            tag: String::new(),
        })
        .collect();
    let refs: Vec<&Observation> = obs.iter().collect();
    let prev = [1usize, 3, 0];
    Context::encode(arch, seed, &refs, Some(&prev[..arch.max_tokens.min(3)])).unwrap()
}

/// Every well-formed action: non-END tokens followed by END, with the END
/// forced once the budget is reached.
fn all_actions(max_tokens: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for len in 0..max_tokens {
        let mut next = Vec::new();
        for prefix in &frontier {
            let mut done = prefix.clone();
            done.push(0);
            out.push(done);
            if len + 1 < max_tokens {
                for t in 1..VOCAB.len() {
                    let mut p = prefix.clone();
                    p.push(t);
                    next.push(p);
                }
            }
        }
        frontier = next;
    }
    out
}

fn action(arch: &PolicyArch, ids: &[usize]) -> ActionSequence {
    let tokens: Vec<Token> = ids.iter().map(|&i| VOCAB[i]).collect();
    ActionSequence::from_tokens(arch, &tokens).unwrap()
}

#[test]
fn action_space_is_normalized() {
    for (max_tokens, k) in [(2, 1), (3, 1), (3, 2), (4, 1)] {
        let a = arch(max_tokens, k);
        let actions = all_actions(max_tokens);
        // 1 + 4 + 4² + … + 4^(max_tokens-1)
        assert_eq!(actions.len(), (0..max_tokens as u32).map(|e| 4usize.pow(e)).sum::<usize>());
        for seed in 0..5 {
            let net = PolicyNet::new(a.clone(), seed).unwrap();
            let c = ctx(&a, seed);
            let total: f64 = actions.iter().map(|ids| net.action_log_prob(&c, &action(&a, ids)).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "max_tokens {max_tokens}: total {total}");
        }
    }
}

#[test]
fn uniform_logits_sample_uniformly() {
    let a = arch(3, 1);
    let mut net = PolicyNet::new(a.clone(), 11).unwrap();
    for name in ["out.w", "out.b"] {
        for v in net.params_mut().get_mut(name).unwrap().values_mut() {
            *v = 0.0;
        }
    }
    let c = ctx(&a, 0);
    let n = 20_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut first = [0usize; 5];
    let mut second = [0usize; 5];
    let mut second_n = 0;
    for _ in 0..n {
        let act = net.sample_action(&c, Decoding::Sample(1.0), &mut rng).unwrap();
        first[act.tokens[0]] += 1;
        if act.tokens[0] != 0 {
            second[act.tokens[1]] += 1;
            second_n += 1;
        }
        for lp in &act.log_probs {
            assert!((lp - (0.2f64).ln()).abs() < 1e-12);
        }
    }
    let within = |counts: &[usize; 5], n: usize| {
        let (p, nf) = (0.2, n as f64);
        let sigma = (nf * p * (1.0 - p)).sqrt();
        counts.iter().all(|&c| (c as f64 - nf * p).abs() < 3.0 * sigma)
    };
    assert!(within(&first, n), "{first:?}");
    assert!(within(&second, second_n), "{second:?}");
}

#[test]
fn save_load_preserves_log_probs() {
    let a = arch(3, 2);
    let net = PolicyNet::new(a.clone(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    net.save(&path, false).unwrap();
    let back = PolicyNet::load(&path).unwrap();
    assert_eq!(back.arch(), net.arch());
    for (i, ids) in all_actions(3).iter().enumerate() {
        let c = ctx(&a, i as u64);
        let act = action(&a, ids);
        assert_eq!(
            net.action_log_prob(&c, &act).unwrap().to_bits(),
            back.action_log_prob(&c, &act).unwrap().to_bits()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Log-probs recorded while sampling equal a later batch recomputation.
    #[test]
    fn recorded_log_probs_recompute(seed in any::<u64>(), temp in 0.2f64..3.0) {
        let a = arch(3, 1);
        let net = PolicyNet::new(a.clone(), seed).unwrap();
        let c = ctx(&a, seed ^ 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = net.sample_action(&c, Decoding::Sample(temp), &mut rng).unwrap();
        let again = net.action_log_prob(&c, &act).unwrap();
        prop_assert!((act.log_prob() - again).abs() < 1e-12);
        prop_assert!(act.log_prob() <= 0.0);
    }

    /// Greedy decoding picks the most likely first token.
    #[test]
    fn greedy_takes_the_mode(seed in any::<u64>()) {
        let a = arch(3, 1);
        let net = PolicyNet::new(a.clone(), seed).unwrap();
        let c = ctx(&a, seed);
        let dist = &net.next_token_log_probs(&[(&c, &[][..])]).unwrap()[0];
        let best = (0..dist.len()).max_by(|&i, &j| dist[i].total_cmp(&dist[j])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let act = net.sample_action(&c, Decoding::Greedy, &mut rng).unwrap();
        prop_assert_eq!(act.tokens[0], best);
    }
}
