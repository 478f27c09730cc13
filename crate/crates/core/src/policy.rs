//! Autoregressive token policy.
//!
//! Each environment step the policy emits a short token sequence. Token
//! `k` is predicted from the encoded context plus embeddings of tokens
//! `0..k`; unused prefix slots hold a padding embedding. The last position
//! of the budget is always `END` and is not scored, so the probabilities of
//! all sequences of length `<= L` sum to one.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{Observation, Token, Vocabulary};
use crate::tensor::{read_checkpoint, write_checkpoint, Graph, ParameterSet, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("vocabulary error: {0}")]
    Vocabulary(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// Sizes that fully determine the parameter shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyArch {
    pub vocabulary: Vocabulary,
    pub obs_len: usize,
    /// Number of most recent observations in the context.
    pub context_k: usize,
    /// Token budget per step, including the closing `END`.
    pub max_tokens: usize,
    pub embed_dim: usize,
    pub hidden: usize,
}

impl PolicyArch {
    pub fn vocab_len(&self) -> usize {
        self.vocabulary.len()
    }

    /// Padding row of the embedding table.
    fn pad_id(&self) -> usize {
        self.vocab_len()
    }

    /// Prefix slots fed to the network; the final position is never predicted.
    fn slots(&self) -> usize {
        self.max_tokens - 1
    }

    pub fn context_len(&self) -> usize {
        self.context_k * self.obs_len + self.max_tokens * self.vocab_len()
    }

    pub fn input_len(&self) -> usize {
        self.context_len() + self.slots() * self.embed_dim
    }

    fn validate(&self) -> Result<()> {
        if self.max_tokens < 2 {
            return Err(PolicyError::Usage("token budget must allow one token plus END".into()));
        }
        if self.context_k < 1 || self.embed_dim < 1 || self.hidden < 1 || self.obs_len < 1 {
            return Err(PolicyError::Usage("architecture sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Encoded conditioning for one step: task id, recent observations and the
/// previous action.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub task_id: u64,
    pub features: Vec<f64>,
}

impl Context {
    /// `history` is oldest-first; only the last `context_k` entries are used
    /// and missing slots are zero. `prev_action` holds token ids.
    pub fn encode(arch: &PolicyArch, task_id: u64, history: &[&Observation], prev_action: Option<&[usize]>) -> Result<Self> {
        let mut features = vec![0.0; arch.context_len()];
        for (slot, obs) in history.iter().rev().take(arch.context_k).enumerate() {
            if obs.features.len() != arch.obs_len {
                return Err(PolicyError::Usage(format!(
                    "observation has {} features, architecture expects {}",
                    obs.features.len(),
                    arch.obs_len
                )));
            }
            features[slot * arch.obs_len..(slot + 1) * arch.obs_len].copy_from_slice(&obs.features);
        }
        if let Some(action) = prev_action {
            let base = arch.context_k * arch.obs_len;
            let v = arch.vocab_len();
            for (pos, &id) in action.iter().take(arch.max_tokens).enumerate() {
                if id >= v {
                    return Err(PolicyError::Vocabulary(format!("token id {id} outside vocabulary of {v}")));
                }
                features[base + pos * v + id] = 1.0;
            }
        }
        Ok(Self { task_id, features })
    }
}

/// Token ids of one action plus their temperature-1 log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequence {
    pub tokens: Vec<usize>,
    /// One entry per scored token; a forced closing `END` is not scored.
    pub log_probs: Vec<f64>,
}

impl ActionSequence {
    pub fn scored(&self) -> usize {
        self.log_probs.len()
    }

    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    pub fn to_tokens(&self, vocab: &Vocabulary) -> Vec<Token> {
        self.tokens.iter().map(|&i| vocab.token(i).expect("ids come from this vocabulary")).collect()
    }

    /// Builds an action from tokens, scoring all but a forced closing `END`.
    /// Log-probs are left at zero; fill them with [`PolicyNet::action_log_prob`].
    pub fn from_tokens(arch: &PolicyArch, tokens: &[Token]) -> Result<Self> {
        let ids = tokens
            .iter()
            .map(|&t| {
                arch.vocabulary
                    .id(t)
                    .ok_or_else(|| PolicyError::Vocabulary(format!("token {t} not in vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        let scored = scored_len(arch, &ids)?;
        Ok(Self {
            tokens: ids,
            log_probs: vec![0.0; scored],
        })
    }
}

/// Number of positions of `ids` that the policy actually chose.
fn scored_len(arch: &PolicyArch, ids: &[usize]) -> Result<usize> {
    let end = arch.vocabulary.end_id();
    if ids.is_empty() || ids.len() > arch.max_tokens {
        return Err(PolicyError::Usage(format!("action length {} outside 1..={}", ids.len(), arch.max_tokens)));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= arch.vocab_len()) {
        return Err(PolicyError::Vocabulary(format!("token id {bad} outside vocabulary of {}", arch.vocab_len())));
    }
    if *ids.last().expect("non-empty") != end || ids[..ids.len() - 1].contains(&end) {
        return Err(PolicyError::Usage("action must end with exactly one END".into()));
    }
    Ok(if ids.len() == arch.max_tokens { ids.len() - 1 } else { ids.len() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    /// Sample from `softmax(logits / temperature)`.
    Sample(f64),
}

/// Flattened token rows for batched log-prob evaluation.
///
/// Contexts are stored once per step; each scored token is a row that
/// points at its step through `row_step`.
#[derive(Debug, Clone, Default)]
pub struct TokenBatch {
    contexts: Vec<f64>,
    context_len: usize,
    slot_ids: Vec<Vec<usize>>,
    targets: Vec<usize>,
    row_step: Vec<usize>,
    steps: usize,
}

impl TokenBatch {
    pub fn new(arch: &PolicyArch) -> Self {
        Self {
            context_len: arch.context_len(),
            slot_ids: vec![Vec::new(); arch.slots()],
            ..Self::default()
        }
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn row_step(&self) -> &[usize] {
        &self.row_step
    }

    /// Adds one step's scored tokens.
    pub fn push(&mut self, arch: &PolicyArch, ctx: &Context, action: &ActionSequence) -> Result<()> {
        if ctx.features.len() != self.context_len {
            return Err(PolicyError::Usage(format!(
                "context has {} features, architecture expects {}",
                ctx.features.len(),
                self.context_len
            )));
        }
        let scored = scored_len(arch, &action.tokens)?;
        self.contexts.extend_from_slice(&ctx.features);
        for k in 0..scored {
            for (slot, ids) in self.slot_ids.iter_mut().enumerate() {
                ids.push(if slot < k { action.tokens[slot] } else { arch.pad_id() });
            }
            self.targets.push(action.tokens[k]);
            self.row_step.push(self.steps);
        }
        self.steps += 1;
        Ok(())
    }

    fn push_prefix(&mut self, arch: &PolicyArch, ctx: &Context, prefix: &[usize]) {
        self.contexts.extend_from_slice(&ctx.features);
        for (slot, ids) in self.slot_ids.iter_mut().enumerate() {
            ids.push(prefix.get(slot).copied().unwrap_or(arch.pad_id()));
        }
        self.targets.push(0);
        self.row_step.push(self.steps);
        self.steps += 1;
    }
}

/// The policy network `π_θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    arch: PolicyArch,
    params: ParameterSet,
    snapshots_taken: u64,
}

fn slot_weight(slot: usize) -> String {
    format!("l1.slot{slot}.w")
}

impl PolicyNet {
    /// Uniform `±1/sqrt(fan_in)` init; the output layer is scaled down so the
    /// initial policy is close to uniform.
    ///
    /// The first layer is split into a context block and one block per prefix
    /// slot, which is the same map as one dense layer over the concatenated
    /// input.
    pub fn new(arch: PolicyArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        let mut uniform = |rows: usize, cols: usize, bound: f64| {
            let v = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::matrix(rows, cols, v).expect("finite init")
        };
        let v = arch.vocab_len();
        let h = arch.hidden;
        let first = 1.0 / (arch.input_len() as f64).sqrt();
        params.insert("embed", uniform(v + 1, arch.embed_dim, 0.5));
        params.insert("l1.ctx.w", uniform(arch.context_len(), h, first));
        for slot in 0..arch.slots() {
            params.insert(slot_weight(slot), uniform(arch.embed_dim, h, first));
        }
        params.insert("l1.b", Tensor::zeros(vec![h]));
        params.insert("l2.w", uniform(h, h, 1.0 / (h as f64).sqrt()));
        params.insert("l2.b", Tensor::zeros(vec![h]));
        params.insert("out.w", uniform(h, v, 0.1 / (h as f64).sqrt()));
        params.insert("out.b", Tensor::zeros(vec![v]));
        Ok(Self {
            arch,
            params,
            snapshots_taken: 0,
        })
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }

    /// Same weights, fresh optimizer state.
    pub fn fresh_copy(&self) -> PolicyNet {
        PolicyNet {
            arch: self.arch.clone(),
            params: self.params.fresh_copy(),
            snapshots_taken: 0,
        }
    }

    pub fn from_params(arch: PolicyArch, params: ParameterSet) -> Result<Self> {
        let reference = PolicyNet::new(arch.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(PolicyError::Checkpoint(format!(
                        "{name}: shape {:?} does not match architecture {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(PolicyError::Checkpoint(format!("missing parameter {name}"))),
            }
        }
        if params.len() != reference.params.len() {
            return Err(PolicyError::Checkpoint("unexpected extra parameters".into()));
        }
        Ok(Self {
            arch,
            params,
            snapshots_taken: 0,
        })
    }

    /// Log-softmax over the vocabulary for every row of `batch`: `[rows, V]`.
    pub fn log_probs_all(&self, g: &mut Graph, batch: &TokenBatch, track_grad: bool) -> Result<Var> {
        self.log_probs_all_with(&self.params, g, batch, track_grad)
    }

    /// As [`PolicyNet::log_probs_all`] but reading weights from `params`,
    /// which must have this network's shapes. Used for perturbation checks.
    pub fn log_probs_all_with(&self, params: &ParameterSet, g: &mut Graph, batch: &TokenBatch, track_grad: bool) -> Result<Var> {
        if batch.rows() == 0 {
            return Err(PolicyError::Usage("empty token batch".into()));
        }
        let leaf = |g: &mut Graph, name: &str| -> Result<Var> {
            Ok(if track_grad {
                g.param(params, name)?
            } else {
                g.frozen(params, name)?
            })
        };
        let h = self.arch.hidden;
        let ctx = g.constant(&Tensor::matrix(batch.steps, batch.context_len, batch.contexts.clone())?);
        let w_ctx = leaf(g, "l1.ctx.w")?;
        let b1 = leaf(g, "l1.b")?;
        let per_step = g.affine(ctx, w_ctx, b1)?;
        let mut pre = g.embed(per_step, &batch.row_step)?;
        let table = leaf(g, "embed")?;
        let no_bias = g.constant(&Tensor::zeros(vec![h]));
        for (slot, ids) in batch.slot_ids.iter().enumerate() {
            let w = leaf(g, &slot_weight(slot))?;
            let projected = g.affine(table, w, no_bias)?;
            let rows = g.embed(projected, ids)?;
            pre = g.add(pre, rows)?;
        }
        let h1 = g.tanh(pre)?;
        let (w2, b2) = (leaf(g, "l2.w")?, leaf(g, "l2.b")?);
        let a2 = g.affine(h1, w2, b2)?;
        let h2 = g.tanh(a2)?;
        let (wo, bo) = (leaf(g, "out.w")?, leaf(g, "out.b")?);
        let logits = g.affine(h2, wo, bo)?;
        Ok(g.log_softmax(logits, 1)?)
    }

    /// Log-probability of each scored token: `[rows]`.
    pub fn token_log_probs(&self, g: &mut Graph, batch: &TokenBatch, track_grad: bool) -> Result<Var> {
        self.token_log_probs_with(&self.params, g, batch, track_grad)
    }

    pub fn token_log_probs_with(&self, params: &ParameterSet, g: &mut Graph, batch: &TokenBatch, track_grad: bool) -> Result<Var> {
        let all = self.log_probs_all_with(params, g, batch, track_grad)?;
        Ok(g.pick(all, &batch.targets)?)
    }

    /// Differentiable per-step log-probabilities under `params`: `[steps]`.
    pub fn step_log_probs_with(&self, params: &ParameterSet, g: &mut Graph, batch: &TokenBatch, track_grad: bool) -> Result<Var> {
        let tok = self.token_log_probs_with(params, g, batch, track_grad)?;
        Ok(g.segment_sum(tok, &batch.row_step, batch.steps)?)
    }

    /// Per-step action log-probabilities: `[steps]`.
    pub fn step_log_probs(&self, g: &mut Graph, batch: &TokenBatch, track_grad: bool) -> Result<Var> {
        let tok = self.token_log_probs(g, batch, track_grad)?;
        Ok(g.segment_sum(tok, &batch.row_step, batch.steps)?)
    }

    /// Evaluation-only per-token log-probs.
    pub fn eval_token_log_probs(&self, batch: &TokenBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let v = self.token_log_probs(&mut g, batch, false)?;
        Ok(g.value(v).to_vec())
    }

    /// `Σ_k log p(token_k | ctx, token_<k)`.
    pub fn action_log_prob(&self, ctx: &Context, action: &ActionSequence) -> Result<f64> {
        let mut batch = TokenBatch::new(&self.arch);
        batch.push(&self.arch, ctx, action)?;
        Ok(self.eval_token_log_probs(&batch)?.iter().sum())
    }

    /// Next-token log-distributions for a set of `(context, prefix)` pairs.
    pub fn next_token_log_probs(&self, queries: &[(&Context, &[usize])]) -> Result<Vec<Vec<f64>>> {
        let mut batch = TokenBatch::new(&self.arch);
        for (ctx, prefix) in queries {
            if ctx.features.len() != self.arch.context_len() {
                return Err(PolicyError::Usage("context length mismatch".into()));
            }
            batch.push_prefix(&self.arch, ctx, prefix);
        }
        let mut g = Graph::new();
        let all = self.log_probs_all(&mut g, &batch, false)?;
        let v = self.arch.vocab_len();
        Ok(g.value(all).chunks(v).map(<[f64]>::to_vec).collect())
    }

    /// Samples one action per context, drawing each context's tokens from
    /// its own RNG so results do not depend on how contexts are batched.
    pub fn sample_actions(&self, contexts: &[&Context], decoding: Decoding, rngs: &mut [ChaCha8Rng]) -> Result<Vec<ActionSequence>> {
        if contexts.len() != rngs.len() {
            return Err(PolicyError::Usage("one RNG per context required".into()));
        }
        if let Decoding::Sample(t) = decoding {
            if !(t > 0.0) {
                return Err(PolicyError::Usage(format!("temperature must be positive, got {t}")));
            }
        }
        let end = self.arch.vocabulary.end_id();
        let mut out: Vec<ActionSequence> = contexts
            .iter()
            .map(|_| ActionSequence {
                tokens: Vec::new(),
                log_probs: Vec::new(),
            })
            .collect();
        let mut active: Vec<usize> = (0..contexts.len()).collect();
        for pos in 0..self.arch.max_tokens {
            if active.is_empty() {
                break;
            }
            if pos + 1 == self.arch.max_tokens {
                for &i in &active {
                    out[i].tokens.push(end);
                }
                break;
            }
            let queries: Vec<(&Context, &[usize])> = active.iter().map(|&i| (contexts[i], out[i].tokens.as_slice())).collect();
            let dists = self.next_token_log_probs(&queries)?;
            let mut still = Vec::with_capacity(active.len());
            for (&i, lp) in active.iter().zip(&dists) {
                let tok = choose(lp, decoding, &mut rngs[i]);
                out[i].tokens.push(tok);
                out[i].log_probs.push(lp[tok]);
                if tok != end {
                    still.push(i);
                }
            }
            active = still;
        }
        Ok(out)
    }

    pub fn sample_action(&self, ctx: &Context, decoding: Decoding, rng: &mut ChaCha8Rng) -> Result<ActionSequence> {
        let mut one = [rng.clone()];
        let a = self.sample_actions(&[ctx], decoding, &mut one)?;
        *rng = one[0].clone();
        Ok(a.into_iter().next().expect("one context"))
    }

    /// Freezes the current weights. Versions increase by one per call.
    pub fn snapshot(&mut self) -> Snapshot {
        self.snapshots_taken += 1;
        Snapshot {
            version: self.snapshots_taken,
            net: Arc::new(self.fresh_copy()),
        }
    }

    pub fn snapshots_taken(&self) -> u64 {
        self.snapshots_taken
    }

    pub(crate) fn set_snapshots_taken(&mut self, n: u64) {
        self.snapshots_taken = n;
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "policy",
            "arch": self.arch,
            "version": self.snapshots_taken,
            "num_parameters": self.num_parameters(),
        })
    }

    pub fn save(&self, path: &Path, with_optimizer: bool) -> Result<()> {
        write_checkpoint(path, &self.metadata(), &self.params.to_entries(with_optimizer))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, entries) = read_checkpoint(path)?;
        let arch: PolicyArch = serde_json::from_value(meta["arch"].clone())
            .map_err(|e| PolicyError::Checkpoint(format!("bad architecture record: {e}")))?;
        let params = ParameterSet::from_entries(&entries)?;
        let mut net = Self::from_params(arch, params)?;
        net.snapshots_taken = meta["version"].as_u64().unwrap_or(0);
        Ok(net)
    }
}

fn choose(log_probs: &[f64], decoding: Decoding, rng: &mut ChaCha8Rng) -> usize {
    let argmax = || {
        log_probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    };
    match decoding {
        Decoding::Greedy => argmax(),
        Decoding::Sample(t) => {
            let scaled: Vec<f64> = log_probs.iter().map(|lp| lp / t).collect();
            let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    return i;
                }
                u -= w;
            }
            // rounding left a sliver of mass past the last bucket
            weights.iter().rposition(|&w| w > 0.0).unwrap_or_else(argmax)
        }
    }
}

/// Frozen copy of the policy used as `π_θ_old`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    version: u64,
    net: Arc<PolicyNet>,
}

impl Snapshot {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn net(&self) -> &PolicyNet {
        &self.net
    }

    /// Fresh network with the frozen weights.
    pub fn restore(&self) -> PolicyNet {
        let mut n = self.net.fresh_copy();
        n.snapshots_taken = self.version;
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{CorridorParams, EnvSpec, SokobanParams};

    pub(crate) fn small_arch(spec: &EnvSpec) -> PolicyArch {
        PolicyArch {
            vocabulary: spec.vocabulary(),
            obs_len: spec.feature_len(),
            context_k: 2,
            max_tokens: spec.max_action_tokens(),
            embed_dim: 4,
            hidden: 8,
        }
    }

    fn ctx(arch: &PolicyArch, seed: u64) -> Context {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = Observation {
            features: (0..arch.obs_len).map(|_| f64::from(u8::from(rng.gen_bool(0.3)))).collect(),
            tag: String::new(),
        };
        Context::encode(arch, 0, &[&obs], None).unwrap()
    }

    #[test]
    fn greedy_matches_tiny_temperature() {
        let spec = EnvSpec::Sokoban(SokobanParams::new(5, 1));
        let net = PolicyNet::new(small_arch(&spec), 3).unwrap();
        for s in 0..20 {
            let c = ctx(net.arch(), s);
            let mut r1 = ChaCha8Rng::seed_from_u64(s);
            let mut r2 = ChaCha8Rng::seed_from_u64(s);
            let g = net.sample_action(&c, Decoding::Greedy, &mut r1).unwrap();
            let t = net.sample_action(&c, Decoding::Sample(1e-9), &mut r2).unwrap();
            assert_eq!(g.tokens, t.tokens);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let spec = EnvSpec::Corridor(CorridorParams::default());
        let net = PolicyNet::new(small_arch(&spec), 1).unwrap();
        let c = ctx(net.arch(), 9);
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| net.sample_action(&c, Decoding::Sample(1.0), &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn recorded_log_probs_are_temperature_one() {
        let spec = EnvSpec::Sokoban(SokobanParams::new(5, 1));
        let net = PolicyNet::new(small_arch(&spec), 2).unwrap();
        let c = ctx(net.arch(), 4);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let a = net.sample_action(&c, Decoding::Sample(2.5), &mut r).unwrap();
            assert_eq!(a.log_prob().to_bits(), net.action_log_prob(&c, &a).unwrap().to_bits());
        }
    }

    #[test]
    fn chain_rule_two_tokens() {
        let spec = EnvSpec::Sokoban(SokobanParams::new(5, 1));
        let net = PolicyNet::new(small_arch(&spec), 7).unwrap();
        let arch = net.arch().clone();
        let c = ctx(&arch, 1);
        let a = ActionSequence::from_tokens(&arch, &[Token::Push, Token::Left, Token::End]).unwrap();
        assert_eq!(a.scored(), 2);
        let d = net.next_token_log_probs(&[(&c, &[][..]), (&c, &[2][..])]).unwrap();
        let expected = d[0][2] + d[1][5];
        assert_eq!(net.action_log_prob(&c, &a).unwrap(), expected);
    }

    #[test]
    fn unknown_token_is_rejected() {
        let spec = EnvSpec::Corridor(CorridorParams::default());
        let arch = small_arch(&spec);
        assert!(matches!(
            ActionSequence::from_tokens(&arch, &[Token::Push, Token::End]),
            Err(PolicyError::Vocabulary(_))
        ));
        let net = PolicyNet::new(arch.clone(), 0).unwrap();
        let bad = ActionSequence {
            tokens: vec![9, 0],
            log_probs: vec![0.0],
        };
        assert!(matches!(net.action_log_prob(&ctx(&arch, 0), &bad), Err(PolicyError::Vocabulary(_))));
    }

    #[test]
    fn snapshot_is_frozen_and_versioned() {
        let spec = EnvSpec::Corridor(CorridorParams::default());
        let mut net = PolicyNet::new(small_arch(&spec), 0).unwrap();
        let c = ctx(net.arch(), 2);
        let a = ActionSequence::from_tokens(net.arch(), &[Token::Right, Token::End]).unwrap();
        let s1 = net.snapshot();
        let before = s1.net().action_log_prob(&c, &a).unwrap();
        assert!(s1.restore().params().bitwise_eq(net.params()));
        net.params_mut().get_mut("out.b").unwrap().values_mut()[2] += 1.0;
        assert_eq!(s1.net().action_log_prob(&c, &a).unwrap(), before);
        assert_ne!(net.action_log_prob(&c, &a).unwrap(), before);
        let s2 = net.snapshot();
        assert!(s2.version() > s1.version());
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = EnvSpec::Sokoban(SokobanParams::new(5, 1));
        let mut net = PolicyNet::new(small_arch(&spec), 11).unwrap();
        net.snapshot();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("policy.ckpt");
        net.save(&p, false).unwrap();
        let back = PolicyNet::load(&p).unwrap();
        assert!(back.params().bitwise_eq(net.params()));
        assert_eq!(back.arch(), net.arch());
        assert_eq!(back.snapshots_taken(), 1);
    }
}
