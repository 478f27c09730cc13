//! Finite-difference audit of the three training losses on small random
//! instances: token NLL, trajectory preference loss, clipped surrogate.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{CorridorParams, EnvSpec, SokobanParams};
use crate::policy::{Decoding, PolicyArch, PolicyError, PolicyNet};
use crate::prm::dpo_loss_graph;
use crate::seeds::{derive_seed, Domain};
use crate::tensor::{analytic_gradients, compare_gradients, FdOptions, Graph, ParameterSet, TensorError, Var};
use crate::trainer::{surrogate_graph, Granularity, LossNorm, PolicyBatch, RatioMode};
use crate::trajectory::{rollout, EpisodeTask, FlatBatch, Trajectory};

/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LossKind {
    /// Mean negative log-likelihood of the scored tokens.
    Nll,
    /// Trajectory preference loss of the reward model.
    Preference,
    /// Clipped surrogate of the policy.
    Surrogate,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Nll, LossKind::Preference, LossKind::Surrogate];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Nll => "nll",
            LossKind::Preference => "preference",
            LossKind::Surrogate => "surrogate",
        })
    }
}

/// Test fixture: scales the analytic gradient of one parameter before the
/// comparison, so a broken backward pass can be simulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub loss: LossKind,
    pub instances: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

impl GradcheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckTable {
    pub rows: Vec<GradcheckRow>,
}

impl GradcheckTable {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(GradcheckRow::passed)
    }
}

impl fmt::Display for GradcheckTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>9} {:>8} {:>14}  verdict", "loss", "instances", "coords", "max_rel_error")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:>9} {:>8} {:>14.3e}  {}",
                r.loss.to_string(),
                r.instances,
                r.coords_checked,
                r.max_rel_error,
                if r.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// A tiny network with a handful of sampled trajectories.
struct Instance {
    net: PolicyNet,
    trajs: Vec<Trajectory>,
    rng: ChaCha8Rng,
}

fn instance(seed: u64) -> Result<Instance, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = if seed.is_multiple_of(2) {
        EnvSpec::Corridor(CorridorParams::new(rng.gen_range(3..=5), 6))
    } else {
        let mut p = SokobanParams::new(5, 1);
        p.horizon = 5;
        EnvSpec::Sokoban(p)
    };
    let arch = PolicyArch {
        vocabulary: spec.vocabulary(),
        obs_len: spec.feature_len(),
        context_k: rng.gen_range(1..=2),
        max_tokens: spec.max_action_tokens(),
        embed_dim: rng.gen_range(2..=4),
        hidden: rng.gen_range(3..=6),
    };
    let mut net = PolicyNet::new(arch, rng.gen())?;
    jitter(net.params_mut(), 0.3, &mut rng);
    let tasks: Vec<EpisodeTask> = (0..4)
        .map(|i| EpisodeTask {
            episode_id: format!("fd-{i}"),
            task_seed: derive_seed(seed, Domain::Task, 0, i / 2),
            sample_seed: derive_seed(seed, Domain::Sample, 0, i),
        })
        .collect();
    let trajs = rollout(&net, 0, &spec, &tasks, Decoding::Sample(1.0)).map_err(|e| PolicyError::Usage(e.to_string()))?;
    Ok(Instance { net, trajs, rng })
}

/// Adds uniform noise in `[-scale, scale]` to every weight.
fn jitter(params: &mut ParameterSet, scale: f64, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in names {
        for v in params.get_mut(&n).expect("listed").values_mut() {
            *v += rng.gen_range(-scale..=scale);
        }
    }
}

fn check<F>(params: &ParameterSet, loss_fn: F, seed: u64, corruption: Option<Corruption>) -> Result<(f64, usize), TensorError>
where
    F: Fn(&ParameterSet, &mut Graph) -> Result<Var, TensorError>,
{
    let mut analytic = analytic_gradients(params, &loss_fn)?;
    if let Some(c) = corruption {
        // The output layer always carries gradient, so scaling it is visible.
        for v in analytic.get_mut("out.w").expect("every policy has an output layer") {
            *v *= c.factor;
        }
    }
    let opts = FdOptions {
        seed,
        ..FdOptions::default()
    };
    let rep = compare_gradients(
        params,
        &analytic,
        |p| {
            let mut g = Graph::new();
            let l = loss_fn(p, &mut g)?;
            g.item(l)
        },
        &opts,
    )?;
    Ok((rep.max_rel_error, rep.coords_checked))
}

fn lift(e: PolicyError) -> TensorError {
    match e {
        PolicyError::Tensor(t) => t,
        other => TensorError::Usage(other.to_string()),
    }
}

/// Max relative error and coordinates checked for one random instance.
pub fn check_instance(kind: LossKind, seed: u64, corruption: Option<Corruption>) -> Result<(f64, usize), PolicyError> {
    let Instance { net, trajs, mut rng } = instance(seed)?;
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let flat = FlatBatch::build(net.arch(), &refs)?;
    let out = match kind {
        LossKind::Nll => check(
            net.params(),
            |p, g| {
                let lp = net.token_log_probs_with(p, g, &flat.tokens, true).map_err(lift)?;
                let m = g.mean(lp)?;
                g.scale(m, -1.0)
            },
            seed,
            corruption,
        )?,
        LossKind::Preference => {
            let mut prm = net.fresh_copy();
            jitter(prm.params_mut(), 0.2, &mut rng);
            let old: Vec<f64> = trajs.iter().map(Trajectory::recorded_log_prob).collect();
            let pairs = [(0, 1), (2, 3), (1, 2), (3, 0)];
            let beta = rng.gen_range(0.5..=2.0);
            check(
                prm.params(),
                |p, g| dpo_loss_graph(&prm, p, g, &flat, &old, &pairs, beta).map_err(lift),
                seed,
                corruption,
            )?
        }
        LossKind::Surrogate => {
            let granularity = if rng.gen_bool(0.5) { Granularity::Step } else { Granularity::Token };
            let advantages: Vec<Vec<f64>> = trajs
                .iter()
                .map(|t| {
                    let rows = match granularity {
                        Granularity::Step => t.len(),
                        Granularity::Token => t.steps.iter().map(|s| s.action.scored()).sum(),
                    };
                    (0..rows).map(|_| rng.gen_range(-1.5..=1.5)).collect()
                })
                .collect();
            let batch = PolicyBatch::new(&net, &refs, &advantages, granularity)?;
            let mut current = net.fresh_copy();
            jitter(current.params_mut(), 0.05, &mut rng);
            let norm = if rng.gen_bool(0.5) { LossNorm::TotalSteps } else { LossNorm::PerTrajMean };
            let mode = if rng.gen_bool(0.5) { RatioMode::Sequence } else { RatioMode::LengthNormalized };
            let eps = rng.gen_range(0.1..=0.3);
            check(
                current.params(),
                |p, g| {
                    let s = surrogate_graph(&current, p, g, &batch, eps, norm, mode, true).map_err(lift)?;
                    g.scale(s.objective, -1.0)
                },
                seed,
                corruption,
            )?
        }
    };
    Ok(out)
}

/// Runs `instances` random instances of every loss.
pub fn run_gradcheck(instances: usize, seed: u64, corruption: Option<Corruption>) -> Result<GradcheckTable, PolicyError> {
    let mut rows = Vec::new();
    for (k, kind) in LossKind::ALL.into_iter().enumerate() {
        let mut row = GradcheckRow {
            loss: kind,
            instances,
            coords_checked: 0,
            max_rel_error: 0.0,
        };
        for i in 0..instances {
            let (err, n) = check_instance(kind, derive_seed(seed, Domain::Init, k as u64, i as u64), corruption)?;
            row.coords_checked += n;
            row.max_rel_error = row.max_rel_error.max(err);
        }
        rows.push(row);
    }
    Ok(GradcheckTable { rows })
}
