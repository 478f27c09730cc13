//! Command-line front end. Exit status: 0 success, 1 usage error, 2 failure
//! at run time.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::curves::emit_curves;
use super::eval::evaluate;
use super::gradcheck::run_gradcheck;
use super::replay::replay_iteration;
use super::{ablation_matrix, aggregate, format_aggregate, HarnessError};
use crate::advantage::EpisodeEstimator;
use crate::envs::EnvKind;
use crate::policy::Decoding;
use crate::trainer::{self, Ablation, RunPaths, TrainConfig, TrainError, Trainer};

#[derive(Debug, Parser)]
#[command(name = "istar", version, about = "Implicit step rewards for multi-step agents, at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum EnvArg {
    Sokoban,
    Corridor,
}

impl From<EnvArg> for EnvKind {
    fn from(e: EnvArg) -> Self {
        match e {
            EnvArg::Sokoban => EnvKind::Sokoban,
            EnvArg::Corridor => EnvKind::Corridor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum AlgoArg {
    Grpo,
    Rloo,
    Reinforcepp,
}

impl From<AlgoArg> for EpisodeEstimator {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Grpo => EpisodeEstimator::Grpo,
            AlgoArg::Rloo => EpisodeEstimator::Rloo,
            AlgoArg::Reinforcepp => EpisodeEstimator::Reinforcepp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum AblationArg {
    None,
    Merged,
    TokenLevel,
    GtStep,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::None => Ablation::None,
            AblationArg::Merged => Ablation::Merged,
            AblationArg::TokenLevel => Ablation::TokenLevel,
            AblationArg::GtStep => Ablation::GtStep,
        }
    }
}

/// Flags layered over a config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct TrainFlags {
    /// TOML config; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub env: Option<EnvArg>,
    #[arg(long, value_enum)]
    pub algo: Option<AlgoArg>,
    #[arg(long, value_enum)]
    pub istar: Option<Switch>,
    #[arg(long, value_enum)]
    pub ablation: Option<AblationArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

impl TrainFlags {
    pub fn resolve(&self) -> Result<TrainConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        if let Some(e) = self.env {
            cfg.env = e.into();
        }
        if let Some(a) = self.algo {
            cfg.algo = a.into();
        }
        if let Some(s) = self.istar {
            cfg.istar = s == Switch::On;
        }
        if let Some(a) = self.ablation {
            cfg.ablation = a.into();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.iterations {
            cfg.iterations = m;
        }
        cfg.validate().map_err(|e| HarnessError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train into a fresh run directory.
    Train {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue an interrupted run from its latest checkpoint.
    Resume { run_dir: PathBuf },
    /// Evaluate a checkpoint on fresh seeded episodes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the environment the checkpoint was trained on.
        #[arg(long, value_enum)]
        env: Option<EnvArg>,
        #[arg(long, default_value_t = 64)]
        episodes: usize,
        #[arg(long, default_value_t = 1_000_003)]
        seed: u64,
        #[arg(long, default_value_t = 0.4, conflicts_with = "greedy")]
        temperature: f64,
        #[arg(long)]
        greedy: bool,
        /// Directory for `eval.csv` and `eval.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference audit of the training losses.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-execute logged iterations and diff them against the replay log.
    Replay {
        run_dir: PathBuf,
        /// Iterations to check; all logged iterations when omitted.
        #[arg(long)]
        iteration: Vec<usize>,
    },
    /// Aligned curves across runs as CSV plus SVG.
    Curves {
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enumerate the method × ablation × estimator grid.
    Matrix {
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Mean ± std of final evaluations across seeds.
    Aggregate { run_dirs: Vec<PathBuf> },
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command; returns the exit status on success.
pub fn execute(cmd: Command) -> Result<i32, HarnessError> {
    match cmd {
        Command::Train { flags, out } => {
            let cfg = flags.resolve()?;
            let paths = trainer::run(&cfg, &out)?;
            print!("{}", std::fs::read_to_string(paths.final_eval_summary())?);
            Ok(0)
        }
        Command::Resume { run_dir } => {
            let paths = trainer::resume(&run_dir)?;
            print!("{}", std::fs::read_to_string(paths.final_eval_summary())?);
            Ok(0)
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
            temperature,
            greedy,
            out,
        } => {
            let decoding = if greedy { Decoding::Greedy } else { Decoding::Sample(temperature) };
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(HarnessError::Usage(format!("temperature must be positive, got {temperature}")));
            }
            let report = eval_checkpoint(&checkpoint, env.map(Into::into), episodes, seed, decoding)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                report.write(&dir.join("eval.csv"), &dir.join("eval.txt"))?;
            }
            println!("{}", report.summary());
            Ok(0)
        }
        Command::Gradcheck { instances, seed } => {
            let table = run_gradcheck(instances, seed, None)?;
            print!("{table}");
            Ok(if table.passed() { 0 } else { 2 })
        }
        Command::Replay { run_dir, iteration } => {
            let its = if iteration.is_empty() { logged_iterations(&run_dir) } else { iteration };
            if its.is_empty() {
                return Err(HarnessError::Usage(format!("{}: no logged iterations", run_dir.display())));
            }
            let mut ok = true;
            for it in its {
                let verdict = replay_iteration(&run_dir, it)?;
                println!("{verdict}");
                ok &= verdict.passed();
            }
            Ok(if ok { 0 } else { 2 })
        }
        Command::Curves { run_dirs, out } => {
            let aligned = emit_curves(&run_dirs, &out)?;
            println!("{} runs, {} aligned iterations -> {}", aligned.runs.len(), aligned.iterations.len(), out.display());
            Ok(0)
        }
        Command::Matrix { flags } => {
            let base = TrainFlags {
                istar: None,
                ablation: None,
                algo: None,
                ..flags
            }
            .resolve()?;
            for cell in ablation_matrix(&base) {
                match &cell.config {
                    Ok(c) => println!("{:<44} ok        {}", cell.label(), c.label()),
                    Err(why) => println!("{:<44} rejected  {why}", cell.label()),
                }
            }
            Ok(0)
        }
        Command::Aggregate { run_dirs } => {
            if run_dirs.is_empty() {
                return Err(HarnessError::Usage("at least one run directory required".into()));
            }
            print!("{}", format_aggregate(&aggregate(&run_dirs)?));
            Ok(0)
        }
    }
}

/// Iterations with a replay log under `dir`, ascending.
pub fn logged_iterations(dir: &Path) -> Vec<usize> {
    let mut its: Vec<usize> = std::fs::read_dir(RunPaths::new(dir).trajectories_dir())
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("iter_")?.strip_suffix(".jsonl")?.parse().ok()
        })
        .collect();
    its.sort_unstable();
    its
}

/// Loads the policy in `checkpoint` and evaluates it. The environment must
/// match the network's input and vocabulary shapes.
pub fn eval_checkpoint(
    checkpoint: &Path,
    env: Option<EnvKind>,
    episodes: usize,
    seed: u64,
    decoding: Decoding,
) -> Result<super::eval::EvalReport, HarnessError> {
    let (saved, net) = Trainer::load_policy(checkpoint)?;
    let mut cfg = saved.unwrap_or_default();
    if let Some(e) = env {
        cfg.env = e;
    }
    let spec = cfg.env_spec()?;
    let arch = net.arch();
    if arch.vocabulary != spec.vocabulary() || arch.obs_len != spec.feature_len() || arch.max_tokens != spec.max_action_tokens() {
        return Err(TrainError::Checkpoint(format!(
            "architecture mismatch: {} expects {} observation features and {} tokens, environment {} provides {} and {}",
            checkpoint.display(),
            arch.obs_len,
            arch.vocab_len(),
            spec.kind(),
            spec.feature_len(),
            spec.vocabulary().len()
        ))
        .into());
    }
    Ok(evaluate(&net, &spec, episodes, seed, decoding).map_err(TrainError::from)?)
}
