use std::fs;
use std::path::Path;

use istar::envs::EnvKind;
use istar::trainer::{self, Ablation, Granularity, RunPaths, TrainConfig, TrainError, Trainer};

fn small(env: EnvKind) -> TrainConfig {
    TrainConfig {
        env,
        corridor_length: 4,
        horizon: 8,
        iterations: 4,
        groups: 2,
        group_size: 4,
        hidden: 12,
        embed_dim: 4,
        eval_episodes: 6,
        eval_every: 2,
        checkpoint_every: 2,
        ..TrainConfig::default()
    }
}

/// Every log file of a run, by relative path.
fn logs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let p = RunPaths::new(dir);
    let mut files = vec![p.metrics(), p.step_rewards(), p.advantages(), p.eval_curve(), p.final_eval_csv(), p.final_eval_summary()];
    let mut traj: Vec<_> = fs::read_dir(p.trajectories_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    traj.sort();
    files.extend(traj);
    files
        .into_iter()
        .filter(|f| f.exists())
        .map(|f| (f.strip_prefix(dir).unwrap().display().to_string(), fs::read(&f).unwrap()))
        .collect()
}

#[test]
fn identical_runs_write_identical_logs() {
    let cfg = TrainConfig {
        istar: true,
        ..small(EnvKind::Sokoban)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    trainer::run(&cfg, a.path()).unwrap();
    trainer::run(&cfg, b.path()).unwrap();
    let (la, lb) = (logs(a.path()), logs(b.path()));
    assert!(la.len() >= 10);
    assert_eq!(la, lb);
    let other = tempfile::tempdir().unwrap();
    trainer::run(&TrainConfig { seed: 1, ..cfg }, other.path()).unwrap();
    assert_ne!(fs::read(RunPaths::new(a.path()).metrics()).unwrap(), fs::read(RunPaths::new(other.path()).metrics()).unwrap());
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let cfg = TrainConfig {
        istar: true,
        ..small(EnvKind::Corridor)
    };
    let (full, cut) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    trainer::run(&cfg, full.path()).unwrap();
    trainer::run(&cfg, cut.path()).unwrap();
    // pretend the run died after iteration 3: the last checkpoint is 2
    let paths = RunPaths::new(cut.path());
    fs::remove_file(paths.checkpoint(4)).unwrap();
    fs::remove_file(paths.final_eval_csv()).unwrap();
    trainer::resume(cut.path()).unwrap();
    assert_eq!(logs(full.path()), logs(cut.path()));
    assert_eq!(paths.checkpoint_iterations(), vec![0, 2, 4]);
}

#[test]
fn stepping_matches_a_restored_state() {
    let cfg = TrainConfig {
        istar: true,
        ..small(EnvKind::Sokoban)
    };
    let mut a = Trainer::new(cfg.clone()).unwrap();
    a.step().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    a.save_state(&path).unwrap();
    let mut b = Trainer::load_state(cfg, &path).unwrap();
    let (ra, rb) = (a.step().unwrap(), b.step().unwrap());
    assert_eq!(ra.metrics, rb.metrics);
    assert_eq!(a.policy(), b.policy());
    assert_eq!(a.prm(), b.prm());
}

#[test]
fn first_minibatch_starts_at_ratio_one() {
    let mut t = Trainer::new(TrainConfig {
        istar: false,
        ..small(EnvKind::Sokoban)
    })
    .unwrap();
    for _ in 0..2 {
        let rec = t.step().unwrap();
        assert!(rec.policy.first_step_max_ratio_dev < 1e-12);
        assert!((0.0..=1.0).contains(&rec.policy.clip_fraction));
        assert_eq!(rec.snapshot_version + 1, t.snapshot().version());
    }
}

/// With α = 0 the reward model trains but the policy sees exactly the
/// vanilla advantages, so the two policies stay bitwise equal.
#[test]
fn alpha_zero_trains_like_vanilla() {
    let base = small(EnvKind::Sokoban);
    let mut vanilla = Trainer::new(TrainConfig {
        istar: false,
        ..base.clone()
    })
    .unwrap();
    let mut zero = Trainer::new(TrainConfig {
        istar: true,
        alpha: 0.0,
        ..base
    })
    .unwrap();
    for _ in 0..3 {
        let (a, b) = (vanilla.step().unwrap(), zero.step().unwrap());
        assert!(b.step_rewards.is_some() && a.step_rewards.is_none());
        let bits = |r: &istar::trainer::IterationRecord| -> Vec<u64> { r.advantages.iter().flat_map(|t| t.combined.iter().flatten().map(|v| v.to_bits())).collect() };
        assert_eq!(bits(&a), bits(&b));
    }
    assert_eq!(vanilla.policy().params(), zero.policy().params());
}

#[test]
fn ablations_shape_the_advantages() {
    let base = TrainConfig {
        istar: true,
        ..small(EnvKind::Sokoban)
    };
    let merged = Trainer::new(TrainConfig {
        ablation: Ablation::Merged,
        ..base.clone()
    })
    .unwrap()
    .step()
    .unwrap();
    assert!(merged.advantages.iter().all(|t| t.step.is_none()));
    assert_eq!(merged.granularity, Granularity::Step);

    let token = Trainer::new(TrainConfig {
        ablation: Ablation::TokenLevel,
        ..base.clone()
    })
    .unwrap()
    .step()
    .unwrap();
    assert_eq!(token.granularity, Granularity::Token);
    let rows: usize = token.advantages.iter().map(|t| t.rows()).sum();
    let tokens: usize = token.trajectories.iter().flat_map(|t| t.steps.iter().map(|s| s.action.scored())).sum();
    assert_eq!(rows, tokens);

    let gt = Trainer::new(TrainConfig {
        ablation: Ablation::GtStep,
        ..base
    })
    .unwrap();
    assert!(gt.prm().is_none());
    let mut gt = gt;
    let rec = gt.step().unwrap();
    assert!(rec.step_rewards.is_none());
    assert!(rec.advantages.iter().all(|t| t.step.is_some()));
}

#[test]
fn conflicting_settings_are_rejected() {
    let bad = |cfg: TrainConfig| matches!(cfg.validate(), Err(TrainError::Config(_)));
    let base = small(EnvKind::Sokoban);
    assert!(bad(TrainConfig {
        istar: false,
        ablation: Ablation::Merged,
        ..base.clone()
    }));
    assert!(bad(TrainConfig {
        istar: true,
        ablation: Ablation::GtStep,
        ..small(EnvKind::Corridor)
    }));
    assert!(bad(TrainConfig {
        beta: 0.0,
        ..base.clone()
    }));
    assert!(bad(TrainConfig {
        group_size: 1,
        ..base.clone()
    }));
    assert!(bad(TrainConfig { clip_eps: 1.0, ..base }));
    assert!(matches!(TrainConfig::from_toml_str("betta = 0.1"), Err(TrainError::Config(_))));
    let cfg = TrainConfig::from_toml_str("istar = true\nablation = \"token_level\"\nbeta = 0.5").unwrap();
    assert_eq!(cfg.ablation, Ablation::TokenLevel);
    assert_eq!(TrainConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
}

#[test]
fn manifest_tracks_the_run() {
    let cfg = small(EnvKind::Corridor);
    let dir = tempfile::tempdir().unwrap();
    let paths = trainer::run(&cfg, dir.path()).unwrap();
    let m = trainer::read_manifest(&paths).unwrap();
    assert_eq!(m.status, "completed");
    assert_eq!(m.iterations_completed, 4);
    assert_eq!(m.artifacts.len(), 4);
    assert_eq!(m.label, cfg.label());
    let metrics = fs::read_to_string(paths.metrics()).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    let eval = fs::read_to_string(paths.eval_curve()).unwrap();
    let its: Vec<&str> = eval.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(its, vec!["0", "2", "4"]);
}
