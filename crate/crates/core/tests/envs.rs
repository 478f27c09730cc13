use std::collections::{HashSet, VecDeque};

mod common;

use common::corridor::{dp_success, enumerate, Model, HORIZON, LEN};
use istar::envs::{Corridor, CorridorParams, Direction, EnvError, EnvSpec, Sokoban, SokobanParams, Token};
use proptest::prelude::*;

#[test]
fn corridor_matches_exhaustive_enumeration() {
    let p = CorridorParams::new(LEN, HORIZON);
    let mut keys = HashSet::new();
    for seed in [0u64, 1, 2] {
        let env = Corridor::new(&p, seed).unwrap();
        let key = env.key_cell();
        keys.insert(key);
        let (mut total, mut checked) = (0.0, 0);
        let wins = enumerate(&env, Model { pos: 0, has_key: false, steps: 0 }, key, 0, &mut total, &mut checked);
        let all = 3f64.powi(HORIZON as i32);
        // only success pays, so summed reward equals the success count
        assert_eq!(total, wins as f64);
        let dp = dp_success(key);
        assert!((wins as f64 / all - dp).abs() < 1e-12, "seed {seed}: {} vs {dp}", wins as f64 / all);
        assert!(wins > 0 && checked > 1000);
    }
    assert!(!keys.is_empty());
}

#[test]
fn corridor_fixed_key_count() {
    // key at cell 2: direct count of the shortest successes as a sanity floor
    let p = CorridorParams::new(LEN, HORIZON);
    let env = Corridor::with_key(&p, 2);
    let (mut total, mut checked) = (0.0, 0);
    let wins = enumerate(&env, Model { pos: 0, has_key: false, steps: 0 }, 2, 0, &mut total, &mut checked);
    // the 6-step optimum leaves 6 free trailing actions
    assert!(wins >= 3u64.pow(6));
    assert!((wins as f64 / 3f64.powi(12) - dp_success(2)).abs() < 1e-12);
}

/// Breadth-first search over (agent, box) with its own push rules.
fn bfs_solvable(room: &Sokoban) -> Option<usize> {
    let n = room.size() as isize;
    let walls: Vec<bool> = (0..room.size() * room.size()).map(|i| room.is_wall(i)).collect();
    let targets: Vec<usize> = (0..walls.len()).filter(|&i| room.is_target(i)).collect();
    let mut boxes = room.box_positions();
    boxes.sort_unstable();
    let start = (room.agent(), boxes);
    let mut seen = HashSet::new();
    let mut q = VecDeque::new();
    seen.insert(start.clone());
    q.push_back((start, 0usize));
    let step = |i: usize, (dr, dc): (isize, isize)| -> Option<usize> {
        let (r, c) = (i as isize / n + dr, i as isize % n + dc);
        (r >= 0 && r < n && c >= 0 && c < n).then(|| (r * n + c) as usize)
    };
    while let Some(((agent, boxes), d)) = q.pop_front() {
        if boxes.iter().all(|b| targets.contains(b)) {
            return Some(d);
        }
        for delta in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let Some(next) = step(agent, delta) else { continue };
            if walls[next] {
                continue;
            }
            let mut nb = boxes.clone();
            if let Some(k) = nb.iter().position(|&b| b == next) {
                let Some(beyond) = step(next, delta) else { continue };
                if walls[beyond] || nb.contains(&beyond) {
                    continue;
                }
                nb[k] = beyond;
                nb.sort_unstable();
            }
            let s = (next, nb);
            if seen.insert(s.clone()) {
                q.push_back((s, d + 1));
            }
        }
    }
    None
}

#[test]
fn generated_rooms_are_solvable() {
    let p = SokobanParams::new(5, 1);
    let mut lengths = Vec::new();
    for seed in 0..1000u64 {
        let room = Sokoban::generate(&p, seed).unwrap();
        assert_eq!(room.box_count(), 1);
        assert!(!room.is_solved(), "seed {seed} starts solved");
        let d = bfs_solvable(&room).unwrap_or_else(|| panic!("seed {seed} unsolvable:\n{}", room.render()));
        lengths.push(d);
    }
    assert!(lengths.iter().all(|&d| d >= 1));
}

#[test]
fn larger_rooms_are_solvable() {
    let p = SokobanParams::new(6, 2);
    for seed in 0..200u64 {
        let room = Sokoban::generate(&p, seed).unwrap();
        assert_eq!(room.box_count(), 2);
        assert!(bfs_solvable(&room).is_some(), "seed {seed}:\n{}", room.render());
    }
}

#[test]
fn same_seed_same_room() {
    let spec = EnvSpec::Sokoban(SokobanParams::new(5, 1));
    for seed in [0u64, 17, u64::MAX] {
        assert_eq!(spec.reset(seed).unwrap(), spec.reset(seed).unwrap());
    }
}

#[test]
fn solving_sequence_scores_as_documented() {
    // agent left of box, target right of box: one push solves
    let mut room = Sokoban::from_rows(&["#####", "#@$.#", "#   #", "#   #", "#####"], 20).unwrap();
    let out = room.step(&[Token::Push, Token::Right, Token::End]).unwrap();
    assert!((out.reward - 10.9).abs() < 1e-12);
    assert!(out.done && out.info.success);
}

fn token_of(d: Direction) -> Token {
    match d {
        Direction::Up => Token::Up,
        Direction::Down => Token::Down,
        Direction::Left => Token::Left,
        Direction::Right => Token::Right,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Box rewards net out to the change in boxes on target; box count is
    /// conserved; done is final.
    #[test]
    fn reward_accounting(seed in any::<u64>(), actions in prop::collection::vec((0usize..3, 0usize..4), 1..40)) {
        let p = SokobanParams::new(5, 1);
        let mut room = Sokoban::generate(&p, seed).unwrap();
        let r = p.rewards;
        let start_on = room.boxes_on_target();
        let boxes = room.box_count();
        let mut box_reward = 0.0;
        for (v, d) in actions {
            if room.is_done() {
                prop_assert_eq!(room.step(&[Token::Move, Token::Up, Token::End]), Err(EnvError::StepAfterDone));
                break;
            }
            let dir = [Direction::Up, Direction::Down, Direction::Left, Direction::Right][d];
            let tokens = match v {
                0 => vec![Token::Move, token_of(dir), Token::End],
                1 => vec![Token::Push, token_of(dir), Token::End],
                _ => vec![token_of(dir), Token::End],
            };
            let out = room.step(&tokens).unwrap();
            prop_assert!(out.reward.is_finite());
            let mut rest = out.reward - r.step_penalty;
            if out.info.invalid {
                rest -= r.invalid_penalty;
            }
            if out.info.success && !out.info.invalid {
                rest -= r.solved_bonus;
            }
            box_reward += rest;
            prop_assert_eq!(room.box_count(), boxes);
            prop_assert_eq!(out.info.boxes_on_target, room.boxes_on_target());
        }
        let net = room.boxes_on_target() as f64 - start_on as f64;
        prop_assert!((box_reward - net).abs() < 1e-9, "{} vs {}", box_reward, net);
    }

    #[test]
    fn step_is_deterministic(seed in any::<u64>(), actions in prop::collection::vec(0usize..4, 1..20)) {
        let p = SokobanParams::new(5, 1);
        let mut a = Sokoban::generate(&p, seed).unwrap();
        let mut b = a.clone();
        for d in actions {
            if a.is_done() { break; }
            let dir = [Token::Up, Token::Down, Token::Left, Token::Right][d];
            let t = [Token::Push, dir, Token::End];
            prop_assert_eq!(a.step(&t).unwrap(), b.step(&t).unwrap());
        }
    }
}
