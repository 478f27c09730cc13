//! Exhaustive oracle for the key-and-door corridor.

use istar::envs::{Corridor, CorridorAction, EnvError};

/// Independent corridor model: position, key, steps.
#[derive(Clone, Copy)]
pub struct Model {
    pub pos: usize,
    pub has_key: bool,
    pub steps: usize,
}

pub const LEN: usize = 6;
pub const HORIZON: usize = 12;

pub fn model_step(m: &mut Model, key: usize, a: CorridorAction) -> (f64, bool, bool) {
    m.steps += 1;
    match a {
        CorridorAction::Left if m.pos > 0 => m.pos -= 1,
        CorridorAction::Right => m.pos += 1,
        CorridorAction::Grab if m.pos == key => m.has_key = true,
        _ => {}
    }
    let at_door = m.pos == LEN - 1;
    let success = at_door && m.has_key;
    (if success { 1.0 } else { 0.0 }, at_door || m.steps >= HORIZON, success)
}

/// Walks every action sequence of length `HORIZON`; an episode that ends at
/// depth `t` stands for `3^(HORIZON - t)` full sequences. Returns the number
/// of successful sequences.
pub fn enumerate(env: &Corridor, m: Model, key: usize, depth: usize, total: &mut f64, checked: &mut usize) -> u64 {
    let mut wins = 0;
    for a in CorridorAction::ALL {
        let mut e = env.clone();
        let mut mm = m;
        let out = e.step(&a.tokens()).unwrap();
        let (r, done, success) = model_step(&mut mm, key, a);
        assert_eq!(out.reward, r);
        assert_eq!(out.done, done);
        assert_eq!(out.info.success, success);
        assert_eq!(e.position(), mm.pos);
        assert_eq!(e.has_key(), mm.has_key);
        *checked += 1;
        *total += r * 3f64.powi((HORIZON - depth - 1) as i32);
        if done {
            if success {
                wins += 3u64.pow((HORIZON - depth - 1) as u32);
            }
            assert_eq!(e.step(&a.tokens()), Err(EnvError::StepAfterDone));
        } else {
            wins += enumerate(&e, mm, key, depth + 1, total, checked);
        }
    }
    wins
}

/// Probability of success of the uniform random policy by dynamic
/// programming over (position, key, steps).
pub fn dp_success(key: usize) -> f64 {
    // v[pos][has_key] = success probability with `left` steps remaining
    let mut v = [[0.0f64; 2]; LEN];
    for _ in 0..HORIZON {
        let mut next = [[0.0f64; 2]; LEN];
        for (pos, row) in next.iter_mut().enumerate().take(LEN - 1) {
            for (hk, cell) in row.iter_mut().enumerate() {
                let mut p = 0.0;
                for a in CorridorAction::ALL {
                    let (np, nk) = match a {
                        CorridorAction::Left => (pos.saturating_sub(1), hk),
                        CorridorAction::Right => (pos + 1, hk),
                        CorridorAction::Grab => (pos, if pos == key { 1 } else { hk }),
                    };
                    p += if np == LEN - 1 { f64::from(u8::from(nk == 1)) } else { v[np][nk] };
                }
                *cell = p / 3.0;
            }
        }
        v = next;
    }
    v[0][0]
}

