//! Generates a Sokoban room and plays it with actions from the command line,
//! or with random well-formed actions when none are given.
//!
//! ```text
//! cargo run --example play_sokoban -- [seed] [move-up push-left ...]
//! ```

use istar::envs::{Direction, Sokoban, SokobanParams, Token, Verb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn parse(word: &str) -> Option<(Verb, Direction)> {
    let (verb, dir) = word.split_once('-')?;
    let verb = match verb {
        "move" => Verb::Move,
        "push" => Verb::Push,
        _ => return None,
    };
    let dir = match dir {
        "up" => Direction::Up,
        "down" => Direction::Down,
        "left" => Direction::Left,
        "right" => Direction::Right,
        _ => return None,
    };
    Some((verb, dir))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let scripted: Vec<(Verb, Direction)> = args.map(|w| parse(&w).ok_or(format!("bad action {w:?}, expected e.g. push-left"))).collect::<Result<_, _>>()?;
    let mut room = Sokoban::generate(&SokobanParams::new(5, 1), seed)?;
    println!("room {seed}, horizon {}\n{}", room.horizon(), room.render());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut t = 0;
    while !room.is_done() {
        let (verb, dir) = match scripted.get(t) {
            Some(&a) => a,
            None if !scripted.is_empty() => break,
            None => (
                if rng.gen_bool(0.5) { Verb::Move } else { Verb::Push },
                Direction::ALL[rng.gen_range(0..4)],
            ),
        };
        let out = room.step(&[verb.token(), dir.token(), Token::End])?;
        total += out.reward;
        t += 1;
        println!(
            "step {t:2}: {} {}  reward {:+.1}  invalid {}  on target {}",
            verb.token().as_str(),
            dir.token().as_str(),
            out.reward,
            out.info.invalid,
            out.info.boxes_on_target
        );
        println!("{}", room.render());
    }
    println!("return {total:+.2}  solved {}  steps {}", room.is_solved(), room.steps_taken());
    Ok(())
}
