use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Observation, StepInfo, StepOutcome, Token};

/// `1 × length` corridor: start at cell 0, key somewhere in between, door
/// at the far end. Only reaching the door while holding the key pays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorridorParams {
    pub length: usize,
    pub horizon: usize,
}

impl CorridorParams {
    pub fn new(length: usize, horizon: usize) -> Self {
        Self { length, horizon }
    }

    /// Agent, key and door channels per cell, plus a has-key flag.
    pub fn feature_len(&self) -> usize {
        3 * self.length + 1
    }
}

impl Default for CorridorParams {
    fn default() -> Self {
        Self::new(6, 12)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorridorAction {
    Left,
    Right,
    Grab,
}

impl CorridorAction {
    pub const ALL: [CorridorAction; 3] = [CorridorAction::Left, CorridorAction::Right, CorridorAction::Grab];

    pub fn tokens(self) -> [Token; 2] {
        let t = match self {
            CorridorAction::Left => Token::Left,
            CorridorAction::Right => Token::Right,
            CorridorAction::Grab => Token::Grab,
        };
        [t, Token::End]
    }

    pub fn parse(tokens: &[Token]) -> Option<Self> {
        match tokens {
            [Token::Left, Token::End] => Some(CorridorAction::Left),
            [Token::Right, Token::End] => Some(CorridorAction::Right),
            [Token::Grab, Token::End] => Some(CorridorAction::Grab),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corridor {
    length: usize,
    horizon: usize,
    pos: usize,
    key: usize,
    has_key: bool,
    steps: usize,
    done: bool,
}

impl Corridor {
    pub fn new(params: &CorridorParams, seed: u64) -> Result<Self, EnvError> {
        if params.length < 3 {
            return Err(EnvError::InvalidParams(format!("corridor length {} < 3", params.length)));
        }
        if params.horizon < 1 {
            return Err(EnvError::InvalidParams("horizon must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let key = rng.gen_range(1..params.length - 1);
        Ok(Self::with_key(params, key))
    }

    /// Corridor with the key at a chosen cell in `1..length-1`.
    pub fn with_key(params: &CorridorParams, key: usize) -> Self {
        assert!(key >= 1 && key < params.length - 1, "key must lie strictly between start and door");
        Self {
            length: params.length,
            horizon: params.horizon,
            pos: 0,
            key,
            has_key: false,
            steps: 0,
            done: false,
        }
    }

    pub fn key_cell(&self) -> usize {
        self.key
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn has_key(&self) -> bool {
        self.has_key
    }

    pub fn door(&self) -> usize {
        self.length - 1
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn is_success(&self) -> bool {
        self.pos == self.door() && self.has_key
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn render(&self) -> String {
        let cells: String = (0..self.length)
            .map(|i| {
                if i == self.pos {
                    'A'
                } else if i == self.door() {
                    'D'
                } else if i == self.key && !self.has_key {
                    'k'
                } else {
                    '.'
                }
            })
            .collect();
        format!("{cells} key={}", u8::from(self.has_key))
    }

    pub fn observation(&self) -> Observation {
        let k = self.length;
        let mut features = vec![0.0; 3 * k + 1];
        features[self.pos] = 1.0;
        if !self.has_key {
            features[k + self.key] = 1.0;
        }
        features[2 * k + self.door()] = 1.0;
        features[3 * k] = f64::from(u8::from(self.has_key));
        Observation {
            features,
            tag: self.render(),
        }
    }

    pub fn step(&mut self, tokens: &[Token]) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        self.steps += 1;
        let invalid = match CorridorAction::parse(tokens) {
            Some(CorridorAction::Left) if self.pos > 0 => {
                self.pos -= 1;
                false
            }
            Some(CorridorAction::Right) => {
                self.pos += 1;
                false
            }
            Some(CorridorAction::Grab) if self.pos == self.key && !self.has_key => {
                self.has_key = true;
                false
            }
            _ => true,
        };
        let at_door = self.pos == self.door();
        let success = at_door && self.has_key;
        let reward = if success { 1.0 } else { 0.0 };
        self.done = at_door || self.steps >= self.horizon;
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                success,
                invalid,
                boxes_on_target: 0,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(c: &mut Corridor, acts: &[CorridorAction]) -> f64 {
        acts.iter().map(|a| c.step(&a.tokens()).unwrap().reward).sum()
    }

    #[test]
    fn grab_off_key_does_nothing() {
        let mut c = Corridor::with_key(&CorridorParams::default(), 2);
        let out = c.step(&CorridorAction::Grab.tokens()).unwrap();
        assert!(!c.has_key());
        assert_eq!(out.reward, 0.0);
        assert!(out.info.invalid);
    }

    #[test]
    fn optimal_sequence_pays_one() {
        use CorridorAction::*;
        let mut c = Corridor::with_key(&CorridorParams::default(), 2);
        let total = run(&mut c, &[Right, Right, Grab, Right, Right, Right]);
        assert_eq!(total, 1.0);
        assert!(c.is_done() && c.is_success());
    }

    #[test]
    fn door_without_key_ends_with_zero() {
        use CorridorAction::*;
        let mut c = Corridor::with_key(&CorridorParams::default(), 2);
        let total = run(&mut c, &[Right; 5]);
        assert_eq!(total, 0.0);
        assert!(c.is_done() && !c.is_success());
        assert_eq!(c.step(&Left.tokens()), Err(EnvError::StepAfterDone));
    }

    #[test]
    fn left_wall_and_malformed() {
        let mut c = Corridor::with_key(&CorridorParams::default(), 2);
        assert!(c.step(&CorridorAction::Left.tokens()).unwrap().info.invalid);
        assert!(c.step(&[Token::End]).unwrap().info.invalid);
        assert_eq!(c.position(), 0);
    }

    #[test]
    fn seeded_key_placement() {
        let p = CorridorParams::default();
        for seed in 0..50 {
            let c = Corridor::new(&p, seed).unwrap();
            assert!((1..5).contains(&c.key_cell()));
            assert_eq!(c, Corridor::new(&p, seed).unwrap());
        }
    }
}
