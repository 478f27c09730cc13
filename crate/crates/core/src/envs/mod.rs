//! Seeded environments: text Sokoban and a sparse-reward key/door corridor.
//!
//! Actions arrive as token sequences. A sequence the environment cannot
//! parse is an invalid action: the state is left unchanged and the step is
//! flagged.

mod corridor;
mod sokoban;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corridor::{Corridor, CorridorParams, CorridorAction};
pub use sokoban::{Cell, Direction, Sokoban, SokobanParams, SokobanRewards, Verb};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment parameters: {0}")]
    InvalidParams(String),
    #[error("room generation failed for seed {seed} after {attempts} attempts")]
    Generation { seed: u64, attempts: usize },
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("trajectory is incomplete: episode never reached done")]
    Incomplete,
}

/// Every token any environment understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Token {
    End,
    Move,
    Push,
    Up,
    Down,
    Left,
    Right,
    Grab,
}

impl Token {
    pub fn as_str(self) -> &'static str {
        match self {
            Token::End => "END",
            Token::Move => "MOVE",
            Token::Push => "PUSH",
            Token::Up => "UP",
            Token::Down => "DOWN",
            Token::Left => "LEFT",
            Token::Right => "RIGHT",
            Token::Grab => "GRAB",
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered token alphabet of one environment. Index 0 is always `END`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<Token>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<Token>) -> Self {
        assert_eq!(tokens.first(), Some(&Token::End), "END must be token 0");
        Self { tokens }
    }

    pub fn sokoban() -> Self {
        use Token::*;
        Self::new(vec![End, Move, Push, Up, Down, Left, Right])
    }

    pub fn corridor() -> Self {
        use Token::*;
        Self::new(vec![End, Left, Right, Grab])
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn end_id(&self) -> usize {
        0
    }

    pub fn token(&self, id: usize) -> Option<Token> {
        self.tokens.get(id).copied()
    }

    pub fn id(&self, t: Token) -> Option<usize> {
        self.tokens.iter().position(|&x| x == t)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }
}

/// Feature vector plus a printable rendering of the same state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
    pub tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepInfo {
    pub success: bool,
    pub invalid: bool,
    pub boxes_on_target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Sokoban,
    Corridor,
}

impl std::str::FromStr for EnvKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sokoban" => Ok(EnvKind::Sokoban),
            "corridor" => Ok(EnvKind::Corridor),
            other => Err(format!("unknown env {other:?}; expected sokoban or corridor")),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Sokoban => "sokoban",
            EnvKind::Corridor => "corridor",
        })
    }
}

/// Environment family plus its size parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Sokoban(SokobanParams),
    Corridor(CorridorParams),
}

impl EnvSpec {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSpec::Sokoban(_) => EnvKind::Sokoban,
            EnvSpec::Corridor(_) => EnvKind::Corridor,
        }
    }

    pub fn reset(&self, seed: u64) -> Result<Env, EnvError> {
        Ok(match self {
            EnvSpec::Sokoban(p) => Env::Sokoban(Sokoban::generate(p, seed)?),
            EnvSpec::Corridor(p) => Env::Corridor(Corridor::new(p, seed)?),
        })
    }

    pub fn vocabulary(&self) -> Vocabulary {
        match self {
            EnvSpec::Sokoban(_) => Vocabulary::sokoban(),
            EnvSpec::Corridor(_) => Vocabulary::corridor(),
        }
    }

    pub fn feature_len(&self) -> usize {
        match self {
            EnvSpec::Sokoban(p) => p.feature_len(),
            EnvSpec::Corridor(p) => p.feature_len(),
        }
    }

    /// Per-step token budget `L`; position `L` is always `END`.
    pub fn max_action_tokens(&self) -> usize {
        match self {
            EnvSpec::Sokoban(_) => 3,
            EnvSpec::Corridor(_) => 2,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvSpec::Sokoban(p) => p.horizon,
            EnvSpec::Corridor(p) => p.horizon,
        }
    }

    /// Whether the environment hands out non-trivial per-step rewards.
    pub fn has_step_rewards(&self) -> bool {
        matches!(self, EnvSpec::Sokoban(_))
    }
}

/// A live environment instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Sokoban(Sokoban),
    Corridor(Corridor),
}

impl Env {
    pub fn observation(&self) -> Observation {
        match self {
            Env::Sokoban(e) => e.observation(),
            Env::Corridor(e) => e.observation(),
        }
    }

    pub fn step(&mut self, tokens: &[Token]) -> Result<StepOutcome, EnvError> {
        match self {
            Env::Sokoban(e) => e.step(tokens),
            Env::Corridor(e) => e.step(tokens),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Env::Sokoban(e) => e.is_done(),
            Env::Corridor(e) => e.is_done(),
        }
    }

    pub fn is_success(&self) -> bool {
        match self {
            Env::Sokoban(e) => e.is_solved(),
            Env::Corridor(e) => e.is_success(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        match self {
            Env::Sokoban(e) => e.steps_taken(),
            Env::Corridor(e) => e.steps_taken(),
        }
    }
}
