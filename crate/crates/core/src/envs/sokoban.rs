use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Observation, StepInfo, StepOutcome, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Floor,
    Box,
    Target,
    BoxOnTarget,
    Agent,
    AgentOnTarget,
}

impl Cell {
    pub const CHANNELS: usize = 7;

    fn channel(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Floor => ' ',
            Cell::Box => '$',
            Cell::Target => '.',
            Cell::BoxOnTarget => '*',
            Cell::Agent => '@',
            Cell::AgentOnTarget => '+',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verb {
    Move,
    Push,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }

    pub fn token(self) -> Token {
        match self {
            Direction::Up => Token::Up,
            Direction::Down => Token::Down,
            Direction::Left => Token::Left,
            Direction::Right => Token::Right,
        }
    }
}

impl Verb {
    pub fn token(self) -> Token {
        match self {
            Verb::Move => Token::Move,
            Verb::Push => Token::Push,
        }
    }
}

/// Reward schedule. Defaults follow the standard Sokoban shaping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SokobanRewards {
    pub step_penalty: f64,
    pub box_on_target: f64,
    pub box_off_target: f64,
    pub solved_bonus: f64,
    /// Charged on top of the step penalty for blocked or malformed actions.
    pub invalid_penalty: f64,
}

impl Default for SokobanRewards {
    fn default() -> Self {
        Self {
            step_penalty: -0.1,
            box_on_target: 1.0,
            box_off_target: -1.0,
            solved_bonus: 10.0,
            invalid_penalty: -0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SokobanParams {
    /// Side length including the outer wall ring.
    pub size: usize,
    pub boxes: usize,
    pub horizon: usize,
    pub rewards: SokobanRewards,
}

impl SokobanParams {
    /// Square room with the default horizon for its size.
    pub fn new(size: usize, boxes: usize) -> Self {
        let horizon = if size <= 5 { 20 } else { 30 };
        Self {
            size,
            boxes,
            horizon,
            rewards: SokobanRewards::default(),
        }
    }

    pub fn feature_len(&self) -> usize {
        self.size * self.size * Cell::CHANNELS
    }

    fn validate(&self) -> Result<(), EnvError> {
        if self.size < 4 {
            return Err(EnvError::InvalidParams(format!("grid side {} < 4", self.size)));
        }
        if self.boxes < 1 {
            return Err(EnvError::InvalidParams("at least one box required".into()));
        }
        if self.horizon < 1 {
            return Err(EnvError::InvalidParams("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Text Sokoban room.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sokoban {
    size: usize,
    walls: Vec<bool>,
    targets: Vec<bool>,
    boxes: Vec<bool>,
    agent: usize,
    steps: usize,
    horizon: usize,
    done: bool,
    seed: u64,
    rewards: SokobanRewardsBits,
}

// f64 rewards stored as bits so the room stays `Eq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct SokobanRewardsBits([u64; 5]);

impl From<SokobanRewards> for SokobanRewardsBits {
    fn from(r: SokobanRewards) -> Self {
        Self([
            r.step_penalty.to_bits(),
            r.box_on_target.to_bits(),
            r.box_off_target.to_bits(),
            r.solved_bonus.to_bits(),
            r.invalid_penalty.to_bits(),
        ])
    }
}

impl SokobanRewardsBits {
    fn get(&self) -> SokobanRewards {
        let f = |i: usize| f64::from_bits(self.0[i]);
        SokobanRewards {
            step_penalty: f(0),
            box_on_target: f(1),
            box_off_target: f(2),
            solved_bonus: f(3),
            invalid_penalty: f(4),
        }
    }
}

const TOPOLOGY_ATTEMPTS: usize = 64;
const PLAY_ATTEMPTS: usize = 4;

impl Sokoban {
    /// Generates a solvable room by reverse play: boxes start on their
    /// targets and the agent pulls them away. Every pull inverts to a push,
    /// so the starting configuration can always be solved.
    pub fn generate(params: &SokobanParams, seed: u64) -> Result<Self, EnvError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = params.size;
        for _ in 0..TOPOLOGY_ATTEMPTS {
            let walls = carve_topology(n, params.boxes, &mut rng);
            let floor: Vec<usize> = (0..n * n).filter(|&i| !walls[i]).collect();
            if floor.len() < params.boxes + 1 {
                continue;
            }
            let mut best: Option<(usize, Vec<usize>, usize, Vec<usize>)> = None;
            for _ in 0..PLAY_ATTEMPTS {
                let picks: Vec<usize> = floor.choose_multiple(&mut rng, params.boxes + 1).copied().collect();
                let targets = picks[..params.boxes].to_vec();
                let (boxes, agent) = reverse_play(n, &walls, &targets, picks[params.boxes], 3 * n * n, &mut rng);
                // every box must be off its target or the room starts solved
                let displacement: usize = boxes
                    .iter()
                    .zip(&targets)
                    .map(|(&b, &t)| manhattan(n, b, t))
                    .sum();
                let mut tgt_sorted = targets.clone();
                tgt_sorted.sort_unstable();
                let mut box_sorted = boxes.clone();
                box_sorted.sort_unstable();
                if tgt_sorted == box_sorted {
                    continue;
                }
                if best.as_ref().is_none_or(|b| displacement > b.0) {
                    best = Some((displacement, boxes, agent, targets));
                }
            }
            if let Some((_, boxes, agent, targets)) = best {
                let mut room = Sokoban {
                    size: n,
                    walls,
                    targets: vec![false; n * n],
                    boxes: vec![false; n * n],
                    agent,
                    steps: 0,
                    horizon: params.horizon,
                    done: false,
                    seed,
                    rewards: params.rewards.into(),
                };
                targets.iter().for_each(|&t| room.targets[t] = true);
                boxes.iter().for_each(|&b| room.boxes[b] = true);
                return Ok(room);
            }
        }
        Err(EnvError::Generation {
            seed,
            attempts: TOPOLOGY_ATTEMPTS,
        })
    }

    /// Builds a room from rows of standard Sokoban symbols.
    pub fn from_rows(rows: &[&str], horizon: usize) -> Result<Self, EnvError> {
        let n = rows.len();
        if rows.iter().any(|r| r.chars().count() != n) {
            return Err(EnvError::InvalidParams("rows must form a square".into()));
        }
        let mut room = Sokoban {
            size: n,
            walls: vec![false; n * n],
            targets: vec![false; n * n],
            boxes: vec![false; n * n],
            agent: usize::MAX,
            steps: 0,
            horizon,
            done: false,
            seed: 0,
            rewards: SokobanRewards::default().into(),
        };
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                let i = r * n + c;
                match ch {
                    '#' => room.walls[i] = true,
                    ' ' | '_' => {}
                    '$' => room.boxes[i] = true,
                    '.' => room.targets[i] = true,
                    '*' => {
                        room.boxes[i] = true;
                        room.targets[i] = true;
                    }
                    '@' | '+' => {
                        if room.agent != usize::MAX {
                            return Err(EnvError::InvalidParams("more than one agent".into()));
                        }
                        room.agent = i;
                        room.targets[i] = ch == '+';
                    }
                    other => return Err(EnvError::InvalidParams(format!("unknown symbol {other:?}"))),
                }
            }
        }
        if room.agent == usize::MAX {
            return Err(EnvError::InvalidParams("no agent".into()));
        }
        if room.box_count() != room.targets.iter().filter(|&&t| t).count() {
            return Err(EnvError::InvalidParams("box and target counts differ".into()));
        }
        Ok(room)
    }

    pub fn with_rewards(mut self, rewards: SokobanRewards) -> Self {
        self.rewards = rewards.into();
        self
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn box_positions(&self) -> Vec<usize> {
        (0..self.boxes.len()).filter(|&i| self.boxes[i]).collect()
    }

    pub fn is_wall(&self, i: usize) -> bool {
        self.walls[i]
    }

    pub fn is_target(&self, i: usize) -> bool {
        self.targets[i]
    }

    pub fn box_count(&self) -> usize {
        self.boxes.iter().filter(|&&b| b).count()
    }

    pub fn boxes_on_target(&self) -> usize {
        self.boxes.iter().zip(&self.targets).filter(|(&b, &t)| b && t).count()
    }

    pub fn is_solved(&self) -> bool {
        self.boxes_on_target() == self.box_count()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn cell(&self, i: usize) -> Cell {
        match (self.walls[i], self.boxes[i], self.targets[i], self.agent == i) {
            (true, ..) => Cell::Wall,
            (_, true, true, _) => Cell::BoxOnTarget,
            (_, true, false, _) => Cell::Box,
            (_, _, true, true) => Cell::AgentOnTarget,
            (_, _, false, true) => Cell::Agent,
            (_, _, true, false) => Cell::Target,
            _ => Cell::Floor,
        }
    }

    pub fn render(&self) -> String {
        let n = self.size;
        (0..n)
            .map(|r| (0..n).map(|c| self.cell(r * n + c).symbol()).collect::<String>())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn observation(&self) -> Observation {
        let n = self.size;
        let mut features = vec![0.0; n * n * Cell::CHANNELS];
        for i in 0..n * n {
            features[i * Cell::CHANNELS + self.cell(i).channel()] = 1.0;
        }
        Observation {
            features,
            tag: self.render(),
        }
    }

    fn neighbour(&self, i: usize, d: Direction) -> Option<usize> {
        let (dr, dc) = d.delta();
        let r = (i / self.size) as isize + dr;
        let c = (i % self.size) as isize + dc;
        let n = self.size as isize;
        (r >= 0 && r < n && c >= 0 && c < n).then(|| (r * n + c) as usize)
    }

    fn free(&self, i: usize) -> bool {
        !self.walls[i] && !self.boxes[i]
    }

    /// Parses `[verb, direction, END]`.
    pub fn parse_action(tokens: &[Token]) -> Option<(Verb, Direction)> {
        let [v, d, Token::End] = tokens else { return None };
        let verb = match v {
            Token::Move => Verb::Move,
            Token::Push => Verb::Push,
            _ => return None,
        };
        let dir = match d {
            Token::Up => Direction::Up,
            Token::Down => Direction::Down,
            Token::Left => Direction::Left,
            Token::Right => Direction::Right,
            _ => return None,
        };
        Some((verb, dir))
    }

    /// Applies one action. Returns `None` when it is blocked, otherwise the
    /// reward from box movement.
    fn apply(&mut self, verb: Verb, dir: Direction) -> Option<f64> {
        let r = self.rewards.get();
        let next = self.neighbour(self.agent, dir)?;
        if self.boxes[next] {
            if verb == Verb::Move {
                return None;
            }
            let beyond = self.neighbour(next, dir)?;
            if !self.free(beyond) {
                return None;
            }
            self.boxes[next] = false;
            self.boxes[beyond] = true;
            self.agent = next;
            let mut reward = 0.0;
            if self.targets[beyond] {
                reward += r.box_on_target;
            }
            if self.targets[next] {
                reward += r.box_off_target;
            }
            Some(reward)
        } else if self.walls[next] {
            None
        } else {
            // PUSH with no adjacent box moves like MOVE
            self.agent = next;
            Some(0.0)
        }
    }

    pub fn step(&mut self, tokens: &[Token]) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::StepAfterDone);
        }
        let r = self.rewards.get();
        self.steps += 1;
        let mut reward = r.step_penalty;
        let moved = Self::parse_action(tokens).and_then(|(v, d)| self.apply(v, d));
        let invalid = moved.is_none();
        match moved {
            Some(box_reward) => reward += box_reward,
            None => reward += r.invalid_penalty,
        }
        let solved = self.is_solved();
        if solved && !invalid {
            reward += r.solved_bonus;
        }
        self.done = solved || self.steps >= self.horizon;
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                success: solved,
                invalid,
                boxes_on_target: self.boxes_on_target(),
            },
        })
    }
}

fn manhattan(n: usize, a: usize, b: usize) -> usize {
    (a / n).abs_diff(b / n) + (a % n).abs_diff(b % n)
}

/// Random-walk carve of the interior; the outer ring stays wall.
fn carve_topology(n: usize, boxes: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut walls = vec![true; n * n];
    let inner = n - 2;
    let area = inner * inner;
    let wanted = (boxes + 3).max((area * 7).div_ceil(10)).min(area);
    let mut r = rng.gen_range(1..n - 1);
    let mut c = rng.gen_range(1..n - 1);
    walls[r * n + c] = false;
    let mut open = 1;
    let mut guard = 0;
    while open < wanted && guard < 100 * area {
        guard += 1;
        let d = Direction::ALL[rng.gen_range(0..4)];
        let (dr, dc) = d.delta();
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr < 1 || nc < 1 || nr > inner as isize || nc > inner as isize {
            continue;
        }
        r = nr as usize;
        c = nc as usize;
        if walls[r * n + c] {
            walls[r * n + c] = false;
            open += 1;
        }
    }
    walls
}

/// Walks the agent randomly, pulling boxes it backs away from.
fn reverse_play(
    n: usize,
    walls: &[bool],
    targets: &[usize],
    start: usize,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, usize) {
    let mut boxes = targets.to_vec();
    let mut agent = start;
    let step_to = |i: usize, d: Direction| -> Option<usize> {
        let (dr, dc) = d.delta();
        let r = (i / n) as isize + dr;
        let c = (i % n) as isize + dc;
        (r >= 0 && c >= 0 && (r as usize) < n && (c as usize) < n).then(|| r as usize * n + c as usize)
    };
    for _ in 0..steps {
        let d = Direction::ALL[rng.gen_range(0..4)];
        let Some(next) = step_to(agent, d) else { continue };
        if walls[next] || boxes.contains(&next) {
            continue;
        }
        let back = match d {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        };
        let behind = step_to(agent, back).and_then(|b| boxes.iter().position(|&x| x == b));
        if let Some(bi) = behind {
            if rng.gen_bool(0.7) {
                boxes[bi] = agent;
            }
        }
        agent = next;
    }
    (boxes, agent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Token::*;

    fn act(v: Token, d: Token) -> [Token; 3] {
        [v, d, End]
    }

    #[test]
    fn push_onto_target_not_final() {
        // two boxes so the first placement does not solve the room
        let mut room = Sokoban::from_rows(&["######", "#@$. #", "#  $.#", "#    #", "#    #", "######"], 20).unwrap();
        let out = room.step(&act(Push, Right)).unwrap();
        assert!((out.reward - 0.9).abs() < 1e-12);
        assert!(!out.done);
        assert_eq!(out.info.boxes_on_target, 1);
    }

    #[test]
    fn wall_bump_is_invalid() {
        let mut room = Sokoban::from_rows(&["#####", "#@$.#", "#   #", "#   #", "#####"], 20).unwrap();
        let before = room.render();
        let out = room.step(&act(Move, Up)).unwrap();
        assert!((out.reward + 0.2).abs() < 1e-12);
        assert!(out.info.invalid);
        assert_eq!(room.render(), before);
    }

    #[test]
    fn solving_push_pays_bonus() {
        let mut room = Sokoban::from_rows(&["#####", "#@$.#", "#   #", "#   #", "#####"], 20).unwrap();
        let out = room.step(&act(Push, Right)).unwrap();
        assert!((out.reward - 10.9).abs() < 1e-12);
        assert!(out.done && out.info.success);
        assert_eq!(room.step(&act(Move, Left)), Err(EnvError::StepAfterDone));
    }

    #[test]
    fn move_into_box_and_chain_push_are_blocked() {
        let mut room = Sokoban::from_rows(&["######", "#@$$.#", "#   .#", "#    #", "#    #", "######"], 20).unwrap();
        assert!(room.step(&act(Move, Right)).unwrap().info.invalid);
        assert!(room.step(&act(Push, Right)).unwrap().info.invalid);
        assert_eq!(room.agent(), 7);
    }

    #[test]
    fn push_without_box_moves() {
        let mut room = Sokoban::from_rows(&["#####", "#@$.#", "#   #", "#   #", "#####"], 20).unwrap();
        let out = room.step(&act(Push, Down)).unwrap();
        assert!(!out.info.invalid);
        assert!((out.reward + 0.1).abs() < 1e-12);
        assert_eq!(room.agent(), 11);
    }

    #[test]
    fn malformed_tokens_are_invalid() {
        let mut room = Sokoban::from_rows(&["#####", "#@$.#", "#   #", "#   #", "#####"], 20).unwrap();
        for seq in [&[End][..], &[Up, Move, End], &[Move, Move, End], &[Move, Down]] {
            let out = room.step(seq).unwrap();
            assert!(out.info.invalid, "{seq:?}");
            assert!((out.reward + 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn push_off_target_costs() {
        let mut room = Sokoban::from_rows(&["######", "#@* .#", "#  $ #", "#    #", "#    #", "######"], 20).unwrap();
        let out = room.step(&act(Push, Right)).unwrap();
        assert!((out.reward - (-1.1)).abs() < 1e-12);
    }

    #[test]
    fn horizon_ends_episode() {
        let mut room = Sokoban::from_rows(&["#####", "#@$.#", "#   #", "#   #", "#####"], 2).unwrap();
        assert!(!room.step(&act(Move, Down)).unwrap().done);
        let out = room.step(&act(Move, Up)).unwrap();
        assert!(out.done && !out.info.success);
    }

    #[test]
    fn generation_is_deterministic_and_well_formed() {
        let p = SokobanParams::new(5, 1);
        let a = Sokoban::generate(&p, 17).unwrap();
        let b = Sokoban::generate(&p, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.box_count(), 1);
        assert_eq!(a.targets.iter().filter(|&&t| t).count(), 1);
        assert!(!a.is_wall(a.agent()));
        assert!(!a.is_solved());
    }

    #[test]
    fn bad_params_rejected() {
        assert!(matches!(Sokoban::generate(&SokobanParams::new(3, 1), 0), Err(EnvError::InvalidParams(_))));
        assert!(matches!(Sokoban::generate(&SokobanParams::new(4, 6), 0), Err(EnvError::Generation { .. })));
    }
}
