//! Grid maze. Positions are `(x, y)` with `x` the row (moving down increases
//! it) and `y` the column (moving right increases it), both 1-based.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::protocol::{Outcome, Transition, World};

pub const MAX_ROUNDS: u32 = 15;
pub const MIN_SIZE: usize = 5;
pub const MAX_SIZE: usize = 9;
/// Probability of knocking out each remaining interior wall after carving.
pub const LOOP_PROBABILITY: f64 = 0.1;
/// Goals are placed at a shortest-path distance within this range.
pub const GOAL_DISTANCE: (usize, usize) = (2, 10);

pub const SYSTEM_PROMPT: &str = "You are an expert maze solver. Your objective is to reach the goal in as few steps as possible. At each step you will be given information about where the goal is, your current position, and the walls that surround you. When you move right you increase your y position by 1, when you move down you increase your x position by 1. Your possible actions are \"move up\", \"move down\", \"move left\", \"move right\". Formally, your return should be in this format:\n\nThought: <Your Thought>\nAction: <Your Action>";

const INSTRUCTION_PREFIX: &str = "Now let's start a new game. Return your action and your thought in the format above strictly. Now, make the optimal action given the current environment state:\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn action(self) -> &'static str {
        match self {
            Direction::Up => "move up",
            Direction::Down => "move down",
            Direction::Left => "move left",
            Direction::Right => "move right",
        }
    }

    pub fn parse(action: &str) -> Option<Direction> {
        let norm: Vec<String> = action.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
        match norm.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["move", "up"] => Some(Direction::Up),
            ["move", "down"] => Some(Direction::Down),
            ["move", "left"] => Some(Direction::Left),
            ["move", "right"] => Some(Direction::Right),
            _ => None,
        }
    }

    fn bit(self) -> u8 {
        match self {
            Direction::Up => 1,
            Direction::Down => 2,
            Direction::Left => 4,
            Direction::Right => 8,
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }

    /// Phrase used in the wall list of an observation.
    fn wall_phrase(self) -> &'static str {
        match self {
            Direction::Left => "to your left",
            Direction::Right => "to your right",
            Direction::Up => "above you",
            Direction::Down => "below you",
        }
    }
}

pub type Pos = (usize, usize);

/// Carved maze layout: for each cell, a bitmask of open sides.
#[derive(Clone, PartialEq, Eq)]
pub struct Layout {
    size: usize,
    open: Vec<u8>,
}

impl fmt::Debug for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Layout({}x{}:", self.size, self.size)?;
        for b in &self.open {
            write!(f, "{b:x}")?;
        }
        write!(f, ")")
    }
}

impl Layout {
    pub fn size(&self) -> usize {
        self.size
    }

    fn idx(&self, (x, y): Pos) -> usize {
        (x - 1) * self.size + (y - 1)
    }

    pub fn is_open(&self, p: Pos, d: Direction) -> bool {
        self.open[self.idx(p)] & d.bit() != 0
    }

    pub fn neighbor(&self, (x, y): Pos, d: Direction) -> Option<Pos> {
        let (dx, dy) = d.delta();
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        let n = self.size as isize;
        if nx < 1 || ny < 1 || nx > n || ny > n {
            None
        } else {
            Some((nx as usize, ny as usize))
        }
    }

    fn carve(&mut self, p: Pos, d: Direction) {
        if let Some(q) = self.neighbor(p, d) {
            let (ip, iq) = (self.idx(p), self.idx(q));
            self.open[ip] |= d.bit();
            self.open[iq] |= d.opposite().bit();
        }
    }

    /// Sides of `p` that are blocked, in left, right, up, down order.
    pub fn walls(&self, p: Pos) -> Vec<Direction> {
        [Direction::Left, Direction::Right, Direction::Up, Direction::Down]
            .into_iter()
            .filter(|&d| !self.is_open(p, d))
            .collect()
    }

    /// BFS distances from `from`; `usize::MAX` marks unreachable cells.
    pub fn distances(&self, from: Pos) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.size * self.size];
        let mut q = VecDeque::new();
        dist[self.idx(from)] = 0;
        q.push_back(from);
        while let Some(p) = q.pop_front() {
            let dp = dist[self.idx(p)];
            for d in Direction::ALL {
                if !self.is_open(p, d) {
                    continue;
                }
                if let Some(n) = self.neighbor(p, d) {
                    let i = self.idx(n);
                    if dist[i] == usize::MAX {
                        dist[i] = dp + 1;
                        q.push_back(n);
                    }
                }
            }
        }
        dist
    }

    /// A shortest sequence of moves from `from` to `to`, if reachable.
    /// Ties between moves are broken in [`Direction::ALL`] order.
    pub fn shortest_path(&self, from: Pos, to: Pos) -> Option<Vec<Direction>> {
        let dist = self.distances(to);
        if dist[self.idx(from)] == usize::MAX {
            return None;
        }
        let mut path = Vec::new();
        let mut p = from;
        while p != to {
            let here = dist[self.idx(p)];
            let d = Direction::ALL
                .into_iter()
                .find(|&d| self.is_open(p, d) && self.neighbor(p, d).is_some_and(|n| dist[self.idx(n)] + 1 == here))?;
            path.push(d);
            p = self.neighbor(p, d)?;
        }
        Some(path)
    }

    pub fn cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (1..=self.size).flat_map(move |x| (1..=self.size).map(move |y| (x, y)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeWorld {
    pub layout: Layout,
    pub start: Pos,
    pub goal: Pos,
    pub position: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MazeError {
    #[error("maze size {0} outside {MIN_SIZE}..={MAX_SIZE}")]
    Size(usize),
    #[error("no goal cell at a distance in {lo}..={hi} for seed {0}", lo = GOAL_DISTANCE.0, hi = GOAL_DISTANCE.1)]
    NoGoal(u64),
}

impl MazeWorld {
    /// Randomized DFS carving plus loop injection, then a start cell and a
    /// goal at a bounded shortest-path distance.
    pub fn generate(seed: u64, size: usize) -> Result<Self, MazeError> {
        if !(MIN_SIZE..=MAX_SIZE).contains(&size) {
            return Err(MazeError::Size(size));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layout = Layout {
            size,
            open: vec![0; size * size],
        };
        let mut visited = vec![false; size * size];
        let root = (rng.gen_range(1..=size), rng.gen_range(1..=size));
        let mut stack = vec![root];
        visited[layout.idx(root)] = true;
        while let Some(&p) = stack.last() {
            let mut dirs = Direction::ALL;
            dirs.shuffle(&mut rng);
            let next = dirs.into_iter().find_map(|d| {
                layout
                    .neighbor(p, d)
                    .filter(|&n| !visited[layout.idx(n)])
                    .map(|n| (d, n))
            });
            match next {
                Some((d, n)) => {
                    layout.carve(p, d);
                    visited[layout.idx(n)] = true;
                    stack.push(n);
                }
                None => {
                    stack.pop();
                }
            }
        }
        let cells: Vec<Pos> = layout.cells().collect();
        for &p in &cells {
            for d in [Direction::Down, Direction::Right] {
                if layout.neighbor(p, d).is_some() && !layout.is_open(p, d) && rng.gen_bool(LOOP_PROBABILITY) {
                    layout.carve(p, d);
                }
            }
        }

        let start = cells[rng.gen_range(0..cells.len())];
        let dist = layout.distances(start);
        let candidates: Vec<Pos> = cells
            .iter()
            .copied()
            .filter(|&c| {
                let d = dist[layout.idx(c)];
                d >= GOAL_DISTANCE.0 && d <= GOAL_DISTANCE.1
            })
            .collect();
        let goal = *candidates
            .get(rng.gen_range(0..candidates.len().max(1)))
            .ok_or(MazeError::NoGoal(seed))?;
        Ok(MazeWorld {
            layout,
            start,
            goal,
            position: start,
        })
    }

    pub fn describe(&self) -> String {
        let walls = self.layout.walls(self.position);
        let wall_text = if walls.is_empty() {
            "There are no walls around you.".to_string()
        } else {
            let parts: Vec<&str> = walls.iter().map(|d| d.wall_phrase()).collect();
            format!("There are walls {}.", parts.join(", "))
        };
        format!(
            "The goal is at position {}, {}. Your current position is at position {}, {}. {}",
            self.goal.0, self.goal.1, self.position.0, self.position.1, wall_text
        )
    }

    pub fn instruction_text(&self) -> String {
        format!("{INSTRUCTION_PREFIX}{}", self.describe())
    }

    pub fn legal_moves(&self) -> Vec<Direction> {
        Direction::ALL
            .into_iter()
            .filter(|&d| self.layout.is_open(self.position, d))
            .collect()
    }
}

impl World for MazeWorld {
    fn apply(&mut self, action: &str) -> Transition {
        let (prefix, outcome) = match Direction::parse(action) {
            None => ("Invalid action. ", None),
            Some(d) if !self.layout.is_open(self.position, d) => ("You hit a wall. ", None),
            Some(d) => {
                self.position = self
                    .layout
                    .neighbor(self.position, d)
                    .expect("open side has a neighbour");
                if self.position == self.goal {
                    ("Success! You reached the goal. ", Some(Outcome::Success))
                } else {
                    ("", None)
                }
            }
        };
        Transition {
            observation: format!("{prefix}{}", self.describe()),
            step_reward: -1.0,
            outcome,
        }
    }

    fn available_actions(&self) -> Vec<String> {
        let mut v: Vec<String> = self.legal_moves().into_iter().map(|d| d.action().to_string()).collect();
        v.sort();
        v
    }
}

/// Parses the wall sides out of a maze observation.
pub fn parse_walls(observation: &str) -> Option<Vec<Direction>> {
    let (_, tail) = observation.rsplit_once("There are ")?;
    if tail.starts_with("no walls") {
        return Some(Vec::new());
    }
    let list = tail.strip_prefix("walls ")?;
    Some(
        Direction::ALL
            .into_iter()
            .filter(|d| list.contains(d.wall_phrase()))
            .collect(),
    )
}

/// Parses `(goal, position)` back out of a maze observation.
pub fn parse_positions(observation: &str) -> Option<(Pos, Pos)> {
    let grab = |key: &str| -> Option<Pos> {
        let start = observation.rfind(key)? + key.len();
        let rest = &observation[start..];
        let mut nums = rest
            .split(|c: char| !c.is_ascii_digit())
            .filter(|s| !s.is_empty())
            .take(2)
            .map(|s| s.parse::<usize>().ok());
        Some((nums.next()??, nums.next()??))
    };
    Some((
        grab("The goal is at position")?,
        grab("Your current position is at position")?,
    ))
}
