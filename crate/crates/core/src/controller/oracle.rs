//! Built-in solvers used to produce expert trajectories: BFS for the maze,
//! entropy-greedy guessing for wordle, and a topological planner for craft.
//! The maze solver is privileged (it regenerates the hidden layout from the
//! instruction seed); the other two use only the visible text.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, OnceLock};

use rand_chacha::ChaCha8Rng;

use crate::dataset::InstructionSet;
use crate::envs::{craft, maze, wordle, Difficulty, CRAFT, MAZE, WORDLE};
use crate::policy::{render_react, Emission, Policy, PolicyContext, PolicyError, ReActOutput};

fn emit(thought: String, action: String) -> Emission {
    Emission {
        text: render_react(&ReActOutput { thought, action }),
        log_prob: None,
    }
}

/// Resolves an instruction id to its seed; seed-only sessions use
/// `{env}-seed-{seed}` ids.
fn seed_of(instructions: &InstructionSet, id: &str) -> Option<u64> {
    instructions
        .get(id)
        .map(|i| i.seed)
        .or_else(|| id.rsplit_once("-seed-").and_then(|(_, s)| s.parse().ok()))
}

pub struct MazeOracle {
    instructions: Arc<InstructionSet>,
    size: usize,
}

impl MazeOracle {
    pub fn new(instructions: Arc<InstructionSet>, size: usize) -> Self {
        Self { instructions, size }
    }

    pub fn next_move(&self, ctx: &PolicyContext) -> Result<maze::Direction, PolicyError> {
        let seed = seed_of(&self.instructions, &ctx.instruction_id)
            .ok_or_else(|| PolicyError::Oracle(format!("unknown instruction {}", ctx.instruction_id)))?;
        let world = maze::MazeWorld::generate(seed, self.size).map_err(|e| PolicyError::Oracle(e.to_string()))?;
        let (_, pos) = maze::parse_positions(&ctx.current_observation)
            .ok_or_else(|| PolicyError::Oracle("no position in observation".into()))?;
        let path = world
            .layout
            .shortest_path(pos, world.goal)
            .ok_or_else(|| PolicyError::Oracle("goal unreachable".into()))?;
        path.first()
            .copied()
            .ok_or_else(|| PolicyError::Oracle("already at the goal".into()))
    }
}

impl Policy for MazeOracle {
    fn emit(&self, ctx: &PolicyContext, _t: f64, _rng: &mut ChaCha8Rng) -> Result<Emission, PolicyError> {
        let d = self.next_move(ctx)?;
        Ok(emit(
            format!("The shortest path to the goal starts with {}.", d.action()),
            d.action().to_string(),
        ))
    }
}

pub struct WordleOracle {
    vocabulary: wordle::Vocabulary,
    opener: OnceLock<String>,
}

/// Entropy in bits of the feedback partition `guess` induces over `pool`.
pub fn partition_entropy(guess: &str, pool: &[&String]) -> f64 {
    let mut buckets: HashMap<wordle::Feedback, usize> = HashMap::new();
    for t in pool {
        *buckets.entry(wordle::wordle_feedback(t, guess)).or_insert(0) += 1;
    }
    let n = pool.len() as f64;
    buckets
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

impl WordleOracle {
    pub fn new(vocabulary: wordle::Vocabulary) -> Self {
        Self {
            vocabulary,
            opener: OnceLock::new(),
        }
    }

    /// The highest-entropy consistent word; ties go to the smaller word.
    fn best<'a>(pool: &[&'a String]) -> &'a String {
        let mut best = pool[0];
        let mut best_h = f64::NEG_INFINITY;
        for w in pool {
            let h = partition_entropy(w, pool);
            if h > best_h + 1e-12 || ((h - best_h).abs() <= 1e-12 && *w < best) {
                best = w;
                best_h = h;
            }
        }
        best
    }

    pub fn next_guess(&self, ctx: &PolicyContext) -> String {
        let constraints: Vec<(String, wordle::Feedback)> = ctx
            .history
            .iter()
            .filter_map(|s| {
                let g = wordle::normalize_guess(&s.action);
                wordle::parse_feedback(&s.observation).map(|fb| (g, fb))
            })
            .collect();
        if constraints.is_empty() {
            return self
                .opener
                .get_or_init(|| {
                    let all: Vec<&String> = self.vocabulary.words().iter().collect();
                    Self::best(&all).clone()
                })
                .clone();
        }
        let pool: Vec<&String> = self
            .vocabulary
            .words()
            .iter()
            .filter(|w| constraints.iter().all(|(g, fb)| wordle::wordle_feedback(w, g) == *fb))
            .collect();
        if pool.is_empty() {
            return self.vocabulary.words()[0].clone();
        }
        Self::best(&pool).clone()
    }
}

impl Policy for WordleOracle {
    fn emit(&self, ctx: &PolicyContext, _t: f64, _rng: &mut ChaCha8Rng) -> Result<Emission, PolicyError> {
        let w = self.next_guess(ctx);
        Ok(emit(
            format!("{w} splits the remaining candidates most evenly."),
            wordle::spaced(&w),
        ))
    }
}

#[derive(Default)]
pub struct CraftOracle;

impl CraftOracle {
    pub fn next_action(&self, ctx: &PolicyContext) -> Result<String, PolicyError> {
        let (recipes, target) = craft::parse_instruction(&ctx.instruction)
            .ok_or_else(|| PolicyError::Oracle("instruction has no goal".into()))?;
        let inventory = craft::inventory_from_history(&ctx.history);
        let plan = craft::plan(&recipes, &target, &inventory)
            .ok_or_else(|| PolicyError::Oracle(format!("no recipe for {target}")))?;
        Ok(plan.into_iter().next().unwrap_or_else(|| "inventory".to_string()))
    }
}

impl Policy for CraftOracle {
    fn emit(&self, ctx: &PolicyContext, _t: f64, _rng: &mut ChaCha8Rng) -> Result<Emission, PolicyError> {
        let a = self.next_action(ctx)?;
        Ok(emit(format!("Next step of the crafting plan: {a}."), a))
    }
}

/// Dispatches to the solver of each context's environment.
#[derive(Default)]
pub struct OraclePolicy {
    solvers: BTreeMap<String, Box<dyn Policy>>,
}

impl OraclePolicy {
    pub fn new(instructions: Arc<InstructionSet>, difficulties: &[Difficulty]) -> Result<Self, PolicyError> {
        let mut solvers: BTreeMap<String, Box<dyn Policy>> = BTreeMap::new();
        for d in difficulties {
            let p: Box<dyn Policy> = match *d {
                Difficulty::Maze { size } => Box::new(MazeOracle::new(Arc::clone(&instructions), size)),
                Difficulty::Wordle { vocab_size } => Box::new(WordleOracle::new(
                    wordle::Vocabulary::builtin(vocab_size).map_err(|e| PolicyError::Oracle(e.to_string()))?,
                )),
                Difficulty::Craft { .. } => Box::new(CraftOracle),
            };
            solvers.insert(d.env_name().to_string(), p);
        }
        Ok(Self { solvers })
    }
}

impl Policy for OraclePolicy {
    fn emit(&self, ctx: &PolicyContext, t: f64, rng: &mut ChaCha8Rng) -> Result<Emission, PolicyError> {
        match self.solvers.get(&ctx.env_name) {
            Some(p) => p.emit(ctx, t, rng),
            None => Err(PolicyError::Oracle(format!("no solver for `{}`", ctx.env_name))),
        }
    }
}

/// Names of the environments that have built-in solvers.
pub const SOLVABLE: [&str; 3] = [CRAFT, MAZE, WORDLE];
