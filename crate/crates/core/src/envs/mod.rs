//! The built-in environments and their registry.

pub mod craft;
pub mod maze;
pub mod wordle;

use std::collections::HashSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{EnvDescriptor, EnvRegistry, EnvSpec, Instance, RewardKind, World};
use crate::trajectory::{Instruction, Split};

pub const MAZE: &str = "maze";
pub const WORDLE: &str = "wordle";
pub const CRAFT: &str = "craft";
pub const ENV_NAMES: [&str; 3] = [CRAFT, MAZE, WORDLE];

/// Per-environment generation knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Difficulty {
    Maze { size: usize },
    Wordle { vocab_size: usize },
    Craft { min_depth: u32, max_depth: u32 },
}

impl Difficulty {
    pub fn default_for(env: &str) -> Option<Self> {
        match env {
            MAZE => Some(Difficulty::Maze { size: 7 }),
            WORDLE => Some(Difficulty::Wordle { vocab_size: 100 }),
            CRAFT => Some(Difficulty::Craft {
                min_depth: 1,
                max_depth: 3,
            }),
            _ => None,
        }
    }

    pub fn env_name(&self) -> &'static str {
        match self {
            Difficulty::Maze { .. } => MAZE,
            Difficulty::Wordle { .. } => WORDLE,
            Difficulty::Craft { .. } => CRAFT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("cannot split {total} instructions into {bc} expert and {eval} eval")]
    Counts { total: usize, bc: usize, eval: usize },
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("difficulty for `{given}` passed to environment `{env}`")]
    Mismatch { env: String, given: &'static str },
    #[error(transparent)]
    Maze(#[from] maze::MazeError),
    #[error(transparent)]
    Wordle(#[from] wordle::WordleError),
    #[error(transparent)]
    Craft(#[from] craft::CraftError),
}

pub fn descriptor(env: &str) -> Option<EnvDescriptor> {
    let (max_rounds, prompt) = match env {
        MAZE => (maze::MAX_ROUNDS, maze::SYSTEM_PROMPT),
        WORDLE => (wordle::MAX_ROUNDS, wordle::SYSTEM_PROMPT),
        CRAFT => (craft::MAX_ROUNDS, craft::SYSTEM_PROMPT),
        _ => return None,
    };
    Some(EnvDescriptor {
        env_name: env.to_string(),
        max_rounds,
        reward_kind: RewardKind::Binary,
        system_prompt: prompt.to_string(),
    })
}

pub fn max_rounds(env: &str) -> Option<u32> {
    descriptor(env).map(|d| d.max_rounds)
}

/// Builds the instance for `seed` at `difficulty`.
pub fn build(seed: u64, difficulty: Difficulty) -> Result<Instance, GenerateError> {
    Ok(match difficulty {
        Difficulty::Maze { size } => {
            let w = maze::MazeWorld::generate(seed, size)?;
            Instance {
                instruction_text: w.instruction_text(),
                world: Box::new(w),
            }
        }
        Difficulty::Wordle { vocab_size } => {
            let v = wordle::Vocabulary::builtin(vocab_size)?;
            Instance {
                instruction_text: wordle::INSTRUCTION.to_string(),
                world: Box::new(wordle::WordleWorld::generate(seed, v)),
            }
        }
        Difficulty::Craft { min_depth, max_depth } => {
            let book = Arc::new(craft::RecipeBook::builtin().clone());
            let w = craft::CraftWorld::generate(seed, book, min_depth, max_depth)?;
            Instance {
                instruction_text: w.instruction_text(),
                world: Box::new(w),
            }
        }
    })
}

/// Generates an instruction record plus its hidden world.
pub fn generate_instance(
    env: &str,
    seed: u64,
    difficulty: Difficulty,
) -> Result<(Instruction, Box<dyn World>), GenerateError> {
    if descriptor(env).is_none() {
        return Err(GenerateError::UnknownEnv(env.to_string()));
    }
    if difficulty.env_name() != env {
        return Err(GenerateError::Mismatch {
            env: env.to_string(),
            given: difficulty.env_name(),
        });
    }
    let inst = build(seed, difficulty)?;
    let instruction = Instruction {
        env_name: env.to_string(),
        instruction_id: format!("{env}-{seed}"),
        text: inst.instruction_text,
        seed,
        split: Split::Evolve,
    };
    Ok((instruction, inst.world))
}

/// Generates `total` instructions with distinct seeds drawn from `seed`. The
/// first `bc` form the expert subset of the evolve pool and the last `eval`
/// are held out for evaluation.
pub fn generate_set(
    difficulty: Difficulty,
    total: usize,
    bc: usize,
    eval: usize,
    seed: u64,
) -> Result<Vec<Instruction>, GenerateError> {
    if bc + eval > total {
        return Err(GenerateError::Counts { total, bc, eval });
    }
    let env = difficulty.env_name();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::policy::features::fnv1a(env.as_bytes()));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let s = u64::from(rng.gen::<u32>());
        if !seen.insert(s) {
            continue;
        }
        let (mut ins, _) = generate_instance(env, s, difficulty)?;
        if out.len() < bc {
            ins.split = Split::Bc;
        } else if out.len() >= total - eval {
            ins.split = Split::Eval;
        }
        out.push(ins);
    }
    Ok(out)
}

/// A spec whose factory generates instances at a fixed difficulty.
pub fn spec(difficulty: Difficulty) -> EnvSpec {
    let descriptor = descriptor(difficulty.env_name()).expect("built-in env");
    EnvSpec {
        descriptor,
        factory: Arc::new(move |seed| build(seed, difficulty).map_err(|e| e.to_string())),
    }
}

/// A registry over the given difficulties (one entry per environment).
pub fn registry(difficulties: &[Difficulty]) -> EnvRegistry {
    let mut r = EnvRegistry::new();
    for d in difficulties {
        r.register(spec(*d));
    }
    r
}

/// All three environments at their default difficulty.
pub fn default_registry() -> EnvRegistry {
    let ds: Vec<Difficulty> = ENV_NAMES.iter().filter_map(|e| Difficulty::default_for(e)).collect();
    registry(&ds)
}
