//! In-process end-to-end runs: generate instructions, collect expert data
//! with the built-in solvers, clone, then evolve. Used by the reproducibility
//! checks and by the command line when no servers are configured.

use std::sync::Arc;

use crate::controller::oracle::OraclePolicy;
use crate::controller::{collect_expert, LocalEnvClient, RolloutConfig};
use crate::dataset::{InstructionSet, TrajectoryDataset};
use crate::envs::{self, wordle, Difficulty};
use crate::policy::LogLinearPolicy;
use crate::protocol::SessionManager;
use crate::trajectory::{Instruction, Split};

use super::{agent_evol, train_base, EvolOutcome, RunInputs, TrainConfig, TrainError};

/// Instance counts for one environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeskSetup {
    pub difficulty: Difficulty,
    pub total: usize,
    /// Instructions whose solver trajectories form `D_s`.
    pub bc: usize,
    pub eval: usize,
}

impl DeskSetup {
    /// 240 instructions, 25 held out, and 55 of the remaining 215 (about a
    /// quarter) solved by the built-in solver.
    pub fn standard(difficulty: Difficulty) -> Self {
        Self {
            difficulty,
            total: 240,
            bc: 55,
            eval: 25,
        }
    }
}

/// The untrained policy: zero weights, with the vocabulary as the action set
/// of any wordle environment.
pub fn start_policy(difficulties: &[Difficulty]) -> Result<LogLinearPolicy, TrainError> {
    let mut p = LogLinearPolicy::zeros();
    for d in difficulties {
        if let Difficulty::Wordle { vocab_size } = *d {
            let v = wordle::Vocabulary::builtin(vocab_size).map_err(|e| TrainError::Config(e.to_string()))?;
            p = p.with_open_actions(envs::WORDLE, v.words().iter().map(|w| wordle::spaced(w)).collect());
        }
    }
    Ok(p)
}

pub struct Prepared {
    pub instructions: Arc<InstructionSet>,
    pub client: LocalEnvClient,
    pub d_s: TrajectoryDataset,
    pub start: LogLinearPolicy,
}

impl Prepared {
    pub fn evolve_pool(&self) -> Vec<Instruction> {
        self.instructions.evolve_pool()
    }

    pub fn eval_split(&self) -> Vec<Instruction> {
        self.instructions.split(Split::Eval)
    }
}

/// Generates every environment's instructions from `seed` and collects `D_s`.
pub fn prepare(setups: &[DeskSetup], seed: u64, rollout: &RolloutConfig) -> Result<Prepared, TrainError> {
    let mut all = Vec::new();
    for s in setups {
        all.extend(
            envs::generate_set(s.difficulty, s.total, s.bc, s.eval, seed)
                .map_err(|e| TrainError::Config(e.to_string()))?,
        );
    }
    let instructions = Arc::new(InstructionSet::new(all).map_err(|e| TrainError::Config(e.to_string()))?);
    let difficulties: Vec<Difficulty> = setups.iter().map(|s| s.difficulty).collect();
    let mgr = Arc::new(SessionManager::new(
        envs::registry(&difficulties),
        (*instructions).clone(),
    ));
    let client = LocalEnvClient::new(mgr);
    let oracle =
        OraclePolicy::new(Arc::clone(&instructions), &difficulties).map_err(|e| TrainError::Config(e.to_string()))?;
    let (collected, _) = collect_expert(&oracle, &client, &instructions.split(Split::Bc), &rollout.greedy())?;
    Ok(Prepared {
        instructions,
        client,
        d_s: collected.dataset,
        start: start_policy(&difficulties)?,
    })
}

/// Clones the start policy on `D_s` and evolves it.
pub fn run(prepared: &Prepared, train: &TrainConfig, rollout: &RolloutConfig) -> Result<EvolOutcome, TrainError> {
    let evolve = prepared.evolve_pool();
    let eval = prepared.eval_split();
    let inputs = RunInputs {
        client: &prepared.client,
        d_s: &prepared.d_s,
        evolve: &evolve,
        eval: &eval,
        rollout,
    };
    let (base, record) = train_base(&prepared.start, &inputs, train)?;
    agent_evol(&base, record, &inputs, train)
}
