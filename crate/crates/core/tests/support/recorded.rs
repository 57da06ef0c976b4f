//! Trajectories recorded from the oracle and the untrained policy.

use std::sync::Arc;

use evolgym::controller::oracle::OraclePolicy;
use evolgym::controller::{rollout, rollout_rng, run_indexed, LocalEnvClient};
use evolgym::dataset::{InstructionSet, TrajectoryDataset};
use evolgym::envs::{self, Difficulty};
use evolgym::evol::desk::start_policy;
use evolgym::policy::Policy;
use evolgym::protocol::SessionManager;
use evolgym::trajectory::{Provenance, Trajectory};

pub fn difficulties() -> Vec<Difficulty> {
    envs::ENV_NAMES
        .iter()
        .map(|e| Difficulty::default_for(e).unwrap())
        .collect()
}

pub fn manager(set: &InstructionSet) -> Arc<SessionManager> {
    Arc::new(SessionManager::new(envs::registry(&difficulties()), set.clone()))
}

/// `per_env` episodes in every environment: even-numbered instructions solved
/// by the oracle, odd ones attempted by the untrained policy at temperature 1.
pub fn recorded(per_env: usize) -> (Arc<InstructionSet>, Vec<Trajectory>) {
    let ds = difficulties();
    let mut all = Vec::new();
    for d in &ds {
        all.extend(envs::generate_set(*d, per_env, 0, 0, 21).unwrap());
    }
    let set = Arc::new(InstructionSet::new(all).unwrap());
    let client = LocalEnvClient::new(manager(&set));
    let oracle = OraclePolicy::new(Arc::clone(&set), &ds).unwrap();
    let random = start_policy(&ds).unwrap();
    let jobs = set.all().to_vec();
    let ts = run_indexed(jobs.len(), 8, |i| {
        let ins = &jobs[i];
        let (policy, temperature): (&dyn Policy, f64) = if i % 2 == 0 { (&oracle, 0.0) } else { (&random, 1.0) };
        let mut rng = rollout_rng(5, &ins.instruction_id, 0);
        rollout(
            policy,
            &client,
            ins,
            temperature,
            None,
            &mut rng,
            Provenance::Sampled(1),
        )
        .unwrap()
    });
    (set, ts)
}

/// Writes the trajectories to a JSONL file and reads them back.
pub fn round_trip(ts: Vec<Trajectory>) -> Vec<Trajectory> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectories.jsonl");
    TrajectoryDataset::new("recorded", ts).write_jsonl(&path).unwrap();
    TrajectoryDataset::read_jsonl(&path, "recorded").unwrap().records
}
