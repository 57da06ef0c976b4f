//! Text environments behind a uniform HTTP protocol, a concurrent rollout
//! controller, and a reward-weighted self-evolution trainer for a log-linear
//! ReAct policy.

pub mod cli;
pub mod controller;
pub mod dataset;
pub mod envs;
pub mod evol;
pub mod policy;
pub mod protocol;
pub mod trajectory;
