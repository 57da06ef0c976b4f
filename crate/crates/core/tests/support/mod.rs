//! Oracles and harnesses shared by the integration test targets.
#![allow(dead_code)]

pub mod gradients;
pub mod protocol;
pub mod recorded;
pub mod rules;
