//! Instructions, ReAct steps and trajectories, plus their JSONL record format.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

/// Tolerance used when comparing floating point rewards against 1.
pub const REWARD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Bc,
    Evolve,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Bc => "bc",
            Split::Evolve => "evolve",
            Split::Eval => "eval",
        })
    }
}

/// A task instruction `u` bound to one seeded environment instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instruction {
    #[serde(rename = "env")]
    pub env_name: String,
    #[serde(rename = "id")]
    pub instruction_id: String,
    pub text: String,
    pub seed: u64,
    pub split: Split,
}

/// One `(thought, action, observation)` triple of a ReAct episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub thought: String,
    pub action: String,
    pub observation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Success,
    Failure,
    MaxRounds,
    ParseError,
}

/// Where a trajectory came from. Orders `expert` before any sampled record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Expert,
    Sampled(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    #[serde(rename = "env")]
    pub env_name: String,
    #[serde(rename = "id")]
    pub instruction_id: String,
    pub steps: Vec<Step>,
    #[serde(serialize_with = "serialize_reward")]
    pub reward: f64,
    pub done_reason: DoneReason,
    pub provenance: Provenance,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The actions actually sent to the environment, in order. A trailing
    /// unparseable emission is not part of the replayable prefix.
    pub fn executed_actions(&self) -> impl Iterator<Item = &str> {
        let n = match self.done_reason {
            DoneReason::ParseError => self.steps.len().saturating_sub(1),
            _ => self.steps.len(),
        };
        self.steps[..n].iter().map(|s| s.action.as_str())
    }

    /// Key used for deterministic dataset ordering.
    pub fn sort_key(&self) -> (&str, &str, Provenance) {
        (&self.env_name, &self.instruction_id, self.provenance)
    }

    pub fn is_success(&self) -> bool {
        (self.reward - 1.0).abs() <= REWARD_EPS
    }
}

// Integral rewards are written without a fractional part so a solved episode
// reads `"reward":1`.
fn serialize_reward<S: Serializer>(r: &f64, s: S) -> Result<S::Ok, S::Error> {
    if r.fract() == 0.0 && r.is_finite() {
        s.serialize_u64(*r as u64)
    } else {
        s.serialize_f64(*r)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("malformed record: {0}")]
    Framing(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("invalid field `{field}`: {message}")]
    InvalidField { field: &'static str, message: String },
    #[error("field `{field}` out of range: {value}")]
    Range { field: &'static str, value: f64 },
}

impl RecordError {
    /// The field the error refers to, if any.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            RecordError::Framing(_) => None,
            RecordError::MissingField(f) => Some(f),
            RecordError::InvalidField { field, .. } | RecordError::Range { field, .. } => Some(field),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("reward {0} outside [0, 1]")]
pub struct RewardDomainError(pub f64);

/// Maps a trajectory reward to 1 when it equals 1 and to 0 otherwise.
pub fn binarize_reward(r: f64) -> Result<u8, RewardDomainError> {
    if !(0.0..=1.0).contains(&r) {
        return Err(RewardDomainError(r));
    }
    Ok(u8::from((r - 1.0).abs() <= REWARD_EPS))
}

/// Serializes one trajectory as a single JSONL line (no trailing newline).
pub fn serialize_trajectory(t: &Trajectory) -> String {
    serde_json::to_string(t).expect("trajectory serialization is infallible")
}

pub fn parse_trajectory(line: &str) -> Result<Trajectory, RecordError> {
    let value: Value = serde_json::from_str(line).map_err(|e| RecordError::Framing(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| RecordError::Framing("record is not a JSON object".into()))?;

    let env_name = string_field(obj, "env")?;
    let instruction_id = string_field(obj, "id")?;
    let reward = obj
        .get("reward")
        .ok_or(RecordError::MissingField("reward"))?
        .as_f64()
        .ok_or_else(|| invalid("reward", "not a number"))?;
    if !(0.0..=1.0).contains(&reward) {
        return Err(RecordError::Range {
            field: "reward",
            value: reward,
        });
    }
    let done_reason: DoneReason = typed_field(obj, "done_reason")?;
    let provenance: Provenance = typed_field(obj, "provenance")?;

    let steps_value = obj.get("steps").ok_or(RecordError::MissingField("steps"))?;
    let raw_steps = steps_value.as_array().ok_or_else(|| invalid("steps", "not an array"))?;
    if raw_steps.is_empty() {
        return Err(invalid("steps", "a trajectory has at least one step"));
    }
    let mut steps = Vec::with_capacity(raw_steps.len());
    for (i, s) in raw_steps.iter().enumerate() {
        let s = s
            .as_object()
            .ok_or_else(|| invalid("steps", format!("step {i} is not an object")))?;
        let get = |name: &'static str| -> Result<String, RecordError> {
            match s.get(name) {
                Some(Value::String(v)) => Ok(v.clone()),
                Some(_) => Err(invalid(name, format!("step {i}: not a string"))),
                None => Err(RecordError::MissingField(name)),
            }
        };
        steps.push(Step {
            thought: get("thought")?,
            action: get("action")?,
            observation: get("observation")?,
        });
    }

    Ok(Trajectory {
        env_name,
        instruction_id,
        steps,
        reward,
        done_reason,
        provenance,
    })
}

fn invalid(field: &'static str, message: impl Into<String>) -> RecordError {
    RecordError::InvalidField {
        field,
        message: message.into(),
    }
}

fn string_field(obj: &Map<String, Value>, name: &'static str) -> Result<String, RecordError> {
    match obj.get(name) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(invalid(name, "not a string")),
        None => Err(RecordError::MissingField(name)),
    }
}

fn typed_field<T: serde::de::DeserializeOwned>(obj: &Map<String, Value>, name: &'static str) -> Result<T, RecordError> {
    let v = obj.get(name).ok_or(RecordError::MissingField(name))?;
    serde_json::from_value(v.clone()).map_err(|e| invalid(name, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_step() -> Trajectory {
        Trajectory {
            env_name: "maze".into(),
            instruction_id: "maze-0001".into(),
            steps: vec![Step {
                thought: "go right.".into(),
                action: "move right".into(),
                observation: "The goal is at position 1, 2.".into(),
            }],
            reward: 1.0,
            done_reason: DoneReason::Success,
            provenance: Provenance::Expert,
        }
    }

    #[test]
    fn integral_reward_has_no_fraction() {
        let line = serialize_trajectory(&one_step());
        assert!(line.contains("\"reward\":1"), "{line}");
        assert!(!line.contains("\"reward\":1.0"));
        assert_eq!(parse_trajectory(&line).unwrap(), one_step());
    }

    #[test]
    fn newline_in_observation_stays_on_one_line() {
        let mut t = one_step();
        t.steps[0].observation = "line one\nline two".into();
        let line = serialize_trajectory(&t);
        assert!(!line.contains('\n'));
        assert_eq!(parse_trajectory(&line).unwrap(), t);
    }

    #[test]
    fn reward_out_of_range_names_field() {
        let line = serialize_trajectory(&one_step()).replace("\"reward\":1", "\"reward\":1.5");
        let err = parse_trajectory(&line).unwrap_err();
        assert_eq!(
            err,
            RecordError::Range {
                field: "reward",
                value: 1.5
            }
        );
    }

    #[test]
    fn truncated_line_is_framing_error() {
        let line = serialize_trajectory(&one_step());
        let err = parse_trajectory(&line[..line.len() / 2]).unwrap_err();
        assert!(matches!(err, RecordError::Framing(_)));
    }

    #[test]
    fn missing_field_is_named() {
        let line = serialize_trajectory(&one_step()).replace("\"done_reason\"", "\"dr\"");
        assert_eq!(
            parse_trajectory(&line).unwrap_err(),
            RecordError::MissingField("done_reason")
        );
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize_reward(1.0), Ok(1));
        assert_eq!(binarize_reward(0.74), Ok(0));
        assert_eq!(binarize_reward(0.0), Ok(0));
        assert_eq!(binarize_reward(1.0 - 1e-13), Ok(1));
        assert!(binarize_reward(-0.1).is_err());
        assert!(binarize_reward(1.2).is_err());
    }

    #[test]
    fn sampled_provenance_sorts_after_expert() {
        assert!(Provenance::Expert < Provenance::Sampled(1));
        assert!(Provenance::Sampled(1) < Provenance::Sampled(2));
    }

    fn arb_text() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[ -~\\n\\t\"\\\\é漢]{0,24}").unwrap()
    }

    fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
        let step = (arb_text(), arb_text(), arb_text()).prop_map(|(thought, action, observation)| Step {
            thought,
            action,
            observation,
        });
        (
            "[a-z]{1,8}",
            "[a-z0-9-]{1,12}",
            proptest::collection::vec(step, 1..6),
            prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0],
            prop_oneof![
                Just(DoneReason::Success),
                Just(DoneReason::Failure),
                Just(DoneReason::MaxRounds),
                Just(DoneReason::ParseError)
            ],
            prop_oneof![Just(Provenance::Expert), (1u32..10).prop_map(Provenance::Sampled)],
        )
            .prop_map(
                |(env_name, instruction_id, steps, reward, done_reason, provenance)| Trajectory {
                    env_name,
                    instruction_id,
                    steps,
                    reward,
                    done_reason,
                    provenance,
                },
            )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn parse_inverts_serialize(t in arb_trajectory()) {
            let line = serialize_trajectory(&t);
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(parse_trajectory(&line).unwrap(), t);
        }

        #[test]
        fn binarize_is_idempotent_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let ba = binarize_reward(a).unwrap();
            prop_assert_eq!(binarize_reward(f64::from(ba)).unwrap(), ba);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(binarize_reward(lo).unwrap() <= binarize_reward(hi).unwrap());
        }
    }
}
