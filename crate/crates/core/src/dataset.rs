//! Trajectory datasets, instruction sets and the merge strategies used between
//! evolution iterations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{parse_trajectory, serialize_trajectory, Instruction, RecordError, Split, Trajectory};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Record {
        path: String,
        line: usize,
        #[source]
        source: RecordError,
    },
    #[error("{path}:{line}: bad instruction record: {message}")]
    Instruction { path: String, line: usize, message: String },
    #[error("duplicate instruction id `{0}`")]
    DuplicateInstruction(String),
    #[error("record {index} ({env}/{id}) does not resolve against the instruction set")]
    Unresolved { index: usize, env: String, id: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub label: String,
    pub records: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn new(label: impl Into<String>, records: Vec<Trajectory>) -> Self {
        Self {
            label: label.into(),
            records,
        }
    }

    pub fn empty(label: impl Into<String>) -> Self {
        Self::new(label, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn successes(&self) -> usize {
        self.records.iter().filter(|t| t.is_success()).count()
    }

    /// Success counts keyed by environment name.
    pub fn successes_by_env(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for t in &self.records {
            let e = out.entry(t.env_name.clone()).or_insert(0);
            if t.is_success() {
                *e += 1;
            }
        }
        out
    }

    /// Stable sort by `(env, instruction_id, provenance)`.
    pub fn sort(&mut self) {
        self.records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.records {
            out.push_str(&serialize_trajectory(t));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DatasetError> {
        let io = |source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = fs::File::create(path).map_err(io)?;
        let mut w = BufWriter::new(file);
        for t in &self.records {
            writeln!(w, "{}", serialize_trajectory(t)).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_jsonl(path: &Path, label: impl Into<String>) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t = parse_trajectory(line).map_err(|source| DatasetError::Record {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?;
            records.push(t);
        }
        Ok(Self::new(label, records))
    }

    /// Checks that every record names an instruction present in `set`.
    pub fn validate_against(&self, set: &InstructionSet) -> Result<(), DatasetError> {
        for (index, t) in self.records.iter().enumerate() {
            match set.get(&t.instruction_id) {
                Some(ins) if ins.env_name == t.env_name => {}
                _ => {
                    return Err(DatasetError::Unresolved {
                        index,
                        env: t.env_name.clone(),
                        id: t.instruction_id.clone(),
                    })
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeStrategy {
    /// Union the new samples with the initial expert set `D_s`.
    #[default]
    WithInitial,
    /// Union the new samples with the previous iteration's samples.
    WithPrevious,
}

/// Unions `d_new` with `d_s` or `d_prev` by concatenation (no dedup), then
/// orders records by `(env, instruction_id, provenance)`.
pub fn merge_datasets(
    strategy: MergeStrategy,
    d_s: &TrajectoryDataset,
    d_prev: &TrajectoryDataset,
    d_new: &TrajectoryDataset,
) -> TrajectoryDataset {
    let other = match strategy {
        MergeStrategy::WithInitial => d_s,
        MergeStrategy::WithPrevious => d_prev,
    };
    let mut records = Vec::with_capacity(d_new.len() + other.len());
    records.extend(d_new.records.iter().cloned());
    records.extend(other.records.iter().cloned());
    let mut out = TrajectoryDataset::new(format!("{}+{}", d_new.label, other.label), records);
    out.sort();
    out
}

/// All instructions known to a run, indexed by id.
#[derive(Debug, Clone, Default)]
pub struct InstructionSet {
    instructions: Vec<Instruction>,
    index: HashMap<String, usize>,
}

impl InstructionSet {
    pub fn new(instructions: Vec<Instruction>) -> Result<Self, DatasetError> {
        let mut index = HashMap::with_capacity(instructions.len());
        for (i, ins) in instructions.iter().enumerate() {
            if index.insert(ins.instruction_id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateInstruction(ins.instruction_id.clone()));
            }
        }
        Ok(Self { instructions, index })
    }

    pub fn get(&self, id: &str) -> Option<&Instruction> {
        self.index.get(id).map(|&i| &self.instructions[i])
    }

    pub fn all(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn env_names(&self) -> Vec<String> {
        let set: HashSet<&str> = self.instructions.iter().map(|i| i.env_name.as_str()).collect();
        let mut v: Vec<String> = set.into_iter().map(String::from).collect();
        v.sort();
        v
    }

    pub fn split(&self, split: Split) -> Vec<Instruction> {
        self.instructions.iter().filter(|i| i.split == split).cloned().collect()
    }

    /// The evolution pool `Q_e`: every non-eval instruction, so the BC subset
    /// is contained in it.
    pub fn evolve_pool(&self) -> Vec<Instruction> {
        self.instructions
            .iter()
            .filter(|i| i.split != Split::Eval)
            .cloned()
            .collect()
    }

    pub fn counts(&self) -> BTreeMap<(String, Split), usize> {
        let mut out = BTreeMap::new();
        for i in &self.instructions {
            *out.entry((i.env_name.clone(), i.split)).or_insert(0) += 1;
        }
        out
    }

    /// Merges another set into this one, rejecting duplicate ids.
    pub fn extend(&mut self, other: InstructionSet) -> Result<(), DatasetError> {
        for ins in other.instructions {
            if self.index.contains_key(&ins.instruction_id) {
                return Err(DatasetError::DuplicateInstruction(ins.instruction_id));
            }
            self.index.insert(ins.instruction_id.clone(), self.instructions.len());
            self.instructions.push(ins);
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for i in &self.instructions {
            out.push_str(&serde_json::to_string(i).expect("instruction serialization"));
            out.push('\n');
        }
        out
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut v = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ins: Instruction = serde_json::from_str(line).map_err(|e| DatasetError::Instruction {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            v.push(ins);
        }
        Self::new(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{DoneReason, Provenance, Step};

    fn traj(id: &str, prov: Provenance) -> Trajectory {
        Trajectory {
            env_name: "maze".into(),
            instruction_id: id.into(),
            steps: vec![Step {
                thought: String::new(),
                action: "move up".into(),
                observation: "o".into(),
            }],
            reward: 1.0,
            done_reason: DoneReason::Success,
            provenance: prov,
        }
    }

    fn ds(label: &str, n: usize, prov: Provenance) -> TrajectoryDataset {
        TrajectoryDataset::new(label, (0..n).map(|i| traj(&format!("m{i:03}"), prov)).collect())
    }

    #[test]
    fn with_initial_concatenates_without_dedup() {
        let d_s = ds("D_s", 10, Provenance::Expert);
        let d_new = ds("D_1", 7, Provenance::Sampled(1));
        let m = merge_datasets(MergeStrategy::WithInitial, &d_s, &TrajectoryDataset::empty("p"), &d_new);
        assert_eq!(m.len(), 17);
        // m000 appears as expert then sampled
        assert_eq!(m.records[0].provenance, Provenance::Expert);
        assert_eq!(m.records[1].provenance, Provenance::Sampled(1));
    }

    #[test]
    fn with_previous_empty_prev_is_identity() {
        let d_s = ds("D_s", 10, Provenance::Expert);
        let d_new = ds("D_1", 7, Provenance::Sampled(1));
        let m = merge_datasets(
            MergeStrategy::WithPrevious,
            &d_s,
            &TrajectoryDataset::empty("p"),
            &d_new,
        );
        assert_eq!(m.records, d_new.records);
    }

    #[test]
    fn with_initial_keeps_d_s_every_iteration() {
        let d_s = ds("D_s", 4, Provenance::Expert);
        let mut prev = TrajectoryDataset::empty("none");
        for it in 1..=3 {
            let d_new = ds(&format!("D_{it}"), 3, Provenance::Sampled(it));
            let m = merge_datasets(MergeStrategy::WithInitial, &d_s, &prev, &d_new);
            for r in &d_s.records {
                assert!(m.records.contains(r));
            }
            prev = d_new;
        }
    }

    #[test]
    fn duplicate_instruction_rejected() {
        let i = Instruction {
            env_name: "maze".into(),
            instruction_id: "a".into(),
            text: "t".into(),
            seed: 1,
            split: Split::Bc,
        };
        assert!(matches!(
            InstructionSet::new(vec![i.clone(), i]),
            Err(DatasetError::DuplicateInstruction(_))
        ));
    }
}
