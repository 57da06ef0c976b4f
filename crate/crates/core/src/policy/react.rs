//! The `Thought: … / Action: …` emission format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReActOutput {
    pub thought: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no `Action:` label in agent output")]
    MissingAction,
    #[error("`Action:` block is empty")]
    EmptyAction,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Label {
    Thought,
    Action,
}

fn label_of(line: &str) -> Option<(Label, &str)> {
    let t = line.trim_start();
    for (label, word) in [(Label::Thought, "thought:"), (Label::Action, "action:")] {
        if t.len() >= word.len() && t[..word.len()].eq_ignore_ascii_case(word) {
            return Some((label, &t[word.len()..]));
        }
    }
    None
}

fn strip_fences(block: &str) -> String {
    let lines: Vec<&str> = block.lines().filter(|l| !l.trim_start().starts_with("```")).collect();
    lines.join("\n")
}

fn strip_quotes(s: &str) -> &str {
    let mut s = s.trim();
    loop {
        let b = s.as_bytes();
        if b.len() >= 2 {
            let (first, last) = (b[0], b[b.len() - 1]);
            if first == last && matches!(first, b'"' | b'\'' | b'`') {
                s = s[1..s.len() - 1].trim();
                continue;
            }
        }
        return s;
    }
}

/// Extracts the last `Thought:` and last `Action:` blocks. Labels are matched
/// case-insensitively at the start of a line (after optional indentation).
/// A block runs until the next label line.
pub fn parse_react(text: &str) -> Result<ReActOutput, ParseError> {
    let mut thought: Option<String> = None;
    let mut action: Option<String> = None;
    let mut current: Option<(Label, Vec<&str>)> = None;
    let mut flush = |cur: Option<(Label, Vec<&str>)>| {
        if let Some((label, lines)) = cur {
            let block = lines.join("\n");
            match label {
                Label::Thought => thought = Some(block),
                Label::Action => action = Some(block),
            }
        }
    };
    for line in text.lines() {
        match label_of(line) {
            Some((label, rest)) => {
                flush(current.take());
                current = Some((label, vec![rest]));
            }
            None => {
                if let Some((_, lines)) = current.as_mut() {
                    lines.push(line);
                }
            }
        }
    }
    flush(current);
    let action = action.ok_or(ParseError::MissingAction)?;
    let action = strip_quotes(&strip_fences(&action)).to_string();
    if action.is_empty() {
        return Err(ParseError::EmptyAction);
    }
    Ok(ReActOutput {
        thought: thought.map(|t| t.trim().to_string()).unwrap_or_default(),
        action,
    })
}

pub fn render_react(out: &ReActOutput) -> String {
    format!("Thought: {}\nAction: {}", out.thought, out.action)
}
