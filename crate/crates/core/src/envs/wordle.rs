//! Five-letter word guessing with `b`/`y`/`g` feedback.

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::protocol::{Outcome, Transition, World};

pub const MAX_ROUNDS: u32 = 8;
pub const MAX_ATTEMPTS: u32 = 6;
pub const MIN_VOCAB: usize = 50;
pub const MAX_VOCAB: usize = 500;

const WORDS: &str = include_str!("../../assets/words.txt");

pub const SYSTEM_PROMPT: &str = "You are an expert wordle player. Welcome to the game of Wordle. Your objective is to guess a hidden 5 letter word. You have 6 attempts to guess it correctly and you should try to guess it in as few attempts as possible. When guessing the word, you should format your word as a space separated sequence of letters, like \"s h i r e\" for example. After guessing the word, you will receive feedback from the game environment in the form of a sequence of 5 space separated letters like \"b y g g b\", where each letter indicates some information about the hidden word. The environment will return one of three letters - \"b\", \"g\", or \"y\" - for each letter in the word you guessed. We describe the meaning of each letter below:\n\n\"b\": If the environment returns a \"b\", it means that the letter at that position in your guessed word is not in the hidden word.\n\"y\": If the environment returns a \"y\", it means that the letter at that position in your guessed word is in the hidden word but is not in the correct position.\n\"g\": If the environment returns a \"g\", it means that the letter at that position in your guessed word is in the hidden word and is in the correct position.\n\nAs a note, if you guess an invalid word (e.g. not a 5 letter word or a word not in the vocabulary), the environment will respond with an \"invalid word\" message. In general though, you should use this information returned by the environment to update your belief about what the hidden word might be and adjust your next guess accordingly.\n\nYour response should use the following format:\n\nThought: <Your Thought>\nAction: <Your Word>";

pub const INSTRUCTION: &str = "Now let's start a new game. Remember, the word you guess should be strictly in the vocabulary. You should return your thought and your word strictly in the formation mentioned above.";

pub const INVALID_WORD: &str = "invalid word";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mark {
    /// Not in the word (or no copies left).
    B,
    /// In the word, wrong position.
    Y,
    /// Right letter, right position.
    G,
}

impl Mark {
    pub fn as_char(self) -> char {
        match self {
            Mark::B => 'b',
            Mark::Y => 'y',
            Mark::G => 'g',
        }
    }

    pub fn from_char(c: char) -> Option<Mark> {
        match c {
            'b' => Some(Mark::B),
            'y' => Some(Mark::Y),
            'g' => Some(Mark::G),
            _ => None,
        }
    }
}

pub type Feedback = [Mark; 5];

/// Count-limited two-pass scoring: greens first, then yellows while copies of
/// the letter remain unaccounted for in the target.
pub fn wordle_feedback(target: &str, guess: &str) -> Feedback {
    let t = target.as_bytes();
    let g = guess.as_bytes();
    debug_assert!(t.len() == 5 && g.len() == 5);
    let mut marks = [Mark::B; 5];
    let mut remaining = [0u8; 26];
    for i in 0..5 {
        if g[i] == t[i] {
            marks[i] = Mark::G;
        } else {
            remaining[(t[i] - b'a') as usize] += 1;
        }
    }
    for i in 0..5 {
        if marks[i] == Mark::G {
            continue;
        }
        let slot = &mut remaining[(g[i] - b'a') as usize];
        if *slot > 0 {
            *slot -= 1;
            marks[i] = Mark::Y;
        }
    }
    marks
}

pub fn render_feedback(f: &Feedback) -> String {
    let chars: Vec<String> = f.iter().map(|m| m.as_char().to_string()).collect();
    chars.join(" ")
}

pub fn parse_feedback(text: &str) -> Option<Feedback> {
    let marks: Vec<Mark> = text
        .split_whitespace()
        .map(|s| {
            let mut cs = s.chars();
            match (cs.next(), cs.next()) {
                (Some(c), None) => Mark::from_char(c),
                _ => None,
            }
        })
        .collect::<Option<Vec<_>>>()?;
    marks.try_into().ok()
}

/// Normalises `"s h i r e"`, `"SHIRE"` and similar to `"shire"`.
pub fn normalize_guess(action: &str) -> String {
    action
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Renders a word in the spaced form agents are asked to emit.
pub fn spaced(word: &str) -> String {
    let chars: Vec<String> = word.chars().map(String::from).collect();
    chars.join(" ")
}

/// The shipped word list, in file order.
pub fn builtin_words() -> &'static [String] {
    static LIST: OnceLock<Vec<String>> = OnceLock::new();
    LIST.get_or_init(|| parse_word_list(WORDS))
}

pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim().to_ascii_lowercase())
        .filter(|l| l.len() == 5 && l.bytes().all(|b| b.is_ascii_lowercase()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WordleError {
    #[error("vocabulary size {0} outside {MIN_VOCAB}..={MAX_VOCAB}")]
    VocabSize(usize),
    #[error("word list has only {have} words, {want} requested")]
    ShortList { have: usize, want: usize },
}

/// The vocabulary used for a given size: the first `size` words of the list.
#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Arc<Vec<String>>,
    members: Arc<HashSet<String>>,
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vocabulary({} words)", self.words.len())
    }
}

impl Vocabulary {
    pub fn new(list: &[String], size: usize) -> Result<Self, WordleError> {
        if !(MIN_VOCAB..=MAX_VOCAB).contains(&size) {
            return Err(WordleError::VocabSize(size));
        }
        if list.len() < size {
            return Err(WordleError::ShortList {
                have: list.len(),
                want: size,
            });
        }
        let words: Vec<String> = list[..size].to_vec();
        let members = words.iter().cloned().collect();
        Ok(Self {
            words: Arc::new(words),
            members: Arc::new(members),
        })
    }

    pub fn builtin(size: usize) -> Result<Self, WordleError> {
        Self::new(builtin_words(), size)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, w: &str) -> bool {
        self.members.contains(w)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct WordleWorld {
    pub vocabulary: Vocabulary,
    pub target: String,
    pub attempts_used: u32,
    pub guesses: Vec<String>,
}

impl fmt::Debug for WordleWorld {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WordleWorld")
            .field("vocabulary", &self.vocabulary)
            .field("target", &self.target)
            .field("attempts_used", &self.attempts_used)
            .field("guesses", &self.guesses)
            .finish()
    }
}

impl WordleWorld {
    pub fn generate(seed: u64, vocabulary: Vocabulary) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = vocabulary.words()[rng.gen_range(0..vocabulary.len())].clone();
        WordleWorld {
            vocabulary,
            target,
            attempts_used: 0,
            guesses: Vec::new(),
        }
    }
}

impl World for WordleWorld {
    fn apply(&mut self, action: &str) -> Transition {
        let guess = normalize_guess(action);
        if guess.len() != 5 || !self.vocabulary.contains(&guess) {
            return Transition {
                observation: INVALID_WORD.to_string(),
                step_reward: -1.0,
                outcome: None,
            };
        }
        self.attempts_used += 1;
        self.guesses.push(guess.clone());
        let fb = wordle_feedback(&self.target, &guess);
        let outcome = if fb == [Mark::G; 5] {
            Some(Outcome::Success)
        } else if self.attempts_used >= MAX_ATTEMPTS {
            Some(Outcome::Failure)
        } else {
            None
        };
        Transition {
            observation: render_feedback(&fb),
            step_reward: -1.0,
            outcome,
        }
    }

    fn available_actions(&self) -> Vec<String> {
        Vec::new()
    }
}
