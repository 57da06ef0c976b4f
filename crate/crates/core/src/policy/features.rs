//! Hashed sparse features over (context, candidate action).
//!
//! Every feature has a readable name; names are hashed with FNV-1a into a
//! fixed `FEATURE_DIM`-dimensional space. Besides generic text features
//! (observation tokens crossed with action tokens, action identity, last
//! action) each built-in environment contributes a few cues derived from the
//! visible text only: the policy never sees hidden state.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use crate::envs::{craft, maze, wordle, CRAFT, MAZE, WORDLE};

use super::PolicyContext;

pub const FEATURE_DIM: usize = 1 << 16;
pub const FEATURE_VERSION: &str = "evolgym-features/1";

const MAX_OBS_TOKENS: usize = 24;
const MAX_ACTION_TOKENS: usize = 6;

/// Sparse vector with sorted, unique indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    pub entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn from_unsorted(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut out: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => out.push((i, v)),
            }
        }
        out.retain(|e| e.1 != 0.0);
        SparseVec { entries: out }
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| dense[i as usize] * v).sum()
    }

    pub fn add_scaled_to(&self, dense: &mut [f64], scale: f64) {
        for &(i, v) in &self.entries {
            dense[i as usize] += scale * v;
        }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut d = vec![0.0; dim];
        self.add_scaled_to(&mut d, 1.0);
        d
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn feature_index(name: &str) -> u32 {
    (fnv1a(name.as_bytes()) % FEATURE_DIM as u64) as u32
}

/// Named features before hashing.
pub type Named = Vec<(String, f64)>;

pub fn hash_features(named: &Named) -> SparseVec {
    SparseVec::from_unsorted(named.iter().map(|(n, v)| (feature_index(n), *v)).collect())
}

fn tokens(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let t = t.to_ascii_lowercase();
        if seen.insert(t.clone()) {
            out.push(t);
        }
    }
    out
}

/// Context-level state computed once and shared by all candidate actions.
pub struct Prepared<'a> {
    ctx: &'a PolicyContext,
    obs_tokens: Vec<String>,
    last_action: Option<&'a str>,
    env: EnvCues,
}

enum EnvCues {
    None,
    Maze(MazeCues),
    Wordle(WordleCues),
    Craft(CraftCues),
}

struct MazeCues {
    goal: maze::Pos,
    pos: maze::Pos,
    visits: HashMap<maze::Pos, u32>,
    walls: String,
    /// Over the map seen so far: unvisited cells next to an open side of a
    /// visited one are the frontier; `frontier_dist` is the path length to
    /// the nearest of them and `estimate` the smallest path length to a
    /// frontier cell plus that cell's Manhattan distance to the goal.
    frontier_dist: HashMap<maze::Pos, usize>,
    estimate: HashMap<maze::Pos, usize>,
}

fn step(p: maze::Pos, d: maze::Direction) -> Option<maze::Pos> {
    let (dx, dy) = d.delta();
    let x = p.0.checked_add_signed(dx)?;
    let y = p.1.checked_add_signed(dy)?;
    (x >= 1 && y >= 1).then_some((x, y))
}

fn manhattan(a: maze::Pos, b: maze::Pos) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Multi-source shortest paths over the seen map, seeded at every frontier
/// cell with cost `seed(cell)`.
fn frontier_costs(
    open: &HashMap<maze::Pos, Vec<maze::Direction>>,
    frontier: &BTreeSet<maze::Pos>,
    seed: impl Fn(maze::Pos) -> usize,
) -> HashMap<maze::Pos, usize> {
    let mut best: HashMap<maze::Pos, usize> = HashMap::new();
    let mut queue: BinaryHeap<Reverse<(usize, maze::Pos)>> = frontier.iter().map(|&f| Reverse((seed(f), f))).collect();
    while let Some(Reverse((c, p))) = queue.pop() {
        if best.contains_key(&p) {
            continue;
        }
        best.insert(p, c);
        // Edges are symmetric: a visited cell's open side leads to `p` iff
        // `p`'s neighbour in that direction is visited and open towards it.
        for d in maze::Direction::ALL {
            if let Some(q) = step(p, d) {
                let linked = open.get(&q).is_some_and(|sides| sides.contains(&d.opposite()));
                if linked && !best.contains_key(&q) {
                    queue.push(Reverse((c + 1, q)));
                }
            }
        }
    }
    best
}

struct WordleCues {
    constraints: Vec<(String, wordle::Feedback)>,
    guessed: BTreeSet<String>,
    tested: BTreeSet<u8>,
}

struct CraftCues {
    target: String,
    recipes: Vec<craft::Recipe>,
    inventory: craft::Inventory,
    /// How often each (normalised) action was already taken.
    done: HashMap<String, u32>,
}

impl<'a> Prepared<'a> {
    pub fn new(ctx: &'a PolicyContext) -> Self {
        let mut obs_tokens = tokens(&ctx.current_observation);
        obs_tokens.truncate(MAX_OBS_TOKENS);
        let env = match ctx.env_name.as_str() {
            MAZE => maze_cues(ctx).map_or(EnvCues::None, EnvCues::Maze),
            WORDLE => EnvCues::Wordle(wordle_cues(ctx)),
            CRAFT => craft_cues(ctx).map_or(EnvCues::None, EnvCues::Craft),
            _ => EnvCues::None,
        };
        Prepared {
            ctx,
            obs_tokens,
            last_action: ctx.history.last().map(|s| s.action.as_str()),
            env,
        }
    }

    pub fn named(&self, action: &str) -> Named {
        let mut f: Named = Vec::new();
        let mut push = |name: String| f.push((name, 1.0));
        // Word identity says nothing about a wordle state past the opener,
        // so wordle gets its own opening feature instead.
        if self.ctx.env_name != WORDLE {
            push(format!("act={action}"));
            if let Some(last) = self.last_action {
                push(format!("last={last}>act={action}"));
            }
        }
        // Text crosses are the fallback for environments without cues; where
        // cues exist the crosses mostly add noise.
        if matches!(self.env, EnvCues::None) {
            let mut atoks = tokens(action);
            atoks.truncate(MAX_ACTION_TOKENS);
            for o in &self.obs_tokens {
                for a in &atoks {
                    push(format!("obs:{o}>tok:{a}"));
                }
            }
        }
        match &self.env {
            EnvCues::None => {}
            EnvCues::Maze(m) => maze_features(m, self.last_action, action, &mut push),
            EnvCues::Wordle(w) => wordle_features(w, action, &mut push),
            EnvCues::Craft(c) => craft_features(c, self.last_action, action, &mut push),
        }
        f
    }

    pub fn features(&self, action: &str) -> SparseVec {
        hash_features(&self.named(action))
    }
}

/// Named features of one (context, action) pair.
pub fn featurize_named(ctx: &PolicyContext, action: &str) -> Named {
    Prepared::new(ctx).named(action)
}

pub fn featurize(ctx: &PolicyContext, action: &str) -> SparseVec {
    Prepared::new(ctx).features(action)
}

fn maze_cues(ctx: &PolicyContext) -> Option<MazeCues> {
    let (goal, pos) = maze::parse_positions(&ctx.current_observation)?;
    let mut visits: HashMap<maze::Pos, u32> = HashMap::new();
    let seen = std::iter::once(ctx.instruction.as_str()).chain(ctx.history.iter().map(|s| s.observation.as_str()));
    for text in seen {
        if let Some((_, p)) = maze::parse_positions(text) {
            *visits.entry(p).or_insert(0) += 1;
        }
    }
    let walls = ctx
        .current_observation
        .rsplit_once("There are ")
        .map(|(_, tail)| tail.trim_end_matches('.').to_string())
        .unwrap_or_default();
    let mut open: HashMap<maze::Pos, Vec<maze::Direction>> = HashMap::new();
    let seen = std::iter::once(ctx.instruction.as_str()).chain(ctx.history.iter().map(|s| s.observation.as_str()));
    for text in seen {
        if let (Some((_, p)), Some(w)) = (maze::parse_positions(text), maze::parse_walls(text)) {
            let sides = maze::Direction::ALL.into_iter().filter(|d| !w.contains(d)).collect();
            open.insert(p, sides);
        }
    }
    let frontier: BTreeSet<maze::Pos> = open
        .iter()
        .flat_map(|(&p, sides)| sides.iter().filter_map(move |&d| step(p, d)))
        .filter(|q| !open.contains_key(q))
        .collect();
    Some(MazeCues {
        goal,
        pos,
        visits,
        walls,
        frontier_dist: frontier_costs(&open, &frontier, |_| 0),
        estimate: frontier_costs(&open, &frontier, |f| manhattan(f, goal)),
    })
}

fn maze_features(m: &MazeCues, last: Option<&str>, action: &str, push: &mut impl FnMut(String)) {
    let Some(d) = maze::Direction::parse(action) else {
        push("m:unknown".into());
        return;
    };
    let (dx, dy) = d.delta();
    let nx = m.pos.0 as i64 + dx as i64;
    let ny = m.pos.1 as i64 + dy as i64;
    let before = (m.goal.0 as i64 - m.pos.0 as i64).abs() + (m.goal.1 as i64 - m.pos.1 as i64).abs();
    let after = (m.goal.0 as i64 - nx).abs() + (m.goal.1 as i64 - ny).abs();
    let heading = if after < before { "toward" } else { "away" };
    let visits = if nx < 1 || ny < 1 {
        0
    } else {
        m.visits.get(&(nx as usize, ny as usize)).copied().unwrap_or(0)
    };
    let novelty = match visits {
        0 => "fresh",
        1 => "seen",
        _ => "seen2",
    };
    let back = last.and_then(maze::Direction::parse).is_some_and(|l| l == d.opposite());
    push(format!("m:{heading}"));
    push(format!("m:{novelty}"));
    push(format!("m:{heading}+{novelty}"));
    if back {
        push("m:back".into());
        push(format!("m:back+{heading}"));
    }
    if after == 0 {
        push("m:reaches_goal".into());
    }
    if let Some(n) = step(m.pos, d) {
        let closer = |table: &HashMap<maze::Pos, usize>| match (table.get(&n), table.get(&m.pos)) {
            (Some(a), Some(b)) => Some(a < b),
            _ => None,
        };
        match closer(&m.frontier_dist) {
            Some(true) => push("m:to_frontier".into()),
            Some(false) => push("m:from_frontier".into()),
            None => {}
        }
        match closer(&m.estimate) {
            Some(true) => push("m:best_first".into()),
            Some(false) => push("m:not_best".into()),
            None => {}
        }
    }
    let sx = (m.goal.0 as i64 - m.pos.0 as i64).signum();
    let sy = (m.goal.1 as i64 - m.pos.1 as i64).signum();
    push(format!("m:goal({sx},{sy})>{}", d.action()));
    push(format!("m:walls({})>{}", m.walls, d.action()));
}

fn wordle_cues(ctx: &PolicyContext) -> WordleCues {
    let mut constraints = Vec::new();
    let mut guessed = BTreeSet::new();
    let mut tested = BTreeSet::new();
    for s in &ctx.history {
        let g = wordle::normalize_guess(&s.action);
        if let Some(fb) = wordle::parse_feedback(&s.observation) {
            if g.len() == 5 && g.bytes().all(|b| b.is_ascii_lowercase()) {
                tested.extend(g.bytes());
                guessed.insert(g.clone());
                constraints.push((g, fb));
            }
        }
    }
    WordleCues {
        constraints,
        guessed,
        tested,
    }
}

fn wordle_features(w: &WordleCues, action: &str, push: &mut impl FnMut(String)) {
    let word = wordle::normalize_guess(action);
    if word.len() != 5 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        push("w:malformed".into());
        return;
    }
    let violations = w
        .constraints
        .iter()
        .filter(|(g, fb)| wordle::wordle_feedback(&word, g) != *fb)
        .count();
    push(if violations == 0 {
        "w:consistent".into()
    } else {
        "w:inconsistent".into()
    });
    if w.guessed.contains(&word) {
        push("w:repeat".into());
    }
    let distinct: BTreeSet<u8> = word.bytes().collect();
    let fresh = distinct.iter().filter(|b| !w.tested.contains(b)).count();
    push(format!("w:fresh{fresh}"));
    if distinct.len() < 5 {
        push("w:double".into());
    }
    for (i, b) in word.bytes().enumerate() {
        push(format!("w:p{i}={}", b as char));
    }
    if w.constraints.is_empty() {
        push(format!("w:open={word}"));
    }
}

fn craft_cues(ctx: &PolicyContext) -> Option<CraftCues> {
    let (recipes, target) = craft::parse_instruction(&ctx.instruction)?;
    let mut done = HashMap::new();
    for s in &ctx.history {
        *done.entry(s.action.trim().to_ascii_lowercase()).or_insert(0) += 1;
    }
    Some(CraftCues {
        target,
        recipes,
        inventory: craft::inventory_from_history(&ctx.history),
        done,
    })
}

/// How `item` relates to the listed recipes: whether the goal recipe or any
/// other listed recipe consumes it, and whether the inventory already covers
/// the largest single use.
fn usage(c: &CraftCues, item: &str) -> (&'static str, &'static str) {
    let consumers: Vec<&craft::Recipe> = c
        .recipes
        .iter()
        .filter(|r| r.inputs.iter().any(|(_, i)| i == item))
        .collect();
    let role = if consumers.iter().any(|r| r.output == c.target) {
        "for_target"
    } else if consumers.is_empty() {
        "unused"
    } else {
        "feeds"
    };
    let need = consumers
        .iter()
        .flat_map(|r| r.inputs.iter().filter(|(_, i)| i == item).map(|(n, _)| *n))
        .max()
        .unwrap_or(0);
    let have = c.inventory.get(item).copied().unwrap_or(0);
    let stock = if have == 0 {
        "none"
    } else if have >= need {
        "enough"
    } else {
        "some"
    };
    (role, stock)
}

fn craft_features(c: &CraftCues, last: Option<&str>, action: &str, push: &mut impl FnMut(String)) {
    let a = action.trim().to_ascii_lowercase();
    if a == "inventory" {
        push("c:inventory".into());
        if last.is_some_and(|l| l.trim().eq_ignore_ascii_case("inventory")) {
            push("c:inventory_again".into());
        }
        return;
    }
    let (kind, item) = if let Some(item) = a.strip_prefix("get ") {
        ("get", craft::parse_get(item).1)
    } else if let Some(cmd) = craft::parse_craft(&a) {
        if cmd.output == c.target {
            push("c:craft_target".into());
            return;
        }
        ("craft", cmd.output)
    } else {
        push("c:unknown".into());
        return;
    };
    let (role, stock) = usage(c, &item);
    match c.done.get(&a).copied().unwrap_or(0) {
        0 => {}
        1 => push(format!("c:{kind}_again")),
        _ => push(format!("c:{kind}_again2")),
    }
    push(format!("c:{kind}_{role}"));
    push(format!("c:{kind}_{stock}"));
    push(format!("c:{kind}_{role}+{stock}"));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::World;
    use crate::trajectory::Step;

    fn maze_ctx(seed: u64) -> PolicyContext {
        let w = maze::MazeWorld::generate(seed, 7).unwrap();
        PolicyContext {
            env_name: MAZE.into(),
            instruction_id: format!("maze-{seed}"),
            system_prompt: maze::SYSTEM_PROMPT.into(),
            instruction: w.instruction_text(),
            history: vec![],
            current_observation: w.instruction_text(),
            available_actions: w.available_actions(),
        }
    }

    #[test]
    fn deterministic() {
        let ctx = maze_ctx(3);
        for a in &ctx.available_actions {
            assert_eq!(featurize(&ctx, a), featurize(&ctx, a));
        }
    }

    #[test]
    fn actions_differ_in_identity() {
        let ctx = maze_ctx(3);
        let a = featurize(&ctx, "move up");
        let b = featurize(&ctx, "move down");
        let ia = feature_index("act=move up");
        let ib = feature_index("act=move down");
        assert!(a.entries.iter().any(|e| e.0 == ia));
        assert!(!b.entries.iter().any(|e| e.0 == ia));
        assert!(b.entries.iter().any(|e| e.0 == ib));
    }

    #[test]
    fn sparse_merge_sums_duplicates() {
        let v = SparseVec::from_unsorted(vec![(3, 1.0), (1, 2.0), (3, 0.5), (2, 1.0), (2, -1.0)]);
        assert_eq!(v.entries, vec![(1, 2.0), (3, 1.5)]);
    }

    #[test]
    fn wordle_consistency_cue() {
        let ctx = PolicyContext {
            env_name: WORDLE.into(),
            instruction_id: "w".into(),
            system_prompt: String::new(),
            instruction: wordle::INSTRUCTION.into(),
            history: vec![Step {
                thought: String::new(),
                action: "p l a t e".into(),
                observation: "y y y b g".into(),
            }],
            current_observation: "y y y b g".into(),
            available_actions: vec![],
        };
        let names: Vec<String> = featurize_named(&ctx, "a p p l e").into_iter().map(|x| x.0).collect();
        assert!(names.contains(&"w:consistent".to_string()));
        let names: Vec<String> = featurize_named(&ctx, "c r a n e").into_iter().map(|x| x.0).collect();
        assert!(names.contains(&"w:inconsistent".to_string()));
    }
}
