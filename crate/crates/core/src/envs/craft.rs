//! Text crafting: `get` base items, `craft` with the listed recipes, reach the
//! target item.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{Outcome, Transition, World};
use crate::trajectory::Step;

pub const MAX_ROUNDS: u32 = 20;
pub const MAX_DEPTH: u32 = 4;

const RECIPES: &str = include_str!("../../assets/recipes.jsonl");

pub const SYSTEM_PROMPT: &str = "You are given a few useful crafting recipes to craft items in Minecraft. Crafting commands are of the format \"craft [target object] using [input ingredients]\". Every round I will give you an observation, you have to respond to an action based on the state and instruction. You can \"get\" an object (ingredients) from the inventory or the environment, look up the game \"inventory\" by inventory, or \"craft\" (target) using any of the crafting commands. You can use ONLY these crafting commands provided, do not use your own crafting commands. Your response should use the following format:\n\nThought: ...\nAction: ...";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Recipe {
    pub output: String,
    pub count: u32,
    /// `(count, item)` pairs.
    pub inputs: Vec<(u32, String)>,
}

impl Recipe {
    /// `craft 4 stick using 2 oak planks`
    pub fn command(&self) -> String {
        let ins: Vec<String> = self.inputs.iter().map(|(n, item)| format!("{n} {item}")).collect();
        format!("craft {} {} using {}", self.count, self.output, ins.join(", "))
    }

    fn input_key(&self) -> Vec<(String, u32)> {
        let mut m: BTreeMap<String, u32> = BTreeMap::new();
        for (n, item) in &self.inputs {
            *m.entry(item.clone()).or_insert(0) += n;
        }
        m.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CraftError {
    #[error("recipe line {line}: {message}")]
    Recipe { line: usize, message: String },
    #[error("duplicate recipe for `{0}`")]
    Duplicate(String),
    #[error("recipe graph has a cycle through `{0}`")]
    Cycle(String),
    #[error("depth range {0}..={1} invalid (allowed 1..={MAX_DEPTH})")]
    Depth(u32, u32),
    #[error("no craftable item at depth {0}")]
    NoTarget(u32),
}

/// All known recipes, one per output item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecipeBook {
    recipes: BTreeMap<String, Recipe>,
    base: BTreeSet<String>,
    depth: BTreeMap<String, u32>,
}

impl RecipeBook {
    pub fn from_jsonl(text: &str) -> Result<Self, CraftError> {
        #[derive(Deserialize)]
        struct Line {
            output: String,
            count: u32,
            inputs: Vec<(u32, String)>,
        }
        let mut recipes = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(line).map_err(|e| CraftError::Recipe {
                line: i + 1,
                message: e.to_string(),
            })?;
            if l.count == 0 || l.inputs.is_empty() || l.inputs.iter().any(|(n, _)| *n == 0) {
                return Err(CraftError::Recipe {
                    line: i + 1,
                    message: "counts must be positive and inputs non-empty".into(),
                });
            }
            let r = Recipe {
                output: l.output.clone(),
                count: l.count,
                inputs: l.inputs,
            };
            if recipes.insert(l.output.clone(), r).is_some() {
                return Err(CraftError::Duplicate(l.output));
            }
        }
        let mut base = BTreeSet::new();
        for r in recipes.values() {
            for (_, item) in &r.inputs {
                if !recipes.contains_key(item) {
                    base.insert(item.clone());
                }
            }
        }
        let mut book = RecipeBook {
            recipes,
            base,
            depth: BTreeMap::new(),
        };
        let names: Vec<String> = book.recipes.keys().cloned().collect();
        let mut visiting = BTreeSet::new();
        for n in names {
            book.compute_depth(&n, &mut visiting)?;
        }
        Ok(book)
    }

    fn compute_depth(&mut self, item: &str, visiting: &mut BTreeSet<String>) -> Result<u32, CraftError> {
        if let Some(&d) = self.depth.get(item) {
            return Ok(d);
        }
        let Some(r) = self.recipes.get(item).cloned() else {
            return Ok(0);
        };
        if !visiting.insert(item.to_string()) {
            return Err(CraftError::Cycle(item.to_string()));
        }
        let mut d = 0;
        for (_, input) in &r.inputs {
            d = d.max(self.compute_depth(input, visiting)?);
        }
        visiting.remove(item);
        self.depth.insert(item.to_string(), d + 1);
        Ok(d + 1)
    }

    pub fn builtin() -> &'static RecipeBook {
        static BOOK: OnceLock<RecipeBook> = OnceLock::new();
        BOOK.get_or_init(|| RecipeBook::from_jsonl(RECIPES).expect("shipped recipes are valid"))
    }

    pub fn recipe(&self, item: &str) -> Option<&Recipe> {
        self.recipes.get(item)
    }

    pub fn is_base(&self, item: &str) -> bool {
        self.base.contains(item)
    }

    /// Crafting depth: 0 for base items, else 1 + the deepest input.
    pub fn depth(&self, item: &str) -> u32 {
        self.depth.get(item).copied().unwrap_or(0)
    }

    pub fn items_at_depth(&self, d: u32) -> Vec<&str> {
        self.depth
            .iter()
            .filter(|(_, &v)| v == d)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    /// Every recipe needed to build `target` from base items.
    pub fn tree(&self, target: &str) -> Vec<&Recipe> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![target.to_string()];
        while let Some(item) = stack.pop() {
            if !seen.insert(item.clone()) {
                continue;
            }
            if let Some(r) = self.recipes.get(&item) {
                out.push(r);
                for (_, i) in &r.inputs {
                    stack.push(i.clone());
                }
            }
        }
        out.sort_by(|a, b| a.output.cmp(&b.output));
        out
    }

    pub fn recipes(&self) -> impl Iterator<Item = &Recipe> {
        self.recipes.values()
    }
}

/// Inventory multiset.
pub type Inventory = BTreeMap<String, u32>;

#[derive(Clone, PartialEq, Eq)]
pub struct CraftWorld {
    pub book: Arc<RecipeBook>,
    /// Crafting commands listed in the instruction, in display order.
    pub commands: Vec<Recipe>,
    pub target: String,
    pub inventory: Inventory,
}

impl fmt::Debug for CraftWorld {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CraftWorld")
            .field("target", &self.target)
            .field("commands", &self.commands.len())
            .field("inventory", &self.inventory)
            .finish()
    }
}

/// A parsed `craft` command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CraftCommand {
    pub count: Option<u32>,
    pub output: String,
    pub inputs: Vec<(u32, String)>,
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_lowercase()
}

/// Splits an optional leading count from an item phrase: `"9 gold nugget"`.
fn count_and_item(s: &str) -> (Option<u32>, String) {
    let s = squash(s);
    match s.split_once(' ') {
        Some((n, rest)) if n.parse::<u32>().is_ok() => (n.parse().ok(), rest.to_string()),
        _ => (None, s),
    }
}

/// Parses the argument of a `get` action: an optional count and the item.
pub fn parse_get(rest: &str) -> (Option<u32>, String) {
    count_and_item(rest)
}

pub fn parse_craft(action: &str) -> Option<CraftCommand> {
    let a = squash(action);
    let body = a.strip_prefix("craft ")?;
    let (lhs, rhs) = body.split_once(" using ")?;
    let (count, output) = count_and_item(lhs);
    let mut inputs = Vec::new();
    for part in rhs.split(',') {
        let (n, item) = count_and_item(part);
        if item.is_empty() {
            return None;
        }
        inputs.push((n.unwrap_or(1), item));
    }
    Some(CraftCommand { count, output, inputs })
}

/// Reads the recipe list and target back out of an instruction rendering.
pub fn parse_instruction(text: &str) -> Option<(Vec<Recipe>, String)> {
    let mut recipes = Vec::new();
    let mut target = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("Goal: craft ") {
            target = Some(squash(rest.trim_end_matches('.')));
        } else if let Some(cmd) = parse_craft(line) {
            recipes.push(Recipe {
                output: cmd.output,
                count: cmd.count.unwrap_or(1),
                inputs: cmd.inputs,
            });
        }
    }
    Some((recipes, target?))
}

/// Parses `Inventory: [a] (2) [b] (1)` back into a multiset.
pub fn parse_inventory(observation: &str) -> Option<Inventory> {
    let body = observation.strip_prefix("Inventory:")?.trim();
    let mut inv = Inventory::new();
    if body == "You are not carrying anything." {
        return Some(inv);
    }
    let mut rest = body;
    while let Some(open) = rest.find('[') {
        let close = rest[open..].find(']')? + open;
        let item = rest[open + 1..close].to_string();
        let after = &rest[close + 1..];
        let lp = after.find('(')?;
        let rp = after.find(')')?;
        let n: u32 = after[lp + 1..rp].trim().parse().ok()?;
        inv.insert(item, n);
        rest = &after[rp + 1..];
    }
    Some(inv)
}

fn count_item(text: &str) -> Option<(u32, String)> {
    let (n, item) = text.split_once(' ')?;
    Some((n.parse().ok()?, item.to_string()))
}

/// Rebuilds the inventory an agent holds from its visible history: `Got`
/// and `Crafted` observations, with `Inventory:` listings as resync points.
pub fn inventory_from_history(history: &[Step]) -> Inventory {
    let mut inventory = Inventory::new();
    for s in history {
        let obs = s.observation.as_str();
        if let Some(inv) = parse_inventory(obs) {
            inventory = inv;
        } else if let Some((n, item)) = obs.strip_prefix("Got ").and_then(count_item) {
            *inventory.entry(item).or_insert(0) += n;
        } else if let Some((n, item)) = obs.strip_prefix("Crafted ").and_then(count_item) {
            if let Some(cmd) = parse_craft(&s.action) {
                for (k, input) in &cmd.inputs {
                    if let Some(slot) = inventory.get_mut(input) {
                        *slot = slot.saturating_sub(*k);
                        if *slot == 0 {
                            inventory.remove(input);
                        }
                    }
                }
            }
            *inventory.entry(item).or_insert(0) += n;
        }
    }
    inventory
}

pub fn render_inventory(inv: &Inventory) -> String {
    let items: Vec<String> = inv
        .iter()
        .filter(|(_, &n)| n > 0)
        .map(|(k, n)| format!("[{k}] ({n})"))
        .collect();
    if items.is_empty() {
        "Inventory: You are not carrying anything.".to_string()
    } else {
        format!("Inventory: {}", items.join(" "))
    }
}

impl CraftWorld {
    /// Picks a depth in `min_depth..=max_depth`, a target at that depth, and
    /// lists its recipe tree plus a few distractor recipes in shuffled order.
    pub fn generate(seed: u64, book: Arc<RecipeBook>, min_depth: u32, max_depth: u32) -> Result<Self, CraftError> {
        if min_depth == 0 || min_depth > max_depth || max_depth > MAX_DEPTH {
            return Err(CraftError::Depth(min_depth, max_depth));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = rng.gen_range(min_depth..=max_depth);
        let candidates = book.items_at_depth(depth);
        if candidates.is_empty() {
            return Err(CraftError::NoTarget(depth));
        }
        let target = candidates[rng.gen_range(0..candidates.len())].to_string();
        let mut commands: Vec<Recipe> = book.tree(&target).into_iter().cloned().collect();
        let in_tree: BTreeSet<String> = commands.iter().map(|r| r.output.clone()).collect();
        let mut others: Vec<&Recipe> = book.recipes().filter(|r| !in_tree.contains(&r.output)).collect();
        others.shuffle(&mut rng);
        let n_distract = rng.gen_range(2..=4);
        commands.extend(others.into_iter().take(n_distract).cloned());
        commands.shuffle(&mut rng);
        Ok(CraftWorld {
            book,
            commands,
            target,
            inventory: Inventory::new(),
        })
    }

    pub fn instruction_text(&self) -> String {
        let mut s = String::from("Crafting commands:\n");
        for r in &self.commands {
            s.push_str(&r.command());
            s.push('\n');
        }
        s.push_str(&format!("Goal: craft {}.", self.target));
        s
    }

    /// Base items mentioned by the listed commands.
    pub fn listed_base_items(&self) -> BTreeSet<String> {
        self.commands
            .iter()
            .flat_map(|r| r.inputs.iter().map(|(_, i)| i.clone()))
            .filter(|i| self.book.is_base(i))
            .collect()
    }

    fn covers(&self, r: &Recipe) -> bool {
        r.input_key()
            .iter()
            .all(|(item, n)| self.inventory.get(item).copied().unwrap_or(0) >= *n)
    }

    fn find_listed(&self, cmd: &CraftCommand) -> Option<&Recipe> {
        let mut key: BTreeMap<String, u32> = BTreeMap::new();
        for (n, item) in &cmd.inputs {
            *key.entry(item.clone()).or_insert(0) += n;
        }
        let key: Vec<(String, u32)> = key.into_iter().collect();
        self.commands
            .iter()
            .find(|r| r.output == cmd.output && cmd.count.is_none_or(|c| c == r.count) && r.input_key() == key)
    }

    fn craft(&mut self, cmd: &CraftCommand) -> Transition {
        let Some(recipe) = self.find_listed(cmd).cloned() else {
            return Transition {
                observation: format!("Could not find a valid recipe for {}.", cmd.output),
                step_reward: 0.0,
                outcome: None,
            };
        };
        if !self.covers(&recipe) {
            return Transition {
                observation: format!("Could not find enough items to craft {}.", recipe.output),
                step_reward: 0.0,
                outcome: None,
            };
        }
        for (item, n) in recipe.input_key() {
            let slot = self.inventory.get_mut(&item).expect("covered input present");
            *slot -= n;
            if *slot == 0 {
                self.inventory.remove(&item);
            }
        }
        *self.inventory.entry(recipe.output.clone()).or_insert(0) += recipe.count;
        let done = recipe.output == self.target;
        Transition {
            observation: format!("Crafted {} {}", recipe.count, recipe.output),
            step_reward: if done { 1.0 } else { 0.0 },
            outcome: done.then_some(Outcome::Success),
        }
    }
}

impl World for CraftWorld {
    fn apply(&mut self, action: &str) -> Transition {
        let a = squash(action);
        if a == "inventory" {
            return Transition {
                observation: render_inventory(&self.inventory),
                step_reward: 0.0,
                outcome: None,
            };
        }
        if let Some(rest) = a.strip_prefix("get ") {
            let (n, item) = count_and_item(rest);
            let n = n.unwrap_or(1).max(1);
            if self.book.is_base(&item) {
                *self.inventory.entry(item.clone()).or_insert(0) += n;
                return Transition {
                    observation: format!("Got {n} {item}"),
                    step_reward: 0.0,
                    outcome: None,
                };
            }
            return Transition {
                observation: format!("Could not find {item}"),
                step_reward: 0.0,
                outcome: None,
            };
        }
        if let Some(cmd) = parse_craft(&a) {
            return self.craft(&cmd);
        }
        Transition {
            observation: "Invalid action.".to_string(),
            step_reward: 0.0,
            outcome: None,
        }
    }

    fn available_actions(&self) -> Vec<String> {
        let mut v = vec!["inventory".to_string()];
        v.extend(self.listed_base_items().into_iter().map(|i| format!("get {i}")));
        v.extend(self.commands.iter().filter(|r| self.covers(r)).map(Recipe::command));
        v.sort();
        v.dedup();
        v
    }
}

/// Plans the remaining actions to craft `target` given `inventory`, using the
/// listed recipes; items without a listed recipe are fetched with `get`.
/// Gets come first (by item name), then crafts with inputs before outputs.
/// `None` when the target has no listed recipe.
pub fn plan(commands: &[Recipe], target: &str, inventory: &Inventory) -> Option<Vec<String>> {
    let by_output: HashMap<&str, &Recipe> = commands.iter().map(|r| (r.output.as_str(), r)).collect();
    // topological order: inputs before outputs
    let mut order: Vec<&str> = Vec::new();
    let mut seen = BTreeSet::new();
    fn topo<'a>(
        item: &'a str,
        by_output: &HashMap<&str, &'a Recipe>,
        seen: &mut BTreeSet<&'a str>,
        order: &mut Vec<&'a str>,
    ) {
        if !seen.insert(item) {
            return;
        }
        if let Some(r) = by_output.get(item) {
            for (_, i) in &r.inputs {
                topo(i.as_str(), by_output, seen, order);
            }
        }
        order.push(item);
    }
    let target_recipe = by_output.get(target)?;
    topo(target_recipe.output.as_str(), &by_output, &mut seen, &mut order);

    let mut demand: BTreeMap<&str, u32> = BTreeMap::new();
    demand.insert(target_recipe.output.as_str(), 1);
    let mut crafts: Vec<(&Recipe, u32)> = Vec::new();
    let mut gets: BTreeMap<&str, u32> = BTreeMap::new();
    for &item in order.iter().rev() {
        let want = demand.get(item).copied().unwrap_or(0);
        let have = if item == target_recipe.output {
            0
        } else {
            inventory.get(item).copied().unwrap_or(0)
        };
        if want <= have {
            continue;
        }
        let need = want - have;
        match by_output.get(item) {
            Some(r) => {
                let times = need.div_ceil(r.count);
                for (n, i) in &r.inputs {
                    *demand.entry(i.as_str()).or_insert(0) += n * times;
                }
                crafts.push((r, times));
            }
            None => {
                gets.insert(item, need);
            }
        }
    }
    let mut actions = Vec::new();
    for (item, n) in gets {
        for _ in 0..n {
            actions.push(format!("get {item}"));
        }
    }
    // crafts were pushed outputs-first; execute inputs-first
    for (r, times) in crafts.into_iter().rev() {
        for _ in 0..times {
            actions.push(r.command());
        }
    }
    Some(actions)
}
