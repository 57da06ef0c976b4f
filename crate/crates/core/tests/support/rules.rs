//! Environment rules restated independently of the implementations.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evolgym::controller::oracle::OraclePolicy;
use evolgym::controller::{evaluate, LocalEnvClient, RolloutConfig};
use evolgym::dataset::InstructionSet;
use evolgym::envs::craft::{self, CraftWorld, RecipeBook};
use evolgym::envs::maze::{Direction, MazeWorld};
use evolgym::envs::wordle::{self, Mark, Vocabulary};
use evolgym::envs::{self, Difficulty};
use evolgym::protocol::{SessionManager, World};
use evolgym::trajectory::Trajectory;

/// Enumerates every labelling of the guess and keeps the one satisfying the
/// count-limited rule: greens where letters match; among the rest, a letter
/// is yellow only while the target still has unmatched copies of it, taken
/// left to right.
pub fn brute_force_feedback(target: &str, guess: &str) -> [Mark; 5] {
    let t: Vec<char> = target.chars().collect();
    let g: Vec<char> = guess.chars().collect();
    let marks = [Mark::B, Mark::Y, Mark::G];
    let mut found = Vec::new();
    for code in 0..3usize.pow(5) {
        let mut m = [Mark::B; 5];
        let mut c = code;
        for slot in &mut m {
            *slot = marks[c % 3];
            c /= 3;
        }
        let valid = (0..5).all(|i| {
            if g[i] == t[i] {
                return m[i] == Mark::G;
            }
            if m[i] == Mark::G {
                return false;
            }
            let unmatched = (0..5).filter(|&j| t[j] == g[i] && g[j] != t[j]).count();
            let earlier_yellows = (0..i).filter(|&j| g[j] == g[i] && m[j] == Mark::Y).count();
            (m[i] == Mark::Y) == (earlier_yellows < unmatched)
        });
        if valid {
            found.push(m);
        }
    }
    assert_eq!(found.len(), 1, "{target}/{guess} has {} labellings", found.len());
    found[0]
}

/// Pairs over the 100-word vocabulary where the environment disagrees with
/// the brute-force oracle, and the number of pairs checked.
pub fn wordle_disagreements() -> (Vec<(String, String)>, usize) {
    let v = Vocabulary::builtin(100).unwrap();
    let mut bad = Vec::new();
    let mut checked = 0;
    for t in v.words() {
        for g in v.words() {
            if wordle::wordle_feedback(t, g) != brute_force_feedback(t, g) {
                bad.push((t.clone(), g.clone()));
            }
            checked += 1;
        }
    }
    (bad, checked)
}

pub fn bfs_distance(w: &MazeWorld) -> usize {
    let n = w.layout.size();
    let mut dist = vec![vec![usize::MAX; n + 1]; n + 1];
    let mut q = VecDeque::from([w.start]);
    dist[w.start.0][w.start.1] = 0;
    while let Some(p) = q.pop_front() {
        for d in Direction::ALL {
            if let Some(r) = w.layout.neighbor(p, d) {
                if w.layout.is_open(p, d) && dist[r.0][r.1] == usize::MAX {
                    dist[r.0][r.1] = dist[p.0][p.1] + 1;
                    q.push_back(r);
                }
            }
        }
    }
    dist[w.goal.0][w.goal.1]
}

/// The BFS solver run through the controller on `n` generated 7×7 mazes:
/// its success rate and the episodes, alongside each maze.
pub fn maze_oracle_run(n: usize) -> (f64, Vec<(MazeWorld, Trajectory)>) {
    let d = Difficulty::Maze { size: 7 };
    let set = envs::generate_set(d, n, 0, n, 7).unwrap();
    let instructions = Arc::new(InstructionSet::new(set.clone()).unwrap());
    let client = LocalEnvClient::new(Arc::new(SessionManager::new(
        envs::registry(&[d]),
        (*instructions).clone(),
    )));
    let oracle = OraclePolicy::new(Arc::clone(&instructions), &[d]).unwrap();
    let (report, ts) = evaluate(&oracle, &client, &set, &RolloutConfig::default()).unwrap();
    assert_eq!(report.per_env["maze"].n, n);
    let worlds = set.iter().map(|ins| MazeWorld::generate(ins.seed, 7).unwrap());
    (report.per_env["maze"].success_rate, worlds.zip(ts).collect())
}

/// Applies `sequences` random action sequences to fresh craft worlds while
/// tracking the inventory independently: `get` adds, a successful craft
/// removes the recipe's inputs and adds its outputs. Returns the first
/// mismatch.
pub fn craft_conservation(sequences: u64, seed: u64) -> Result<(), String> {
    let book = Arc::new(RecipeBook::builtin().clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for seq in 0..sequences {
        let mut w = CraftWorld::generate(seq, Arc::clone(&book), 1, 3).unwrap();
        let mut ledger: BTreeMap<String, u32> = BTreeMap::new();
        let mut pool: Vec<String> = w.available_actions();
        pool.extend(w.commands.iter().map(|r| r.command()));
        pool.extend([
            "get stick".to_string(),
            "get 3 oak log".to_string(),
            "craft".to_string(),
        ]);
        for _ in 0..rng.gen_range(1..30) {
            let a = pool.choose(&mut rng).unwrap().clone();
            let t = w.apply(&a);
            if let Some(rest) = t.observation.strip_prefix("Got ") {
                let (n, item) = craft::parse_get(rest);
                *ledger.entry(item).or_insert(0) += n.ok_or("`Got` without a count")?;
            } else if t.observation.starts_with("Crafted ") {
                let cmd = craft::parse_craft(&a).ok_or(format!("crafted from unparseable `{a}`"))?;
                let recipe = w
                    .commands
                    .iter()
                    .find(|r| r.output == cmd.output)
                    .ok_or("unknown recipe")?;
                for (n, item) in &recipe.inputs {
                    let slot = ledger
                        .get_mut(item)
                        .ok_or(format!("sequence {seq}: crafted without {item}"))?;
                    *slot = slot
                        .checked_sub(*n)
                        .ok_or(format!("sequence {seq}: {item} went negative"))?;
                }
                *ledger.entry(recipe.output.clone()).or_insert(0) += recipe.count;
                ledger.retain(|_, n| *n > 0);
            }
            if w.inventory != ledger {
                return Err(format!("sequence {seq} after `{a}`: {:?} vs {ledger:?}", w.inventory));
            }
            if t.outcome.is_some() {
                if w.inventory.get(&w.target).copied().unwrap_or(0) == 0 {
                    return Err(format!("sequence {seq}: finished without the target"));
                }
                break;
            }
        }
        let shown = craft::parse_inventory(&w.apply("inventory").observation).ok_or("unreadable inventory")?;
        if shown != ledger {
            return Err(format!(
                "sequence {seq}: inventory shows {shown:?}, ledger has {ledger:?}"
            ));
        }
    }
    Ok(())
}
