//! Scripted HTTP sessions, golden transcripts and the concurrent-session
//! harness.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use evolgym::controller::{EnvClient, HttpEnvClient, LocalEnvClient};
use evolgym::dataset::InstructionSet;
use evolgym::envs::{self, maze, CRAFT, MAZE, WORDLE};
use evolgym::protocol::server::spawn;
use evolgym::protocol::SessionManager;

pub fn manager() -> Arc<SessionManager> {
    Arc::new(SessionManager::new(
        envs::default_registry(),
        InstructionSet::new(Vec::new()).unwrap(),
    ))
}

/// One request and the server's answer.
fn exchange(http: &reqwest::blocking::Client, base: &str, method: &str, path: &str, body: Value) -> Value {
    let url = format!("{base}{path}");
    let resp = match method {
        "GET" => http.get(url).send().unwrap(),
        _ => http
            .post(url)
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .unwrap(),
    };
    let status = resp.status().as_u16();
    let text = resp.text().unwrap();
    let response: Value = serde_json::from_str(&text).unwrap_or(Value::String(text));
    json!({"method": method, "path": path, "request": body, "status": status, "response": response})
}

pub type Script = Vec<(&'static str, String, Value)>;

fn session_script(env: &str, seed: u64, actions: &[&str]) -> Script {
    let sid = format!("{env}-00000001");
    let mut s: Script = vec![
        ("POST", "/createEnv".into(), json!({"env": env, "seed": seed})),
        ("GET", format!("/observation?session_id={sid}"), Value::Null),
        ("GET", format!("/available_actions?session_id={sid}"), Value::Null),
    ];
    for a in actions {
        s.push(("POST", "/step".into(), json!({"session_id": sid, "action": a})));
    }
    s.push(("GET", format!("/observation?session_id={sid}"), Value::Null));
    s.push(("POST", "/reset".into(), json!({"session_id": sid})));
    s.push(("GET", format!("/available_actions?session_id={sid}"), Value::Null));
    s
}

pub fn maze_script() -> Script {
    let w = maze::MazeWorld::generate(11, 7).unwrap();
    let path = w.layout.shortest_path(w.start, w.goal).unwrap();
    let blocked = maze::Direction::ALL
        .into_iter()
        .find(|d| !w.layout.is_open(w.start, *d))
        .unwrap();
    let mut actions = vec![blocked.action(), "jump"];
    actions.extend(path.iter().map(|d| d.action()));
    actions.push("move up");
    session_script(MAZE, 11, &actions)
}

pub fn wordle_script() -> Script {
    let vocab = envs::wordle::Vocabulary::builtin(100).unwrap();
    let target = envs::wordle::WordleWorld::generate(3, vocab.clone()).target;
    let miss = vocab.words().iter().find(|w| **w != target).unwrap();
    let (miss, hit) = (envs::wordle::spaced(miss), envs::wordle::spaced(&target));
    session_script(WORDLE, 3, &[&miss, "qqqqq", &hit])
}

pub fn craft_script() -> Script {
    session_script(
        CRAFT,
        5,
        &[
            "inventory",
            "dance",
            "craft 4 oak planks using 1 oak log",
            "craft 9 iron nugget using 1 iron ingot",
            "get iron ingot",
            "inventory",
            "craft 9 iron nugget using 1 iron ingot",
        ],
    )
}

pub fn error_script() -> Script {
    vec![
        ("POST", "/createEnv".into(), json!({"env": "chess", "seed": 1})),
        (
            "POST",
            "/createEnv".into(),
            json!({"env": MAZE, "instruction_id": "maze-nope"}),
        ),
        ("POST", "/createEnv".into(), json!({"env": MAZE})),
        ("POST", "/createEnv".into(), Value::String("not json".into())),
        ("GET", "/observation?session_id=nope".into(), Value::Null),
        ("GET", "/available_actions".into(), Value::Null),
        (
            "POST",
            "/step".into(),
            json!({"session_id": "nope", "action": "move up"}),
        ),
        ("POST", "/reset".into(), json!({"session_id": "nope"})),
    ]
}

/// A wordle session that runs out of rounds on invalid words, then is
/// stepped again (409) and reset.
pub fn done_script() -> Script {
    let sid = "wordle-00000001";
    let mut s: Script = vec![("POST", "/createEnv".into(), json!({"env": WORDLE, "seed": 9}))];
    for _ in 0..envs::wordle::MAX_ROUNDS {
        s.push(("POST", "/step".into(), json!({"session_id": sid, "action": "zzzzz"})));
    }
    s.push((
        "POST",
        "/step".into(),
        json!({"session_id": sid, "action": "c r a n e"}),
    ));
    s.push(("POST", "/reset".into(), json!({"session_id": sid})));
    s.push(("POST", "/step".into(), json!({"session_id": sid, "action": "zzzzz"})));
    s
}

/// Every golden transcript by file name.
pub fn goldens() -> Vec<(&'static str, Script)> {
    vec![
        ("maze_session", maze_script()),
        ("wordle_session", wordle_script()),
        ("craft_session", craft_script()),
        ("errors", error_script()),
        ("done_session", done_script()),
    ]
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.json"))
}

/// Runs `script` against a fresh server and returns the transcript and the
/// stored golden text. `EVOLGYM_UPDATE_GOLDENS` rewrites the golden first.
pub fn transcript_and_golden(name: &str, script: Script) -> (String, String) {
    let server = spawn(manager(), "127.0.0.1:0").unwrap();
    let http = reqwest::blocking::Client::new();
    let transcript: Vec<Value> = script
        .into_iter()
        .map(|(m, p, b)| exchange(&http, &server.url(), m, &p, b))
        .collect();
    let actual = serde_json::to_string_pretty(&transcript).unwrap() + "\n";
    let path = golden_path(name);
    if std::env::var_os("EVOLGYM_UPDATE_GOLDENS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    (actual, expected)
}

/// Observations, rewards and done flags of one session.
pub type Trace = Vec<(String, u64, u64, bool)>;

/// Picks a random action sequence for one session by walking it serially,
/// sometimes choosing something invalid.
fn plan_actions(env: &str, seed: u64, rng: &mut ChaCha8Rng) -> Vec<String> {
    let c = LocalEnvClient::new(manager());
    let created = c.create(env, None, Some(seed)).unwrap();
    let vocab = envs::wordle::Vocabulary::builtin(100).unwrap();
    let mut actions = Vec::new();
    let mut avail = c.available_actions(&created.session_id).unwrap();
    for _ in 0..envs::max_rounds(env).unwrap() {
        let a = if rng.gen_bool(0.15) {
            "look around".to_string()
        } else if env == WORDLE {
            envs::wordle::spaced(vocab.words().choose(rng).unwrap())
        } else {
            avail.choose(rng).cloned().unwrap_or_else(|| "inventory".into())
        };
        let r = c.step(&created.session_id, &a).unwrap();
        actions.push(a);
        avail = r.available_actions;
        if r.done {
            break;
        }
    }
    actions
}

fn run_serial(client: &dyn EnvClient, env: &str, seed: u64, actions: &[String]) -> Trace {
    let created = client.create(env, None, Some(seed)).unwrap();
    let mut trace = vec![(created.observation, 0, 0, false)];
    for a in actions {
        let r = client.step(&created.session_id, a).unwrap();
        trace.push((
            r.observation,
            r.step_reward.to_bits(),
            r.trajectory_reward_so_far.to_bits(),
            r.done,
        ));
    }
    trace
}

/// Runs `sessions` sessions over one HTTP server with their steps shuffled
/// into a random global order across 16 threads, and returns the indices of
/// sessions whose results differ from a serial run on a fresh manager.
pub fn concurrent_sessions_diverging(sessions: u64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(&str, u64, Vec<String>)> = (0..sessions)
        .map(|i| {
            let env = envs::ENV_NAMES[(i % 3) as usize];
            let seed = 1000 + i;
            let actions = plan_actions(env, seed, &mut rng);
            (env, seed, actions)
        })
        .collect();
    let expected: Vec<Trace> = jobs
        .iter()
        .map(|(env, seed, actions)| run_serial(&LocalEnvClient::new(manager()), env, *seed, actions))
        .collect();

    let server = spawn(manager(), "127.0.0.1:0").unwrap();
    let client = Arc::new(HttpEnvClient::new(&server.url()).unwrap());
    let ids: Vec<String> = jobs
        .iter()
        .map(|(env, seed, _)| client.create(env, None, Some(*seed)).unwrap().session_id)
        .collect();
    // Every (session, step) pair once, in a random global order split across
    // 16 threads; a per-session cursor keeps each session's own steps ordered.
    let cursors: Arc<Vec<Mutex<(usize, Trace)>>> = Arc::new(jobs.iter().map(|_| Mutex::new((0, Vec::new()))).collect());
    let mut order: Vec<usize> = jobs
        .iter()
        .enumerate()
        .flat_map(|(i, j)| std::iter::repeat_n(i, j.2.len()))
        .collect();
    order.shuffle(&mut rng);
    let chunks: Vec<Vec<usize>> = order.chunks(order.len().div_ceil(16)).map(|c| c.to_vec()).collect();
    let jobs = Arc::new(jobs);
    let ids = Arc::new(ids);
    let handles: Vec<_> = chunks
        .into_iter()
        .map(|chunk| {
            let (client, cursors, jobs, ids) = (
                Arc::clone(&client),
                Arc::clone(&cursors),
                Arc::clone(&jobs),
                Arc::clone(&ids),
            );
            thread::spawn(move || {
                for i in chunk {
                    // Holding the cursor lock while stepping keeps this
                    // session's own steps ordered; other sessions proceed.
                    let mut cur = cursors[i].lock().unwrap();
                    let a = &jobs[i].2[cur.0];
                    let r = client.step(&ids[i], a).unwrap();
                    cur.1.push((
                        r.observation,
                        r.step_reward.to_bits(),
                        r.trajectory_reward_so_far.to_bits(),
                        r.done,
                    ));
                    cur.0 += 1;
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    expected
        .iter()
        .enumerate()
        .filter(|(i, want)| want[1..] != cursors[*i].lock().unwrap().1[..])
        .map(|(i, _)| i)
        .collect()
}
