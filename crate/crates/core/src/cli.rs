//! Run configuration and the command implementations behind the `evolgym`
//! binary. Every command reads one strict JSON config and writes its
//! artifacts under an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::oracle::OraclePolicy;
use crate::controller::{
    collect_expert, evaluate, render_table, EnvClient, EvalReport, HttpEnvClient, LocalEnvClient, MultiEnvClient,
    RolloutConfig, RolloutError,
};
use crate::dataset::{DatasetError, InstructionSet, TrajectoryDataset};
use crate::envs::{self, Difficulty};
use crate::evol::{agent_evol, desk, train_base, BaseRecord, RunInputs, RunManifest, TrainConfig, TrainError};
use crate::policy::remote::{RemoteConfig, RemotePolicy};
use crate::policy::{LogLinearPolicy, Policy};
use crate::protocol::server::BIND_ENV;
use crate::protocol::SessionManager;
use crate::trajectory::Split;

/// A failed command. User errors exit with 1, internal errors with 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Dataset(_) | TrainError::Config(_) => CliError::User(e.to_string()),
            TrainError::Replay(..) | TrainError::Rollout(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<RolloutError> for CliError {
    fn from(e: RolloutError) -> Self {
        match e {
            RolloutError::Config(_) => CliError::User(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn default_total() -> usize {
    240
}
fn default_bc() -> usize {
    55
}
fn default_eval() -> usize {
    25
}

/// One environment: its generation knobs, split sizes, and where it is served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvEntry {
    pub name: String,
    /// Defaults to the environment's standard difficulty.
    #[serde(default)]
    pub difficulty: Option<Difficulty>,
    /// Port used by `serve`; 0 or absent picks a free one.
    #[serde(default)]
    pub port: Option<u16>,
    /// Talk to an already running server instead of an in-process one.
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default = "default_total")]
    pub total: usize,
    /// Instructions solved by the expert to form `D_s`.
    #[serde(default = "default_bc")]
    pub bc: usize,
    #[serde(default = "default_eval")]
    pub eval: usize,
}

impl EnvEntry {
    pub fn difficulty(&self) -> CliResult<Difficulty> {
        let d = match self.difficulty {
            Some(d) => d,
            None => Difficulty::default_for(&self.name)
                .ok_or_else(|| CliError::User(format!("unknown environment `{}`", self.name)))?,
        };
        if d.env_name() != self.name {
            return Err(CliError::User(format!(
                "environment `{}` has a {} difficulty",
                self.name,
                d.env_name()
            )));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    /// The trainable policy; expert data comes from the built-in solvers.
    #[default]
    LogLinear,
    /// A chat-completion endpoint, used as the expert when collecting.
    Remote { remote: RemoteConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory holding one `{env}.jsonl` instruction file per environment.
    pub instructions: PathBuf,
    pub expert: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            instructions: "instructions".into(),
            expert: "d_s.jsonl".into(),
            run_dir: "run".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub environments: Vec<EnvEntry>,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::User(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Three environments at standard settings.
    pub fn standard() -> Self {
        Self {
            environments: envs::ENV_NAMES
                .iter()
                .map(|n| EnvEntry {
                    name: n.to_string(),
                    difficulty: None,
                    port: None,
                    url: None,
                    total: default_total(),
                    bc: default_bc(),
                    eval: default_eval(),
                })
                .collect(),
            policy: PolicyConfig::LogLinear,
            rollout: RolloutConfig::default(),
            training: TrainConfig::default(),
            paths: Paths::default(),
        }
    }

    fn validate(&self) -> CliResult<()> {
        if self.environments.is_empty() {
            return Err(CliError::User("config lists no environments".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for e in &self.environments {
            e.difficulty()?;
            if !names.insert(&e.name) {
                return Err(CliError::User(format!("environment `{}` listed twice", e.name)));
            }
            if e.bc + e.eval > e.total {
                return Err(CliError::User(format!(
                    "{}: {} expert plus {} eval instructions exceed the total of {}",
                    e.name, e.bc, e.eval, e.total
                )));
            }
        }
        self.training.validate()?;
        Ok(())
    }

    pub fn difficulties(&self) -> Vec<Difficulty> {
        self.environments
            .iter()
            .map(|e| e.difficulty().expect("validated"))
            .collect()
    }
}

/// A loaded config bound to an output directory and seed.
pub struct Context {
    pub config: RunConfigFile,
    pub out: PathBuf,
}

impl Context {
    /// `seed` overrides the config's rollout seed, which also seeds instruction
    /// generation.
    pub fn new(mut config: RunConfigFile, out: PathBuf, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            config.rollout.seed = s;
        }
        Self { config, out }
    }

    fn path(&self, p: &Path) -> PathBuf {
        self.out.join(p)
    }

    fn instructions_dir(&self) -> PathBuf {
        self.path(&self.config.paths.instructions)
    }

    fn run_dir(&self) -> PathBuf {
        self.path(&self.config.paths.run_dir)
    }

    fn expert_path(&self) -> PathBuf {
        self.path(&self.config.paths.expert)
    }

    fn load_instructions(&self) -> CliResult<InstructionSet> {
        let dir = self.instructions_dir();
        let mut all = InstructionSet::new(Vec::new())?;
        for e in &self.config.environments {
            let p = dir.join(format!("{}.jsonl", e.name));
            if !p.exists() {
                return Err(CliError::User(format!(
                    "missing {}; run gen-instructions first",
                    p.display()
                )));
            }
            all.extend(InstructionSet::read_jsonl(&p)?)?;
        }
        Ok(all)
    }

    /// Routes every environment either to its configured URL or to one
    /// in-process session manager.
    fn client(&self, instructions: &InstructionSet) -> CliResult<MultiEnvClient> {
        let local: Vec<Difficulty> = self
            .config
            .environments
            .iter()
            .filter(|e| e.url.is_none())
            .map(|e| e.difficulty().expect("validated"))
            .collect();
        let local_client: Arc<dyn EnvClient> = Arc::new(LocalEnvClient::new(Arc::new(SessionManager::new(
            envs::registry(&local),
            instructions.clone(),
        ))));
        let mut client = MultiEnvClient::new();
        for e in &self.config.environments {
            let c: Arc<dyn EnvClient> = match &e.url {
                Some(url) => Arc::new(HttpEnvClient::new(url).map_err(|e| CliError::Internal(e.to_string()))?),
                None => Arc::clone(&local_client),
            };
            client = client.route(&e.name, c);
        }
        Ok(client)
    }

    fn require_log_linear(&self) -> CliResult<()> {
        match self.config.policy {
            PolicyConfig::LogLinear => Ok(()),
            PolicyConfig::Remote { .. } => Err(CliError::User(
                "only the log_linear policy can be trained or evaluated from a snapshot".into(),
            )),
        }
    }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn read(path: &Path, what: &str, hint: &str) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::User(format!("cannot read {what} {}: {e}; {hint}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}

fn load_policy(path: &Path, hint: &str) -> CliResult<LogLinearPolicy> {
    LogLinearPolicy::from_json(&read(path, "policy snapshot", hint)?)
        .map_err(|e| CliError::User(format!("{}: {e}", path.display())))
}

/// Writes `{instructions}/{env}.jsonl` for every configured environment.
pub fn cmd_gen_instructions(ctx: &Context) -> CliResult<String> {
    let dir = ctx.instructions_dir();
    let mut report = String::new();
    for e in &ctx.config.environments {
        let set = envs::generate_set(e.difficulty()?, e.total, e.bc, e.eval, ctx.config.rollout.seed)
            .map_err(|err| CliError::User(err.to_string()))?;
        let set = InstructionSet::new(set)?;
        let counts = set.counts();
        let n = |s: Split| counts.get(&(e.name.clone(), s)).copied().unwrap_or(0);
        report.push_str(&format!(
            "{}: {} instructions ({} bc, {} evolve, {} eval)\n",
            e.name,
            set.len(),
            n(Split::Bc),
            n(Split::Evolve),
            n(Split::Eval)
        ));
        write(&dir.join(format!("{}.jsonl", e.name)), &set.to_jsonl())?;
    }
    Ok(report)
}

/// Runs the expert over the bc split and keeps its successful trajectories.
pub fn cmd_collect(ctx: &Context) -> CliResult<String> {
    let instructions = ctx.load_instructions()?;
    let client = ctx.client(&instructions)?;
    let bc = instructions.split(Split::Bc);
    let (expert, rollout): (Box<dyn Policy>, RolloutConfig) = match &ctx.config.policy {
        PolicyConfig::LogLinear => (
            Box::new(
                OraclePolicy::new(Arc::new(instructions.clone()), &ctx.config.difficulties())
                    .map_err(|e| CliError::Internal(e.to_string()))?,
            ),
            ctx.config.rollout.greedy(),
        ),
        PolicyConfig::Remote { remote } => (
            Box::new(RemotePolicy::new(remote.clone()).map_err(|e| CliError::User(e.to_string()))?),
            ctx.config.rollout.clone(),
        ),
    };
    let (collected, summary) = collect_expert(expert.as_ref(), &client, &bc, &rollout)?;
    collected.dataset.write_jsonl(&ctx.expert_path())?;
    #[derive(Serialize)]
    struct CollectManifest<'a> {
        summary: &'a crate::controller::CollectionSummary,
        failures: &'a [crate::controller::RolloutFailure],
    }
    write(
        &ctx.run_dir().join("collect.json"),
        &to_json(&CollectManifest {
            summary: &summary,
            failures: &collected.failures,
        }),
    )?;
    Ok(summary.render())
}

fn load_expert(ctx: &Context, instructions: &InstructionSet) -> CliResult<TrajectoryDataset> {
    let p = ctx.expert_path();
    if !p.exists() {
        return Err(CliError::User(format!("missing {}; run collect first", p.display())));
    }
    let d = TrajectoryDataset::read_jsonl(&p, "D_s")?;
    d.validate_against(instructions)?;
    Ok(d)
}

/// Behavioural cloning on `D_s`, then evaluation of the base policy.
pub fn cmd_train_bc(ctx: &Context) -> CliResult<String> {
    ctx.require_log_linear()?;
    let instructions = ctx.load_instructions()?;
    let client = ctx.client(&instructions)?;
    let d_s = load_expert(ctx, &instructions)?;
    let evolve = instructions.evolve_pool();
    let eval = instructions.split(Split::Eval);
    let inputs = RunInputs {
        client: &client,
        d_s: &d_s,
        evolve: &evolve,
        eval: &eval,
        rollout: &ctx.config.rollout,
    };
    let start = desk::start_policy(&ctx.config.difficulties())?;
    let (base, record) = train_base(&start, &inputs, &ctx.config.training)?;
    let dir = ctx.run_dir();
    write(&dir.join("base.json"), &base.to_json())?;
    write(&dir.join("base_record.json"), &to_json(&record))?;
    Ok(render_table(&[("BC_base".into(), record.eval)]))
}

/// The evolution loop from the saved base policy.
pub fn cmd_evolve(ctx: &Context) -> CliResult<String> {
    ctx.require_log_linear()?;
    let dir = ctx.run_dir();
    let base = load_policy(&dir.join("base.json"), "run train-bc first")?;
    let record: BaseRecord = serde_json::from_str(&read(
        &dir.join("base_record.json"),
        "base record",
        "run train-bc first",
    )?)
    .map_err(|e| CliError::User(format!("base_record.json: {e}")))?;
    let instructions = ctx.load_instructions()?;
    let client = ctx.client(&instructions)?;
    let d_s = load_expert(ctx, &instructions)?;
    let evolve = instructions.evolve_pool();
    let eval = instructions.split(Split::Eval);
    let inputs = RunInputs {
        client: &client,
        d_s: &d_s,
        evolve: &evolve,
        eval: &eval,
        rollout: &ctx.config.rollout,
    };
    let out = agent_evol(&base, record, &inputs, &ctx.config.training)?;
    for (i, it) in out.iterations.iter().enumerate() {
        let m = i + 1;
        write(&dir.join(format!("iter_{m}.json")), &it.policy.to_json())?;
        it.explored.write_jsonl(&dir.join(format!("explored_{m}.jsonl")))?;
    }
    write(&dir.join("final.json"), &out.policy.to_json())?;
    write(&dir.join("manifest.json"), &to_json(&out.manifest))?;
    Ok(render_table(&table_rows(&out.manifest)))
}

/// Greedy evaluation of a snapshot (by default the evolved policy, else the
/// base policy) on the eval split.
pub fn cmd_eval(ctx: &Context, snapshot: Option<&Path>) -> CliResult<String> {
    ctx.require_log_linear()?;
    let dir = ctx.run_dir();
    let path = match snapshot {
        Some(p) => p.to_path_buf(),
        None if dir.join("final.json").exists() => dir.join("final.json"),
        None => dir.join("base.json"),
    };
    let policy = load_policy(&path, "run train-bc or evolve first")?;
    let instructions = ctx.load_instructions()?;
    let client = ctx.client(&instructions)?;
    let eval = instructions.split(Split::Eval);
    let (report, ts) = evaluate(&policy, &client, &eval, &ctx.config.rollout)?;
    TrajectoryDataset::new("eval", ts).write_jsonl(&dir.join("eval_trajectories.jsonl"))?;
    write(&dir.join("eval.json"), &to_json(&report))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(render_table(&[(label, report)]))
}

fn table_rows(m: &RunManifest) -> Vec<(String, EvalReport)> {
    std::iter::once(("BC_base".to_string(), m.base.eval.clone()))
        .chain(
            m.iterations
                .iter()
                .map(|i| (format!("iter {}", i.iteration), i.eval.clone())),
        )
        .collect()
}

/// Reward-vs-iteration CSV and a per-environment score table.
pub fn cmd_report(ctx: &Context) -> CliResult<String> {
    let dir = ctx.run_dir();
    let m: RunManifest = serde_json::from_str(&read(&dir.join("manifest.json"), "manifest", "run evolve first")?)
        .map_err(|e| CliError::User(format!("manifest.json: {e}")))?;
    let table = render_table(&table_rows(&m));
    write(&dir.join("report.csv"), &m.to_csv())?;
    write(&dir.join("report.txt"), &table)?;
    Ok(table)
}

/// Binds every configured environment, prints one `READY {env} {url}` line
/// each, and serves until interrupted. Nothing is served unless every port
/// binds.
pub fn cmd_serve(ctx: &Context, ports: &BTreeMap<String, u16>) -> CliResult<()> {
    let instructions = if ctx.instructions_dir().exists() {
        ctx.load_instructions()?
    } else {
        InstructionSet::new(Vec::new())?
    };
    for name in ports.keys() {
        if !ctx.config.environments.iter().any(|e| &e.name == name) {
            return Err(CliError::User(format!(
                "--port names unconfigured environment `{name}`"
            )));
        }
    }
    let host = std::env::var(BIND_ENV).unwrap_or_else(|_| "127.0.0.1".into());
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    rt.block_on(async {
        let mut bound = Vec::new();
        for e in &ctx.config.environments {
            let port = ports.get(&e.name).copied().or(e.port).unwrap_or(0);
            let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                .await
                .map_err(|err| CliError::User(format!("cannot bind {} on {host}:{port}: {err}", e.name)))?;
            let mgr = Arc::new(SessionManager::new(
                envs::registry(&[e.difficulty()?]),
                instructions.clone(),
            ));
            bound.push((e.name.clone(), listener, mgr));
        }
        let (tx, _) = tokio::sync::broadcast::channel::<()>(1);
        let mut tasks = Vec::new();
        let mut stdout = std::io::stdout().lock();
        for (name, listener, mgr) in bound {
            let addr = listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?;
            writeln!(stdout, "READY {name} http://{addr}").map_err(|e| CliError::Internal(e.to_string()))?;
            let mut rx = tx.subscribe();
            tasks.push(tokio::spawn(crate::protocol::server::serve(
                listener,
                mgr,
                async move {
                    let _ = rx.recv().await;
                },
            )));
        }
        stdout.flush().map_err(|e| CliError::Internal(e.to_string()))?;
        drop(stdout);
        tokio::signal::ctrl_c()
            .await
            .map_err(|e| CliError::Internal(e.to_string()))?;
        let _ = tx.send(());
        for t in tasks {
            match t.await {
                Ok(Ok(())) => {}
                Ok(Err(e)) => return Err(CliError::Internal(e.to_string())),
                Err(e) => return Err(CliError::Internal(e.to_string())),
            }
        }
        Ok(())
    })
}
