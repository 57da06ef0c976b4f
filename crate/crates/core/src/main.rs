use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evolgym::cli::{self, CliError, Context, RunConfigFile};

#[derive(Parser)]
#[command(
    name = "evolgym",
    version,
    about = "Text environments, rollouts and self-evolution training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (strict JSON). Standard three-environment settings when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the rollout seed, which also seeds instruction generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that relative artifact paths resolve against.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Serve every configured environment over HTTP until interrupted.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Port for one environment, as ENV=PORT. Repeatable.
        #[arg(long = "port", value_parser = parse_port)]
        ports: Vec<(String, u16)>,
    },
    /// Generate the instruction files.
    GenInstructions(Common),
    /// Collect expert trajectories on the bc split.
    Collect(Common),
    /// Behavioural cloning on the expert trajectories.
    TrainBc(Common),
    /// Run the evolution loop from the base policy.
    Evolve(Common),
    /// Evaluate a policy snapshot on the eval split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Snapshot to evaluate instead of the run's latest.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Write the reward-vs-iteration CSV and score table of a finished run.
    Report(Common),
}

fn parse_port(s: &str) -> Result<(String, u16), String> {
    let (env, port) = s.split_once('=').ok_or("expected ENV=PORT")?;
    let port = port.parse().map_err(|e| format!("bad port `{port}`: {e}"))?;
    Ok((env.to_string(), port))
}

fn context(c: &Common) -> Result<Context, CliError> {
    let config = match &c.config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::standard(),
    };
    Ok(Context::new(config, c.out.clone(), c.seed))
}

fn run(command: Command) -> Result<Option<String>, CliError> {
    Ok(Some(match command {
        Command::Serve { common, ports } => {
            let ports: BTreeMap<String, u16> = ports.into_iter().collect();
            cli::cmd_serve(&context(&common)?, &ports)?;
            return Ok(None);
        }
        Command::GenInstructions(c) => cli::cmd_gen_instructions(&context(&c)?)?,
        Command::Collect(c) => cli::cmd_collect(&context(&c)?)?,
        Command::TrainBc(c) => cli::cmd_train_bc(&context(&c)?)?,
        Command::Evolve(c) => cli::cmd_evolve(&context(&c)?)?,
        Command::Eval { common, policy } => cli::cmd_eval(&context(&common)?, policy.as_deref())?,
        Command::Report(c) => cli::cmd_report(&context(&c)?)?,
    }))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Some(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
