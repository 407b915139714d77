use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use acql::config::RunConfig;
use acql::harness::{self, HarnessError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acql", version, about = "Automaton-constrained Q-learning on gridworld tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Either a config file or a built-in template.
#[derive(Args)]
struct TaskArgs {
    /// Run config (sectioned key = value).
    config: Option<PathBuf>,
    /// Built-in task template 1-5, used instead of a config file.
    #[arg(long, conflicts_with = "config")]
    template: Option<u8>,
    /// Grid size for --template.
    #[arg(long, requires = "template")]
    size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the task automaton in HOA format.
    Translate(TaskArgs),
    /// Print the per-state safety, liveness and subgoal tables.
    Analyze {
        #[command(flatten)]
        task: TaskArgs,
        /// JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
    /// Train and write metrics, checkpoint and summary to the output directory.
    Train(TaskArgs),
    /// Greedy evaluation of a checkpoint; one CSV row per seed.
    Eval {
        #[command(flatten)]
        task: TaskArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Robustness and automaton run of a recorded trajectory.
    Monitor {
        #[command(flatten)]
        task: TaskArgs,
        /// CSV with header t,x,y,q,action,reward,cost,trapped.
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Exact safety and reward value tables (deterministic dynamics only).
    Oracle(TaskArgs),
    /// ASCII rendering of the layout with a safe reference path.
    Demo(TaskArgs),
}

fn load(args: &TaskArgs) -> Result<RunConfig, HarnessError> {
    let cfg = match (&args.config, args.template) {
        (Some(path), _) => {
            RunConfig::load(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(t)) => {
            let mut text = format!("[task]\ntemplate = {t}\n");
            if let Some(n) = args.size {
                text.push_str(&format!("[env]\nsize = {n}\n"));
            }
            let mut cfg = RunConfig::parse(&text)?;
            cfg.apply_env();
            cfg
        }
        (None, None) => return Err(HarnessError::Config("give a config file or --template".into())),
    };
    cfg.train.validate(cfg.task.rho_max)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Translate(t) => write!(out, "{}", harness::translate(&load(&t)?)?)?,
        Command::Analyze { task, json } => {
            let (table, value) = harness::analyze(&load(&task)?)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("json value"))?;
            } else {
                write!(out, "{table}")?;
            }
        }
        Command::Train(t) => {
            let cfg = load(&t)?;
            let a = harness::train(&cfg)?;
            writeln!(out, "metrics: {}", a.metrics.display())?;
            writeln!(out, "checkpoint: {}", a.checkpoint.display())?;
            writeln!(
                out,
                "greedy eval (seed {}): success {} mean reward {} violations {}",
                a.summary.seed, a.summary.success_rate, a.summary.mean_reward, a.summary.violations
            )?;
        }
        Command::Eval { task, checkpoint } => {
            harness::eval(&load(&task)?, &checkpoint, &mut out)?;
        }
        Command::Monitor { task, trajectory, json } => {
            let cfg = load(&task)?;
            let file = File::open(&trajectory).map_err(|e| HarnessError::Runtime(format!("{}: {e}", trajectory.display())))?;
            let report = harness::monitor(&cfg, BufReader::new(file))?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"))?;
            } else {
                write!(out, "{report}")?;
            }
        }
        Command::Oracle(t) => {
            let s = harness::oracle(&load(&t)?, &mut out)?;
            eprintln!(
                "{} states, {} safe pairs, {} states without a safe action; written to {}",
                s.states,
                s.safe_pairs,
                s.excluded_states,
                s.path.display()
            );
        }
        Command::Demo(t) => write!(out, "{}", harness::demo(&load(&t)?)?)?,
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
