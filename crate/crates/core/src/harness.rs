//! Subcommand implementations shared by the command-line tool and the tests.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::automata::hoa::emit_hoa;
use crate::automata::{AutomatonError, StateId};
use crate::config::{ConfigError, RunConfig};
use crate::grid::{check_layout, render};
use crate::oracle::{self, FiniteProduct, OracleError};
use crate::product::{episode_success, read_trajectory, Product, ProductError, Task};
use crate::stl::{Point, Robustness};
use crate::trainer::{self, EvalSummary, MetricsRecord, TrainError};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const ORACLE_FILE: &str = "oracle.csv";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("UnsupportedFormula: {0}")]
    UnsupportedFormula(String),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// 2 config, 3 unsupported formula, 4 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::UnsupportedFormula(_) => 3,
            HarnessError::Runtime(_) => 4,
        }
    }
}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Task(ProductError::Automaton(AutomatonError::UnsupportedFormula(m))) => {
                HarnessError::UnsupportedFormula(m)
            }
            ConfigError::Io(e) => HarnessError::Runtime(e.to_string()),
            e => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => HarnessError::Config(m),
            e => HarnessError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<ProductError> for HarnessError {
    fn from(e: ProductError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<OracleError> for HarnessError {
    fn from(e: OracleError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

fn task_name(cfg: &RunConfig) -> String {
    match (cfg.task.template, &cfg.task.formula) {
        (Some(t), _) => format!("task{t}"),
        (None, Some(f)) => f.clone(),
        (None, None) => "custom".into(),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn translate(cfg: &RunConfig) -> Result<String, HarnessError> {
    let task = cfg.task()?;
    Ok(emit_hoa(&task.dba, &task.layout.props))
}

pub fn analyze(cfg: &RunConfig) -> Result<(String, serde_json::Value), HarnessError> {
    let task = cfg.task()?;
    let props = &task.layout.props;
    Ok((task.structure.table(&task.dba, props), task.structure.to_json(&task.dba, props)))
}

pub fn demo(cfg: &RunConfig) -> Result<String, HarnessError> {
    let task = cfg.task()?;
    let path = check_layout(&task.layout).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut out = render(&task.layout, &path);
    out.push_str(&task.structure.table(&task.dba, &task.layout.props));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub summary: EvalSummary,
}

fn write_summary(out: impl Write, task: &str, rows: &[EvalSummary]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "seed", "mean_reward", "success_rate", "violations"])?;
    for r in rows {
        w.write_record([task.to_string(), r.seed.to_string(), r.mean_reward.to_string(), r.success_rate.to_string(), r.violations.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains, then writes the metrics stream, a checkpoint and a greedy-evaluation
/// summary row for the training seed.
pub fn train(cfg: &RunConfig) -> Result<TrainArtifacts, HarnessError> {
    let task = cfg.task()?;
    let dir = cfg.output_dir.clone();
    let mut metrics = create(&dir, METRICS_FILE)?;
    let mut io_err = None;
    let outcome = trainer::train_with(&task, cfg.env.slip, &cfg.train, |m: &MetricsRecord| {
        if io_err.is_none() {
            if let Err(e) = serde_json::to_writer(&mut metrics, m).map_err(std::io::Error::from).and_then(|_| metrics.write_all(b"\n")) {
                io_err = Some(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    metrics.flush()?;
    let mut ck = create(&dir, CHECKPOINT_FILE)?;
    trainer::save_checkpoint(&outcome.critics, &cfg.fingerprint()?, &mut ck)?;
    ck.flush()?;
    let summary = evaluate_critics(cfg, &task, &outcome.critics, cfg.train.seed)?;
    write_summary(create(&dir, SUMMARY_FILE)?, &task_name(cfg), std::slice::from_ref(&summary))?;
    Ok(TrainArtifacts { metrics: dir.join(METRICS_FILE), checkpoint: dir.join(CHECKPOINT_FILE), dir, summary })
}

fn evaluate_critics(cfg: &RunConfig, task: &Task, critics: &trainer::Critics, seed: u64) -> Result<EvalSummary, HarnessError> {
    let mut product = Product::new(task, cfg.env.slip, cfg.eval.length)?;
    product.trap_termination = cfg.train.trap_termination;
    let (s, _) = trainer::evaluate(critics, &product, cfg.eval.episodes, cfg.eval.length, cfg.train.limit, cfg.train.cost_mode, seed)?;
    Ok(s)
}

/// Greedy evaluation of a checkpoint, one row per configured seed. Also written to
/// `eval.csv` in the output directory.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, out: impl Write) -> Result<Vec<EvalSummary>, HarnessError> {
    let task = cfg.task()?;
    let file = File::open(checkpoint).map_err(|e| HarnessError::Runtime(format!("{}: {e}", checkpoint.display())))?;
    let critics = trainer::load_checkpoint(std::io::BufReader::new(file), Some(&cfg.fingerprint()?))?;
    let rows = cfg.eval.seeds.iter().map(|&s| evaluate_critics(cfg, &task, &critics, s)).collect::<Result<Vec<_>, _>>()?;
    write_summary(out, &task_name(cfg), &rows)?;
    write_summary(create(&cfg.output_dir, EVAL_FILE)?, &task_name(cfg), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorStep {
    pub t: usize,
    pub q: StateId,
    /// Robustness of this point against the safety condition of the state reading it.
    pub safety: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorReport {
    pub robustness: f64,
    pub run: Vec<StateId>,
    pub accepting_visits: usize,
    pub trapped: bool,
    pub success: bool,
    pub steps: Vec<MonitorStep>,
}

impl std::fmt::Display for MonitorReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "robustness: {}", self.robustness)?;
        let run: Vec<String> = self.run.iter().map(|q| format!("q{q}")).collect();
        writeln!(f, "run: {}", run.join(" "))?;
        writeln!(f, "accepting visits: {}", self.accepting_visits)?;
        writeln!(f, "trap entered: {}", self.trapped)?;
        writeln!(f, "success: {}", self.success)?;
        writeln!(f, "t,q,safety")?;
        for s in &self.steps {
            writeln!(f, "{},{},{}", s.t, s.q, s.safety)?;
        }
        Ok(())
    }
}

/// Offline check of a recorded trajectory against the configured task.
pub fn monitor(cfg: &RunConfig, trajectory: impl Read) -> Result<MonitorReport, HarnessError> {
    let task = cfg.task()?;
    let rows = read_trajectory(trajectory)?;
    if rows.is_empty() {
        return Err(HarnessError::Runtime("trajectory has no rows".into()));
    }
    let w: Vec<Point> = rows.iter().map(|r| [r.x, r.y]).collect();
    Ok(monitor_signal(&task, &w)?)
}

pub fn monitor_signal(task: &Task, w: &[Point]) -> Result<MonitorReport, ProductError> {
    let props = &task.layout.props;
    let rob = Robustness::with_cap(props, task.rho_max);
    let robustness = rob.signal(&task.formula, w).map_err(AutomatonError::from)?;
    let run = task.dba.run(w, props)?;
    let steps = w
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let q = run.states[t];
            let safety = rob.state(&task.structure.safety[q], *p).expect("safety conditions are propositional");
            MonitorStep { t, q, safety }
        })
        .collect();
    Ok(MonitorReport {
        robustness,
        trapped: run.states.iter().any(|q| task.is_unsafe(*q)),
        success: episode_success(&run.states, task),
        accepting_visits: run.accepting_visits,
        run: run.states,
        steps,
    })
}

#[derive(Debug, Clone)]
pub struct OracleSummary {
    pub states: usize,
    pub safe_pairs: usize,
    pub excluded_states: usize,
    pub path: PathBuf,
}

/// Exact tables for the configured task, written as CSV.
pub fn oracle(cfg: &RunConfig, out: impl Write) -> Result<OracleSummary, HarnessError> {
    let task = cfg.task()?;
    let env = task.layout.env(cfg.env.slip).map_err(|e| HarnessError::Config(e.to_string()))?;
    let fp = FiniteProduct::build(&task, &env)?;
    let safe = oracle::max_safe_set(&fp, cfg.train.limit);
    let qc = oracle::qc_star(&fp)?;
    let qr = oracle::qr_star_safe(&fp, &safe, cfg.train.gamma)?;
    oracle::write_tables(&fp, &env, &safe, &qc, &qr, out)?;
    let path = cfg.output_dir.join(ORACLE_FILE);
    oracle::write_tables(&fp, &env, &safe, &qc, &qr, create(&cfg.output_dir, ORACLE_FILE)?)?;
    Ok(OracleSummary {
        states: fp.len(),
        safe_pairs: safe.iter().flatten().filter(|&&b| b).count(),
        excluded_states: qr.excluded.len(),
        path,
    })
}
