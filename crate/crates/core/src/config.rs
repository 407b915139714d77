//! Line-oriented run configuration.
//!
//! ```text
//! # comment
//! [task]
//! template = 3
//! [env]
//! size = 10
//! [train]
//! steps = 300000
//! ```
//!
//! Every key is validated; unknown sections and keys are errors.

use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::grid::{check_layout, make_layout, Cell, GridError, TaskLayout};
use crate::product::{ProductError, Task};
use crate::seed;
use crate::stl::{parse_formula, AtomicProp, PropTable, StlError, DEFAULT_RHO_MAX};
use crate::trainer::{CostMode, StepSizes, TrainConfig};

/// Overrides `[output] dir`.
pub const OUTPUT_DIR_ENV: &str = "ACQL_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: [{section}] {key}: {message}")]
    Value { line: usize, section: String, key: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Formula(#[from] StlError),
    #[error(transparent)]
    Layout(#[from] GridError),
    #[error(transparent)]
    Task(#[from] ProductError),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSection {
    pub template: Option<u8>,
    pub formula: Option<String>,
    pub props: Vec<AtomicProp>,
    pub start: Vec<Cell>,
    pub rho_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSection {
    pub size: usize,
    pub slip: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub episodes: usize,
    pub length: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskSection,
    pub env: EnvSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskSection { template: None, formula: None, props: vec![], start: vec![], rho_max: DEFAULT_RHO_MAX },
            env: EnvSection { size: 10, slip: 0.0 },
            train: TrainConfig::default(),
            eval: EvalSection { episodes: 16, length: 1000, seeds: vec![0] },
            output_dir: PathBuf::from("runs"),
        }
    }
}

pub const KEYS: &[(&str, &[&str])] = &[
    ("task", &["template", "formula", "start", "rho_max", "prop.<id>"]),
    ("env", &["size", "slip", "horizon", "trap_termination"]),
    (
        "train",
        &[
            "steps",
            "seed",
            "gamma",
            "gamma_c0",
            "gamma_c_tau",
            "lambda",
            "limit",
            "eps_start",
            "eps_end",
            "eps_fraction",
            "her",
            "k_her",
            "step_sizes",
            "alpha_r",
            "alpha_c",
            "cost_mode",
            "safe_exploration",
            "batch",
            "warmup",
            "replay_capacity",
            "bootstrap_steps",
            "log_interval",
        ],
    ),
    ("eval", &["episodes", "length", "seeds"]),
    ("output", &["dir"]),
];

struct Entry<'a> {
    line: usize,
    section: &'a str,
    key: &'a str,
    value: &'a str,
}

impl Entry<'_> {
    fn err(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Value { line: self.line, section: self.section.into(), key: self.key.into(), message: message.into() }
    }

    fn parse<T: FromStr>(&self) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.value.parse().map_err(|e: T::Err| self.err(format!("`{}`: {e}", self.value)))
    }

    fn bool(&self) -> Result<bool, ConfigError> {
        match self.value {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(self.err(format!("expected true or false, got `{v}`"))),
        }
    }
}

fn parse_cell(e: &Entry, text: &str) -> Result<Cell, ConfigError> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    match parts.as_slice() {
        [x, y] => {
            let x: u16 = x.parse().map_err(|_| e.err(format!("bad cell coordinate `{x}`")))?;
            let y: u16 = y.parse().map_err(|_| e.err(format!("bad cell coordinate `{y}`")))?;
            Ok(Cell::new(x, y))
        }
        _ => Err(e.err(format!("expected `x y`, got `{text}`"))),
    }
}

fn parse_prop(e: &Entry, id: &str) -> Result<AtomicProp, ConfigError> {
    let parts: Vec<&str> = e.value.split_whitespace().collect();
    let [kind, x, y, r] = parts.as_slice() else {
        return Err(e.err("expected `subgoal|region x y radius`"));
    };
    let num = |s: &str| s.parse::<f64>().map_err(|_| e.err(format!("bad number `{s}`")));
    let (c, r) = ([num(x)?, num(y)?], num(r)?);
    match *kind {
        "subgoal" => Ok(AtomicProp::subgoal(id, c, r)),
        "region" => Ok(AtomicProp::region(id, c, r)),
        k => Err(e.err(format!("unknown proposition kind `{k}`"))),
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env();
        Ok(cfg)
    }

    /// Applies the output-directory override from the environment.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut section: Option<&str> = None;
        let mut seen = std::collections::BTreeSet::new();
        let (mut alpha_r, mut alpha_c) = (0.1, 0.2);
        let mut three_timescale = false;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
                continue;
            }
            if let Some(name) = s.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, message: format!("unterminated section header `{s}`") })?
                    .trim();
                if !KEYS.iter().any(|(k, _)| *k == name) {
                    return Err(ConfigError::Syntax { line, message: format!("unknown section [{name}]") });
                }
                section = Some(name);
                continue;
            }
            let Some((key, value)) = s.split_once('=') else {
                return Err(ConfigError::Syntax { line, message: format!("expected `key = value`, got `{s}`") });
            };
            let Some(sec) = section else {
                return Err(ConfigError::Syntax { line, message: "key outside of any section".into() });
            };
            let e = Entry { line, section: sec, key: key.trim(), value: value.trim() };
            if !seen.insert((sec, e.key)) {
                return Err(e.err("duplicate key"));
            }
            let t = &mut cfg.train;
            match (sec, e.key) {
                ("task", "template") => cfg.task.template = Some(e.parse()?),
                ("task", "formula") => cfg.task.formula = Some(e.value.to_string()),
                ("task", "start") => {
                    cfg.task.start = e.value.split(';').map(|c| parse_cell(&e, c.trim())).collect::<Result<_, _>>()?
                }
                ("task", "rho_max") => cfg.task.rho_max = e.parse()?,
                ("task", k) if k.starts_with("prop.") => cfg.task.props.push(parse_prop(&e, &k["prop.".len()..])?),
                ("env", "size") => cfg.env.size = e.parse()?,
                ("env", "slip") => cfg.env.slip = e.parse()?,
                ("env", "horizon") => t.horizon = e.parse()?,
                ("env", "trap_termination") => t.trap_termination = e.bool()?,
                ("train", "steps") => t.steps = e.parse()?,
                ("train", "seed") => t.seed = e.parse()?,
                ("train", "gamma") => t.gamma = e.parse()?,
                ("train", "gamma_c0") => t.gamma_c0 = e.parse()?,
                ("train", "gamma_c_tau") => t.gamma_c_tau = e.parse()?,
                ("train", "lambda") => t.lambda = e.parse()?,
                ("train", "limit") => t.limit = e.parse()?,
                ("train", "eps_start") => t.eps_start = e.parse()?,
                ("train", "eps_end") => t.eps_end = e.parse()?,
                ("train", "eps_fraction") => t.eps_fraction = e.parse()?,
                ("train", "her") => t.her = e.bool()?,
                ("train", "k_her") => t.k_her = e.parse()?,
                ("train", "step_sizes") => {
                    three_timescale = match e.value {
                        "constant" => false,
                        "three_timescale" => true,
                        v => return Err(e.err(format!("expected constant or three_timescale, got `{v}`"))),
                    }
                }
                ("train", "alpha_r") => alpha_r = e.parse()?,
                ("train", "alpha_c") => alpha_c = e.parse()?,
                ("train", "cost_mode") => {
                    t.cost_mode = match e.value {
                        "min" => CostMode::Min,
                        "sum" => CostMode::Sum,
                        v => return Err(e.err(format!("expected min or sum, got `{v}`"))),
                    }
                }
                ("train", "safe_exploration") => t.safe_exploration = e.bool()?,
                ("train", "batch") => t.batch = e.parse()?,
                ("train", "warmup") => t.warmup = e.parse()?,
                ("train", "replay_capacity") => t.replay_capacity = e.parse()?,
                ("train", "bootstrap_steps") => t.bootstrap_steps = e.parse()?,
                ("train", "log_interval") => t.log_interval = e.parse()?,
                ("eval", "episodes") => cfg.eval.episodes = e.parse()?,
                ("eval", "length") => cfg.eval.length = e.parse()?,
                ("eval", "seeds") => {
                    cfg.eval.seeds = e
                        .value
                        .split(',')
                        .map(|v| v.trim().parse::<u64>().map_err(|_| e.err(format!("bad seed `{}`", v.trim()))))
                        .collect::<Result<_, _>>()?
                }
                ("output", "dir") => cfg.output_dir = PathBuf::from(e.value),
                _ => return Err(e.err("unknown key")),
            }
        }
        if three_timescale && (seen.contains(&("train", "alpha_r")) || seen.contains(&("train", "alpha_c"))) {
            return Err(ConfigError::Invalid("alpha_r / alpha_c have no effect with step_sizes = three_timescale".into()));
        }
        cfg.train.step_sizes = if three_timescale { StepSizes::ThreeTimescale } else { StepSizes::Constant { alpha_r, alpha_c } };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        match (&self.task.template, &self.task.formula) {
            (Some(_), Some(_)) => return bad("[task] template and formula are mutually exclusive"),
            (None, None) => return bad("[task] needs a template or a formula"),
            (Some(_), None) if !self.task.props.is_empty() || !self.task.start.is_empty() => {
                return bad("[task] prop.* and start only apply to custom formulas")
            }
            (None, Some(_)) if self.task.start.is_empty() => return bad("[task] start is required with a custom formula"),
            _ => {}
        }
        if !(self.task.rho_max > 0.0 && self.task.rho_max.is_finite()) {
            return bad("[task] rho_max must be positive");
        }
        if !(0.0..=1.0).contains(&self.env.slip) {
            return bad("[env] slip must be in [0, 1]");
        }
        if self.eval.episodes == 0 || self.eval.length == 0 || self.eval.seeds.is_empty() {
            return bad("[eval] episodes, length and seeds must be non-empty");
        }
        self.train.validate(self.task.rho_max).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn layout(&self) -> Result<(TaskLayout, crate::stl::Formula), ConfigError> {
        if let Some(t) = self.task.template {
            return Ok(make_layout(t, self.env.size)?);
        }
        let text = self.task.formula.clone().expect("validated");
        let props = PropTable::new(self.task.props.clone())?;
        let formula = parse_formula(&text, &props)?;
        let layout = TaskLayout { template: None, size: u16::try_from(self.env.size).unwrap_or(u16::MAX), props, formula: text, start: self.task.start.clone() };
        check_layout(&layout)?;
        Ok((layout, formula))
    }

    /// Builds the task; automaton errors surface as `ConfigError::Task`.
    pub fn task(&self) -> Result<Task, ConfigError> {
        let (layout, formula) = self.layout()?;
        Ok(Task::with_cap(layout, formula, self.task.rho_max)?)
    }

    /// Identifies everything a checkpoint depends on: layout, formula and `rho_max`.
    pub fn fingerprint(&self) -> Result<String, ConfigError> {
        let (layout, _) = self.layout()?;
        let text = serde_json::to_string(&(layout, self.task.rho_max)).expect("layout serializes");
        Ok(format!("{:016x}", seed::digest(&text)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("[task]\ntemplate = 3\n[env]\nsize = 6\nhorizon=50\n[train]\nsteps = 10\nstep_sizes = three_timescale\n").unwrap();
        assert_eq!(c.task.template, Some(3));
        assert_eq!(c.env.size, 6);
        assert_eq!(c.train.horizon, 50);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.train.step_sizes, StepSizes::ThreeTimescale);
        assert_eq!(c.eval.episodes, 16);
        assert_eq!(c.eval.length, 1000);
        assert_eq!(c.task().unwrap().layout.size, 6);
    }

    #[test]
    fn custom_formula() {
        let text = "[task]\nformula = F g1 & G !o1\nprop.g1 = subgoal 4.5 4.5 0.5\nprop.o1 = region 2.5 2.5 0.6\nstart = 0 0\n[env]\nsize = 5\n";
        let c = RunConfig::parse(text).unwrap();
        let t = c.task().unwrap();
        assert_eq!(t.layout.props.len(), 2);
        assert_eq!(t.layout.start, vec![Cell::new(0, 0)]);
        assert_eq!(c.fingerprint().unwrap(), c.fingerprint().unwrap());
        let other = RunConfig::parse(&text.replace("0.6", "0.7")).unwrap();
        assert_ne!(c.fingerprint().unwrap(), other.fingerprint().unwrap());
    }

    #[test]
    fn training_keys_do_not_change_fingerprint() {
        let a = RunConfig::parse("[task]\ntemplate = 1\n").unwrap();
        let b = RunConfig::parse("[task]\ntemplate = 1\n[train]\nseed = 9\n").unwrap();
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
    }

    #[test]
    fn rejections() {
        for (text, needle) in [
            ("[task]\ntemplate = 3\ncolour = red\n", "unknown key"),
            ("[tasks]\n", "unknown section"),
            ("template = 3\n", "outside"),
            ("[task]\ntemplate = 3\n[train]\ngamma = 1.5\n", "gamma"),
            ("[task]\ntemplate = 3\n[train]\nher = maybe\n", "true or false"),
            ("[task]\ntemplate = 3\ntemplate = 4\n", "duplicate"),
            ("[task]\n", "template or a formula"),
            ("[task]\nformula = F g1\nprop.g1 = subgoal 1 1 0.5\n", "start"),
            ("[task]\ntemplate = 3\n[env]\nslip = 2\n", "slip"),
            ("[task]\ntemplate = 3\n[train]\nbootstrap_steps = 3\n", "bootstrap_steps"),
            ("[task]\ntemplate = 3\n[train]\nstep_sizes = three_timescale\nalpha_r = 0.5\n", "no effect"),
            ("[task]\ntemplate = 3\nprop.g1 = blob 1 1 1\n", "kind"),
            ("[task\n", "unterminated"),
        ] {
            let e = RunConfig::parse(text).unwrap_err().to_string();
            assert!(e.contains(needle), "{text:?} -> {e}");
        }
    }

    #[test]
    fn every_documented_key_parses() {
        let mut text = String::from("[task]\ntemplate = 3\n");
        for (sec, keys) in KEYS.iter().skip(1) {
            text.push_str(&format!("[{sec}]\n"));
            for k in *keys {
                let v = match *k {
                    "trap_termination" | "her" | "safe_exploration" => "true",
                    "step_sizes" => "constant",
                    "cost_mode" => "min",
                    "seeds" => "1, 2",
                    "dir" => "out",
                    "slip" | "limit" | "eps_end" => "0",
                    "gamma" | "gamma_c0" | "lambda" | "eps_start" | "eps_fraction" | "alpha_r" | "alpha_c" => "0.5",
                    _ => "1",
                };
                text.push_str(&format!("{k} = {v}\n"));
            }
        }
        let c = RunConfig::parse(&text).unwrap();
        assert_eq!(c.eval.seeds, vec![1, 2]);
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }
}
