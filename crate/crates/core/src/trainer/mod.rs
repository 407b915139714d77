//! Automaton-constrained Q-learning on the product CMDP.

mod critic;
mod her;
mod replay;
mod schedule;

pub use critic::{constrained_greedy, CostMode, Critics, GoalCodes, Key, Row};
pub use her::her_relabel;
pub use replay::{Replay, Stored};
pub use schedule::{epsilon, gamma_c_schedule, StepSizes, REWARD_EXPONENT, SAFETY_EXPONENT};

use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automata::StateId;
use crate::grid::{Cell, NUM_ACTIONS};
use crate::product::{episode_success, AugmentedState, GoalList, Product, ProductError, Task, TrajectoryRow};
use crate::grid::state_coords;
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Product(#[from] ProductError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub seed: u64,
    pub gamma: f64,
    pub gamma_c0: f64,
    /// Horizon `τ` of the safety-discount schedule; `0` keeps `γ_c` fixed.
    pub gamma_c_tau: f64,
    pub lambda: f64,
    pub limit: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_fraction: f64,
    pub k_her: usize,
    pub her: bool,
    pub step_sizes: StepSizes,
    pub cost_mode: CostMode,
    pub safe_exploration: bool,
    pub batch: usize,
    pub warmup: u64,
    pub replay_capacity: usize,
    /// Training episode length.
    pub horizon: usize,
    pub trap_termination: bool,
    /// Bootstrap distance of the reward target; only one-step targets are implemented.
    pub bootstrap_steps: usize,
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300_000,
            seed: 0,
            gamma: 0.99,
            gamma_c0: 0.85,
            gamma_c_tau: 25_000.0,
            lambda: 0.005,
            limit: 0.0,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.5,
            k_her: 4,
            her: true,
            step_sizes: StepSizes::Constant { alpha_r: 0.1, alpha_c: 0.2 },
            cost_mode: CostMode::Min,
            safe_exploration: false,
            batch: 32,
            warmup: 1_000,
            replay_capacity: 500_000,
            horizon: 100,
            trap_termination: true,
            bootstrap_steps: 1,
            log_interval: 1_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, rho_max: f64) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.gamma_c0) {
            return bad(format!("gamma_c0 must be in [0, 1), got {}", self.gamma_c0));
        }
        if !(self.gamma_c_tau >= 0.0) {
            return bad("gamma_c_tau must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if self.cost_mode == CostMode::Min && !(-rho_max..=rho_max).contains(&self.limit) {
            return bad(format!("limit must be in [-{rho_max}, {rho_max}] for min-safety, got {}", self.limit));
        }
        for (name, v) in [("eps_start", self.eps_start), ("eps_end", self.eps_end), ("eps_fraction", self.eps_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if let StepSizes::Constant { alpha_r, alpha_c } = self.step_sizes {
            if !(alpha_r > 0.0 && alpha_r <= 1.0 && alpha_c > 0.0 && alpha_c <= 1.0) {
                return bad("learning rates must be in (0, 1]".into());
            }
        }
        if self.batch == 0 || self.horizon == 0 || self.replay_capacity == 0 || self.log_interval == 0 {
            return bad("batch, horizon, replay_capacity and log_interval must be positive".into());
        }
        if self.bootstrap_steps != 1 {
            return bad(format!("bootstrap_steps = {} is not supported (only 1)", self.bootstrap_steps));
        }
        Ok(())
    }

    pub fn qc_init(&self, rho_max: f64) -> f64 {
        match self.cost_mode {
            CostMode::Min => rho_max,
            CostMode::Sum => 0.0,
        }
    }
}

/// A product transition as collected by a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub aug: AugmentedState,
    pub action: usize,
    pub reward: f64,
    pub cost: f64,
    pub next: AugmentedState,
    pub trapped: bool,
    pub timeout: bool,
    /// Hindsight copies with reward 1 are terminal for the reward critic.
    pub relabeled: bool,
}

/// `r + γ·Q^r̄(s', a*)`, without bootstrap on terminal transitions.
pub fn qr_target(reward: f64, gamma: f64, bootstrap: f64, terminal: bool) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * bootstrap
    }
}

/// `γ_c·min(c, b) + (1-γ_c)·c`. On trap termination `b` is the trap's own cost.
pub fn qc_target(cost: f64, gamma_c: f64, bootstrap: f64) -> f64 {
    gamma_c * cost.min(bootstrap) + (1.0 - gamma_c) * cost
}

/// Sum-of-costs target on rectified violations `max(0, -c)`.
pub fn sum_cost_target(cost: f64, gamma: f64, bootstrap: f64) -> f64 {
    (-cost).max(0.0) + gamma * bootstrap
}

/// Per-batch hyperparameters of [`apply_updates`].
#[derive(Debug, Clone, Copy)]
pub struct UpdateParams {
    pub gamma: f64,
    pub gamma_c: f64,
    pub limit: f64,
    pub mode: CostMode,
    pub rho_max: f64,
    pub step_sizes: StepSizes,
}

/// One tabular step on every transition of the batch, then one target interpolation.
pub fn apply_updates(batch: &[Stored], critics: &mut Critics, p: &UpdateParams) {
    let mut targets = Vec::with_capacity(batch.len());
    for tr in batch {
        let next = tr.next_row as usize;
        let a_star = constrained_greedy(critics.qr(next), critics.qc(next), p.limit, p.mode);
        let (br, bc) = critics.target(next, a_star);
        let terminal = tr.trapped || (tr.relabeled && tr.reward > 0.0);
        let yr = qr_target(tr.reward, p.gamma, br, terminal);
        let yc = match p.mode {
            CostMode::Min => qc_target(tr.cost, p.gamma_c, if tr.trapped { -p.rho_max } else { bc }),
            CostMode::Sum => {
                let b = if tr.trapped { p.rho_max / (1.0 - p.gamma) } else { bc };
                sum_cost_target(tr.cost, p.gamma, b)
            }
        };
        targets.push((yr, yc));
    }
    let clamp = match p.mode {
        CostMode::Min => Some(p.rho_max),
        CostMode::Sum => None,
    };
    let sizes = p.step_sizes;
    for (tr, (yr, yc)) in batch.iter().zip(targets) {
        critics.update(tr.row as usize, tr.action as usize, yr, yc, |n| sizes.at(n), clamp);
    }
    critics.advance_targets();
}

/// One JSON-lines metrics record, aggregating the episodes finished in the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub episode: u64,
    #[serde(rename = "return")]
    pub mean_return: Option<f64>,
    pub success: Option<f64>,
    pub min_cost: Option<f64>,
    pub violations: u64,
    pub gamma_c: f64,
    pub epsilon: f64,
}

#[derive(Default)]
struct Window {
    episodes: u64,
    returns: f64,
    successes: u64,
    min_cost: Option<f64>,
    violations: u64,
}

pub struct TrainOutcome {
    pub critics: Critics,
    pub metrics: Vec<MetricsRecord>,
    pub episodes: u64,
}

fn critic_key(critics: &mut Critics, product: &Product, s: &AugmentedState) -> Key {
    critics.key(product.env.index(s.cell), s.q, &s.gplus)
}

fn store(critics: &mut Critics, product: &Product, replay: &mut Replay, tr: &Transition) {
    let k = critic_key(critics, product, &tr.aug);
    let row = critics.row(k) as u32;
    let k = critic_key(critics, product, &tr.next);
    let next_row = critics.row(k) as u32;
    replay.push(Stored {
        row,
        next_row,
        action: tr.action as u8,
        reward: tr.reward,
        cost: tr.cost,
        trapped: tr.trapped,
        timeout: tr.timeout,
        relabeled: tr.relabeled,
    });
}

/// Constrained-greedy action at `s` using the main tables; unseen keys use initial values.
pub fn greedy_action(critics: &Critics, product: &Product, s: &AugmentedState, limit: f64, mode: CostMode) -> usize {
    let key = critics
        .goal_codes
        .get(&s.gplus)
        .map(|g| Key { cell: product.env.index(s.cell) as u32, q: s.q as u32, goals: g });
    let (qr, qc) = match key {
        Some(k) => critics.values(&k),
        None => ([critics.qr_init; NUM_ACTIONS], [critics.qc_init; NUM_ACTIONS]),
    };
    constrained_greedy(&qr, &qc, limit, mode)
}

/// Runs ε-greedy ACQL for `cfg.steps` environment steps. Deterministic for a fixed seed.
pub fn train(task: &Task, slip: f64, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(task, slip, cfg, |_| {})
}

/// As [`train`], calling `on_metrics` for every record as it is produced.
pub fn train_with(
    task: &Task,
    slip: f64,
    cfg: &TrainConfig,
    mut on_metrics: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate(task.rho_max)?;
    let mut product = Product::new(task, slip, cfg.horizon)?;
    product.trap_termination = cfg.trap_termination;
    let mut critics = Critics::new(0.0, cfg.qc_init(task.rho_max), cfg.lambda);
    let mut replay = Replay::new(cfg.replay_capacity);
    let mut env_rng = seed::rng(cfg.seed, "env", 0);
    let mut policy_rng = seed::rng(cfg.seed, "policy", 0);
    let mut replay_rng = seed::rng(cfg.seed, "replay", 0);
    let mut her_rng = seed::rng(cfg.seed, "her", 0);

    let mut metrics = Vec::new();
    let mut window = Window::default();
    let mut episodes = 0u64;
    let mut episode: Vec<Transition> = Vec::with_capacity(cfg.horizon);
    let mut qs: Vec<StateId> = Vec::with_capacity(cfg.horizon + 1);
    let mut batch = Vec::with_capacity(cfg.batch);
    let mut s = product.reset(&mut env_rng);
    qs.push(s.q);
    let mut t = 0usize;

    for step in 0..cfg.steps {
        let eps = epsilon(step, cfg.steps, cfg.eps_start, cfg.eps_end, cfg.eps_fraction);
        let gamma_c = gamma_c_schedule(step, cfg.gamma_c0, cfg.gamma_c_tau);
        let action = if policy_rng.gen::<f64>() < eps {
            explore(&critics, &product, &s, cfg, &mut policy_rng)
        } else {
            greedy_action(&critics, &product, &s, cfg.limit, cfg.cost_mode)
        };
        let o = product.step(&s, action, t, &mut env_rng)?;
        let done = o.done(product.trap_termination);
        let next = o.next.clone();
        qs.push(next.q);
        episode.push(Transition::from_outcome(s, action, o));
        s = next;
        t += 1;

        if done {
            let success = episode_success(&qs, task);
            window.episodes += 1;
            window.returns += episode.iter().map(|tr| tr.reward).sum::<f64>();
            window.successes += u64::from(success);
            let mc = episode.iter().map(|tr| tr.cost).fold(f64::INFINITY, f64::min);
            window.min_cost = Some(window.min_cost.map_or(mc, |m: f64| m.min(mc)));
            window.violations += episode.iter().filter(|tr| tr.trapped).count() as u64;
            episodes += 1;
            for tr in &episode {
                store(&mut critics, &product, &mut replay, tr);
            }
            if cfg.her && cfg.k_her > 0 {
                for tr in her_relabel(&episode, cfg.k_her, &mut her_rng) {
                    store(&mut critics, &product, &mut replay, &tr);
                }
            }
            episode.clear();
            qs.clear();
            s = product.reset(&mut env_rng);
            qs.push(s.q);
            t = 0;
        }

        if step >= cfg.warmup && !replay.is_empty() {
            replay.sample_into(cfg.batch, &mut replay_rng, &mut batch);
            let params = UpdateParams {
                gamma: cfg.gamma,
                gamma_c,
                limit: cfg.limit,
                mode: cfg.cost_mode,
                rho_max: task.rho_max,
                step_sizes: cfg.step_sizes,
            };
            apply_updates(&batch, &mut critics, &params);
        }

        if (step + 1) % cfg.log_interval == 0 {
            let w = std::mem::take(&mut window);
            let n = w.episodes as f64;
            let rec = MetricsRecord {
                step: step + 1,
                episode: episodes,
                mean_return: (w.episodes > 0).then(|| w.returns / n),
                success: (w.episodes > 0).then(|| w.successes as f64 / n),
                min_cost: w.min_cost,
                violations: w.violations,
                gamma_c,
                epsilon: eps,
            };
            on_metrics(&rec);
            metrics.push(rec);
        }
    }
    Ok(TrainOutcome { critics, metrics, episodes })
}

fn explore(critics: &Critics, product: &Product, s: &AugmentedState, cfg: &TrainConfig, rng: &mut seed::Rng) -> usize {
    if cfg.safe_exploration {
        let (_, qc) = critics
            .goal_codes
            .get(&s.gplus)
            .map(|g| critics.values(&Key { cell: product.env.index(s.cell) as u32, q: s.q as u32, goals: g }))
            .unwrap_or(([0.0; NUM_ACTIONS], [critics.qc_init; NUM_ACTIONS]));
        let safe: Vec<usize> = (0..NUM_ACTIONS)
            .filter(|a| match cfg.cost_mode {
                CostMode::Min => qc[*a] > cfg.limit,
                CostMode::Sum => qc[*a] < cfg.limit,
            })
            .collect();
        if !safe.is_empty() {
            return safe[rng.gen_range(0..safe.len())];
        }
    }
    rng.gen_range(0..NUM_ACTIONS)
}

/// Outcome of one greedy evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    /// Steps spent in an accepting state.
    pub reward: f64,
    pub success: bool,
    pub violations: u64,
    pub accepting_visits: usize,
    pub states: Vec<StateId>,
    pub cells: Vec<Cell>,
    pub rows: Vec<TrajectoryRow>,
}

/// Greedy (ε = 0) constrained rollout of `length` steps, ending early on trap termination.
pub fn rollout(
    critics: &Critics,
    product: &Product,
    length: usize,
    limit: f64,
    mode: CostMode,
    rng: &mut seed::Rng,
) -> Result<EpisodeReport, TrainError> {
    let mut s = product.reset(rng);
    let mut states = vec![s.q];
    let mut cells = vec![s.cell];
    let mut rows = Vec::with_capacity(length + 1);
    let (mut reward, mut violations) = (0.0, 0u64);
    for t in 0..length {
        let a = greedy_action(critics, product, &s, limit, mode);
        let o = product.step(&s, a, t, rng)?;
        let p = state_coords(s.cell);
        rows.push(TrajectoryRow {
            t,
            x: p[0],
            y: p[1],
            q: s.q,
            action: Some(a),
            reward: Some(o.reward),
            cost: Some(o.cost),
            trapped: product.task.is_unsafe(s.q),
        });
        reward += o.reward;
        violations += u64::from(o.trapped);
        let stop = o.trapped && product.trap_termination;
        s = o.next;
        states.push(s.q);
        cells.push(s.cell);
        if stop {
            break;
        }
    }
    let p = state_coords(s.cell);
    rows.push(TrajectoryRow {
        t: rows.len(),
        x: p[0],
        y: p[1],
        q: s.q,
        action: None,
        reward: None,
        cost: None,
        trapped: product.task.is_unsafe(s.q),
    });
    let success = episode_success(&states, product.task);
    let accepting_visits = states.iter().filter(|q| product.task.is_accepting(**q)).count();
    Ok(EpisodeReport { reward, success, violations, accepting_visits, states, cells, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub seed: u64,
    pub episodes: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
    pub violations: u64,
}

/// `episodes` greedy rollouts with RNG streams derived from `seed`.
pub fn evaluate(
    critics: &Critics,
    product: &Product,
    episodes: usize,
    length: usize,
    limit: f64,
    mode: CostMode,
    seed: u64,
) -> Result<(EvalSummary, Vec<EpisodeReport>), TrainError> {
    let mut reports = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut rng = seed::rng(seed, "eval", i as u64);
        reports.push(rollout(critics, product, length, limit, mode, &mut rng)?);
    }
    let n = episodes.max(1) as f64;
    let summary = EvalSummary {
        seed,
        episodes,
        mean_reward: reports.iter().map(|r| r.reward).sum::<f64>() / n,
        success_rate: reports.iter().filter(|r| r.success).count() as f64 / n,
        violations: reports.iter().map(|r| r.violations).sum(),
    };
    Ok((summary, reports))
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointRow {
    cell: u32,
    q: u32,
    goals: u32,
    qr: Row,
    qc: Row,
    qr_target: Row,
    qc_target: Row,
    visits: [u64; NUM_ACTIONS],
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    fingerprint: String,
    qr_init: f64,
    qc_init: f64,
    lambda: f64,
    goal_lists: Vec<GoalList>,
    rows: Vec<CheckpointRow>,
}

/// JSON checkpoint tagged with a format version and the run's config fingerprint.
pub fn save_checkpoint(critics: &Critics, fingerprint: &str, out: impl Write) -> Result<(), TrainError> {
    let goal_lists = (0..critics.goal_codes.len() as u32).map(|c| critics.goal_codes.list(c).clone()).collect();
    let rows = critics
        .snapshot()
        .into_iter()
        .map(|(k, qr, qc, rb, cb, visits)| CheckpointRow {
            cell: k.cell,
            q: k.q,
            goals: k.goals,
            qr,
            qc,
            qr_target: rb,
            qc_target: cb,
            visits,
        })
        .collect();
    let ck = Checkpoint {
        format: "acql-critics".into(),
        version: CHECKPOINT_VERSION,
        fingerprint: fingerprint.into(),
        qr_init: critics.qr_init,
        qc_init: critics.qc_init,
        lambda: critics.lambda,
        goal_lists,
        rows,
    };
    serde_json::to_writer(out, &ck).map_err(|e| TrainError::Checkpoint(e.to_string()))
}

/// Loads a checkpoint; `expected` (when given) must match the stored fingerprint.
pub fn load_checkpoint(input: impl Read, expected: Option<&str>) -> Result<Critics, TrainError> {
    let ck: Checkpoint = serde_json::from_reader(input).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    if ck.format != "acql-critics" || ck.version != CHECKPOINT_VERSION {
        return Err(TrainError::Checkpoint(format!("unsupported format {} v{}", ck.format, ck.version)));
    }
    if let Some(fp) = expected {
        if fp != ck.fingerprint {
            return Err(TrainError::Checkpoint(format!(
                "config fingerprint {fp} does not match checkpoint {}",
                ck.fingerprint
            )));
        }
    }
    let rows = ck
        .rows
        .into_iter()
        .map(|r| (Key { cell: r.cell, q: r.q, goals: r.goals }, r.qr, r.qc, r.qr_target, r.qc_target, r.visits))
        .collect();
    Ok(Critics::restore(ck.qr_init, ck.qc_init, ck.lambda, &ck.goal_lists, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_layout;

    #[test]
    fn target_examples() {
        assert!((qr_target(1.0, 0.99, 0.5, false) - 1.495).abs() < 1e-12);
        assert_eq!(qr_target(0.0, 0.99, 0.5, true), 0.0);
        assert!((qr_target(0.0, 0.99, 0.7, false) - 0.693).abs() < 1e-12);
        assert!((qc_target(0.4, 0.9, -0.1) - (-0.05)).abs() < 1e-12);
        assert_eq!(qc_target(0.4, 0.0, -0.1), 0.4);
        assert_eq!(qc_target(0.4, 1.0, -0.1), -0.1);
        assert_eq!(qc_target(0.4, 1.0, 0.9), 0.4);
        assert_eq!(sum_cost_target(-0.3, 0.9, 0.0), 0.3);
        assert_eq!(sum_cost_target(0.5, 0.9, 0.0), 0.0);
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { steps: 4_000, warmup: 200, log_interval: 500, gamma_c_tau: 1_000.0, ..TrainConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate(1.0).is_ok());
        for bad in [
            TrainConfig { gamma: 1.0, ..TrainConfig::default() },
            TrainConfig { limit: 2.0, ..TrainConfig::default() },
            TrainConfig { batch: 0, ..TrainConfig::default() },
            TrainConfig { bootstrap_steps: 3, ..TrainConfig::default() },
            TrainConfig { step_sizes: StepSizes::Constant { alpha_r: 0.0, alpha_c: 0.2 }, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(1.0), Err(TrainError::Config(_))));
        }
        let sum = TrainConfig { cost_mode: CostMode::Sum, limit: 40.0, ..TrainConfig::default() };
        assert!(sum.validate(1.0).is_ok());
    }

    #[test]
    fn training_is_reproducible_and_logs_each_interval() {
        let (l, f) = make_layout(3, 6).unwrap();
        let task = Task::new(l, f).unwrap();
        let cfg = tiny_cfg();
        let a = train(&task, 0.0, &cfg).unwrap();
        let b = train(&task, 0.0, &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.metrics.len(), 8);
        assert_eq!(a.critics.snapshot(), b.critics.snapshot());
        for r in a.critics.keys().iter().enumerate().map(|(i, _)| a.critics.qc(i)) {
            assert!(r.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (l, f) = make_layout(1, 6).unwrap();
        let task = Task::new(l, f).unwrap();
        let out = train(&task, 0.0, &tiny_cfg()).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&out.critics, "abc", &mut buf).unwrap();
        let back = load_checkpoint(buf.as_slice(), Some("abc")).unwrap();
        assert_eq!(back.snapshot(), out.critics.snapshot());
        assert!(load_checkpoint(buf.as_slice(), Some("xyz")).is_err());
        assert!(load_checkpoint("{}".as_bytes(), None).is_err());
    }

    #[test]
    fn reward_scaling_keeps_greedy_choice() {
        let qc = [0.3, -0.2, 0.5, 0.1, -0.9];
        let qr = [0.2, 0.9, 0.1, 0.2, 3.0];
        let a = constrained_greedy(&qr, &qc, 0.0, CostMode::Min);
        for k in [0.5, 2.0, 100.0] {
            let scaled: Vec<f64> = qr.iter().map(|v| v * k).collect();
            assert_eq!(constrained_greedy(&scaled, &qc, 0.0, CostMode::Min), a);
        }
    }
}
