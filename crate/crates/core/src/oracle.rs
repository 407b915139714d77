//! Exact dynamic-programming ground truth on small deterministic products.
//!
//! States are pairs `(cell, q)` indexed `q * cells + cell`. The subgoal list is a
//! function of `q`, so it adds nothing to the state. Unsafe automaton states are
//! absorbing with cost `-rho_max`.

use std::io::Write;

use thiserror::Error;

use crate::grid::{GridEnv, NUM_ACTIONS};
use crate::product::Task;

/// Refuse anything larger than this many augmented states.
pub const MAX_STATES: usize = 10_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracles need deterministic dynamics (slip = {0})")]
    Stochastic(f64),
    #[error("product has {0} states, more than the oracle limit of {MAX_STATES}")]
    TooLarge(usize),
    #[error("{0} did not converge within {1} sweeps")]
    NoConvergence(&'static str, usize),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type SafeSet = Vec<[bool; NUM_ACTIONS]>;

#[derive(Debug, Clone)]
pub struct FiniteProduct {
    pub cells: usize,
    pub automaton_states: usize,
    pub rho_max: f64,
    pub next: Vec<[usize; NUM_ACTIONS]>,
    pub reward: Vec<[f64; NUM_ACTIONS]>,
    /// Cost of leaving a state; it does not depend on the action.
    pub cost: Vec<f64>,
    /// Transitions that enter an unsafe automaton state end the episode.
    pub terminal: Vec<[bool; NUM_ACTIONS]>,
    pub trap: Vec<bool>,
}

impl FiniteProduct {
    pub fn build(task: &Task, env: &GridEnv) -> Result<Self, OracleError> {
        if env.slip != 0.0 {
            return Err(OracleError::Stochastic(env.slip));
        }
        let cells = env.num_cells();
        let nq = task.num_states();
        let n = cells * nq;
        if n > MAX_STATES {
            return Err(OracleError::TooLarge(n));
        }
        let mut fp = Self {
            cells,
            automaton_states: nq,
            rho_max: task.rho_max,
            next: vec![[0; NUM_ACTIONS]; n],
            reward: vec![[0.0; NUM_ACTIONS]; n],
            cost: vec![0.0; n],
            terminal: vec![[false; NUM_ACTIONS]; n],
            trap: vec![false; n],
        };
        for q in 0..nq {
            for i in 0..cells {
                let s = q * cells + i;
                if task.is_unsafe(q) {
                    fp.trap[s] = true;
                    fp.cost[s] = -task.rho_max;
                    fp.next[s] = [s; NUM_ACTIONS];
                    continue;
                }
                fp.cost[s] = task.cost(i, q);
                for a in 0..NUM_ACTIONS {
                    let j = env.index(env.apply(env.cell(i), a));
                    let q2 = task.next_q(q, j);
                    fp.next[s][a] = q2 * cells + j;
                    fp.reward[s][a] = if task.is_accepting(q2) { 1.0 } else { 0.0 };
                    fp.terminal[s][a] = task.is_unsafe(q2);
                }
            }
        }
        Ok(fp)
    }

    pub fn len(&self) -> usize {
        self.next.len()
    }

    pub fn is_empty(&self) -> bool {
        self.next.is_empty()
    }

    /// `(cell index, q)` of a state.
    pub fn split(&self, s: usize) -> (usize, usize) {
        (s % self.cells, s / self.cells)
    }

    pub fn state(&self, cell: usize, q: usize) -> usize {
        q * self.cells + cell
    }

    fn distinct_costs(&self) -> usize {
        let mut c: Vec<u64> = self.cost.iter().map(|v| v.to_bits()).collect();
        c.sort_unstable();
        c.dedup();
        c.len() + 1
    }
}

/// Greatest fixed point of: `(s, a)` is safe iff `cost(s) > limit` and the successor
/// keeps some safe action.
pub fn max_safe_set(fp: &FiniteProduct, limit: f64) -> SafeSet {
    let mut safe: SafeSet = fp.cost.iter().map(|&c| [c > limit; NUM_ACTIONS]).collect();
    loop {
        let alive: Vec<bool> = safe.iter().map(|r| r.iter().any(|&b| b)).collect();
        let mut changed = false;
        for s in 0..fp.len() {
            for a in 0..NUM_ACTIONS {
                if safe[s][a] && !alive[fp.next[s][a]] {
                    safe[s][a] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            return safe;
        }
    }
}

/// `Q(s, a) = min(cost(s), max_a' Q(s', a'))`, iterated down from `+rho_max`.
pub fn qc_star(fp: &FiniteProduct) -> Result<Vec<[f64; NUM_ACTIONS]>, OracleError> {
    let mut q = vec![[fp.rho_max; NUM_ACTIONS]; fp.len()];
    let bound = fp.len() * NUM_ACTIONS * fp.distinct_costs();
    for _ in 0..=bound {
        let v: Vec<f64> = q.iter().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut changed = false;
        for s in 0..fp.len() {
            for a in 0..NUM_ACTIONS {
                let x = fp.cost[s].min(v[fp.next[s][a]]);
                if x != q[s][a] {
                    q[s][a] = x;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(q);
        }
    }
    Err(OracleError::NoConvergence("qc_star", bound))
}

#[derive(Debug, Clone)]
pub struct RewardValues {
    /// `None` outside the safe set.
    pub q: Vec<[Option<f64>; NUM_ACTIONS]>,
    /// States without any safe action; their value is taken as zero.
    pub excluded: Vec<usize>,
    pub sweeps: usize,
}

impl RewardValues {
    pub fn value(&self, s: usize) -> f64 {
        self.q[s].iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Value iteration for the reward critic with actions restricted to `safe`.
pub fn qr_star_safe(fp: &FiniteProduct, safe: &SafeSet, gamma: f64) -> Result<RewardValues, OracleError> {
    const TOL: f64 = 1e-10;
    let n = fp.len();
    let excluded: Vec<usize> = (0..n).filter(|&s| !safe[s].iter().any(|&b| b)).collect();
    let mut v = vec![0.0; n];
    let max_sweeps = 1_000_000;
    for sweep in 1..=max_sweeps {
        let mut q = vec![[None; NUM_ACTIONS]; n];
        let mut delta = 0.0f64;
        let mut v2 = vec![0.0; n];
        for s in 0..n {
            for a in 0..NUM_ACTIONS {
                if safe[s][a] {
                    let boot = if fp.terminal[s][a] { 0.0 } else { v[fp.next[s][a]] };
                    q[s][a] = Some(fp.reward[s][a] + gamma * boot);
                }
            }
            v2[s] = q[s].iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            if v2[s] == f64::NEG_INFINITY {
                v2[s] = 0.0;
            }
            delta = delta.max((v2[s] - v[s]).abs());
        }
        v = v2;
        if delta < TOL {
            return Ok(RewardValues { q, excluded, sweeps: sweep });
        }
    }
    Err(OracleError::NoConvergence("qr_star_safe", max_sweeps))
}

/// Safe set that admits every pair except transitions into a trap.
pub fn unconstrained(fp: &FiniteProduct) -> SafeSet {
    (0..fp.len()).map(|s| std::array::from_fn(|a| !fp.trap[s] && !fp.terminal[s][a])).collect()
}

/// Greedy action over the safe reward values, ties to the lowest index.
pub fn greedy(values: &RewardValues, s: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (a, v) in values.q[s].iter().enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| *v > b) {
                best = Some((a, *v));
            }
        }
    }
    best.map(|(a, _)| a)
}

/// Follows the oracle-greedy policy from `s` for at most `len` steps.
pub fn optimal_path(fp: &FiniteProduct, values: &RewardValues, s: usize, len: usize) -> Vec<usize> {
    let mut path = vec![s];
    let mut s = s;
    for _ in 0..len {
        let Some(a) = greedy(values, s) else { break };
        if fp.terminal[s][a] {
            break;
        }
        s = fp.next[s][a];
        path.push(s);
    }
    path
}

/// CSV keyed by `x,y,q,action`.
pub fn write_tables(
    fp: &FiniteProduct,
    env: &GridEnv,
    safe: &SafeSet,
    qc: &[[f64; NUM_ACTIONS]],
    qr: &RewardValues,
    out: impl Write,
) -> Result<(), OracleError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "q", "action", "cost", "safe", "qc_star", "qr_star"])?;
    for s in 0..fp.len() {
        let (i, q) = fp.split(s);
        let c = env.cell(i);
        for a in 0..NUM_ACTIONS {
            let qr = qr.q[s][a].map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                c.x.to_string(),
                c.y.to_string(),
                q.to_string(),
                a.to_string(),
                fp.cost[s].to_string(),
                u8::from(safe[s][a]).to_string(),
                qc[s][a].to_string(),
                qr,
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_layout, Cell, TaskLayout};
    use crate::stl::{parse_formula, AtomicProp, PropTable};

    fn custom(size: u16, props: Vec<AtomicProp>, formula: &str, start: Cell) -> Task {
        let props = PropTable::new(props).unwrap();
        let f = parse_formula(formula, &props).unwrap();
        let layout = TaskLayout { template: None, size, props, formula: formula.into(), start: vec![start] };
        Task::new(layout, f).unwrap()
    }

    fn center_obstacle() -> (Task, GridEnv) {
        let t = custom(
            3,
            vec![AtomicProp::subgoal("g1", [2.5, 2.5], 0.3), AtomicProp::region("o1", [1.5, 1.5], 0.5)],
            "F g1 & G !o1",
            Cell::new(0, 0),
        );
        let env = t.layout.env(0.0).unwrap();
        (t, env)
    }

    /// Max over all lasso paths of the min cost seen, by DFS over simple paths.
    fn enumerate_qc(fp: &FiniteProduct, s: usize, a: usize) -> f64 {
        fn dfs(fp: &FiniteProduct, s: usize, on_path: &mut Vec<bool>, acc: f64) -> f64 {
            let acc = acc.min(fp.cost[s]);
            if on_path[s] {
                return acc;
            }
            on_path[s] = true;
            let mut best = f64::NEG_INFINITY;
            for a in 0..NUM_ACTIONS {
                best = best.max(dfs(fp, fp.next[s][a], on_path, acc));
            }
            on_path[s] = false;
            best
        }
        let mut on_path = vec![false; fp.len()];
        on_path[s] = true;
        dfs(fp, fp.next[s][a], &mut on_path, fp.cost[s])
    }

    #[test]
    fn refuses_slip() {
        let (t, _) = center_obstacle();
        assert!(matches!(FiniteProduct::build(&t, &t.layout.env(0.2).unwrap()), Err(OracleError::Stochastic(_))));
    }

    #[test]
    fn center_obstacle_safe_set() {
        let (t, env) = center_obstacle();
        let fp = FiniteProduct::build(&t, &env).unwrap();
        let safe = max_safe_set(&fp, 0.0);
        let center = env.index(Cell::new(1, 1));
        let q0 = t.dba.initial();
        for i in 0..env.num_cells() {
            let s = fp.state(i, q0);
            for a in 0..NUM_ACTIONS {
                let into_center = env.index(env.apply(env.cell(i), a)) == center;
                assert_eq!(safe[s][a], i != center && !into_center, "cell {i} action {a}");
            }
        }
        let qc = qc_star(&fp).unwrap();
        let left = fp.state(env.index(Cell::new(0, 1)), q0);
        assert_eq!(qc[left][3], -t.rho_max);
        assert!(qc[left][2] > 0.0);
    }

    #[test]
    fn no_obstacle_everything_safe() {
        let t = custom(3, vec![AtomicProp::subgoal("g1", [2.5, 2.5], 0.3)], "F g1", Cell::new(0, 0));
        let env = t.layout.env(0.0).unwrap();
        let fp = FiniteProduct::build(&t, &env).unwrap();
        assert!(max_safe_set(&fp, 0.0).iter().all(|r| r.iter().all(|&b| b)));
        assert!(qc_star(&fp).unwrap().iter().flatten().all(|&v| v == t.rho_max));
    }

    #[test]
    fn goal_behind_walled_corridor_stays_safe() {
        // a wall of obstacles at x = 1 except for a gap at y = 3
        let mut props = vec![AtomicProp::subgoal("g1", [3.5, 0.5], 0.3)];
        for (k, y) in [0.5, 1.5, 2.5].into_iter().enumerate() {
            props.push(AtomicProp::region(format!("o{}", k + 1), [1.5, y], 0.5));
        }
        let t = custom(4, props, "F g1 & G !o1 & G !o2 & G !o3", Cell::new(0, 0));
        let env = t.layout.env(0.0).unwrap();
        let fp = FiniteProduct::build(&t, &env).unwrap();
        let safe = max_safe_set(&fp, 0.0);
        let goal_side = fp.state(env.index(Cell::new(3, 1)), t.dba.initial());
        assert!(safe[goal_side].iter().filter(|&&b| b).count() >= 3);
        let wall = fp.state(env.index(Cell::new(1, 1)), t.dba.initial());
        assert!(safe[wall].iter().all(|&b| !b));
    }

    #[test]
    fn qc_matches_enumeration_on_two_by_two() {
        let t = custom(
            2,
            vec![AtomicProp::subgoal("g1", [1.5, 1.5], 0.3), AtomicProp::region("o1", [1.5, 0.5], 0.4)],
            "F g1 & G !o1",
            Cell::new(0, 0),
        );
        let env = t.layout.env(0.0).unwrap();
        let fp = FiniteProduct::build(&t, &env).unwrap();
        let qc = qc_star(&fp).unwrap();
        for s in 0..fp.len() {
            for a in 0..NUM_ACTIONS {
                assert_eq!(qc[s][a], enumerate_qc(&fp, s, a), "state {s} action {a}");
            }
        }
    }

    #[test]
    fn sign_of_qc_agrees_with_safe_set() {
        for tpl in [3, 4, 5] {
            let (l, f) = make_layout(tpl, 10).unwrap();
            let t = Task::new(l, f).unwrap();
            let env = t.layout.env(0.0).unwrap();
            let fp = FiniteProduct::build(&t, &env).unwrap();
            let safe = max_safe_set(&fp, 0.0);
            let qc = qc_star(&fp).unwrap();
            for s in 0..fp.len() {
                for a in 0..NUM_ACTIONS {
                    assert_eq!(qc[s][a] > 0.0, safe[s][a]);
                }
            }
        }
    }

    #[test]
    fn fixed_points_are_stable() {
        let (l, f) = make_layout(3, 6).unwrap();
        let t = Task::new(l, f).unwrap();
        let env = t.layout.env(0.0).unwrap();
        let fp = FiniteProduct::build(&t, &env).unwrap();
        let qc = qc_star(&fp).unwrap();
        for s in 0..fp.len() {
            for a in 0..NUM_ACTIONS {
                let v = qc[fp.next[s][a]].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!((fp.cost[s].min(v) - qc[s][a]).abs() < 1e-9);
            }
        }
        let safe = max_safe_set(&fp, 0.0);
        let qr = qr_star_safe(&fp, &safe, 0.99).unwrap();
        for s in 0..fp.len() {
            for a in 0..NUM_ACTIONS {
                if let Some(v) = qr.q[s][a] {
                    let boot = if fp.terminal[s][a] { 0.0 } else { qr.value(fp.next[s][a]) };
                    assert!((fp.reward[s][a] + 0.99 * boot - v).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn accepting_stay_is_geometric() {
        let (t, env) = center_obstacle();
        let fp = FiniteProduct::build(&t, &env).unwrap();
        let qr = qr_star_safe(&fp, &max_safe_set(&fp, 0.0), 0.99).unwrap();
        let qf = *t.dba.accepting().iter().next().unwrap();
        let s = fp.state(env.index(Cell::new(2, 2)), qf);
        assert!((qr.q[s][4].unwrap() - 100.0).abs() < 1e-6);
        // trap states have no safe action
        assert!(!qr.excluded.is_empty());
        assert!(qr.excluded.iter().all(|&s| fp.trap[s] || fp.cost[s] <= 0.0));
    }

    #[test]
    fn zero_discount_is_immediate_reward() {
        let (l, f) = make_layout(3, 6).unwrap();
        let t = Task::new(l, f).unwrap();
        let env = t.layout.env(0.0).unwrap();
        let fp = FiniteProduct::build(&t, &env).unwrap();
        let qr = qr_star_safe(&fp, &max_safe_set(&fp, 0.0), 0.0).unwrap();
        for s in 0..fp.len() {
            for a in 0..NUM_ACTIONS {
                if let Some(v) = qr.q[s][a] {
                    assert_eq!(v, fp.reward[s][a]);
                }
            }
        }
    }

    #[test]
    fn constraint_lowers_value_and_safe_set_is_monotone() {
        let (l, f) = make_layout(3, 10).unwrap();
        let t = Task::new(l, f).unwrap();
        let env = t.layout.env(0.0).unwrap();
        let fp = FiniteProduct::build(&t, &env).unwrap();
        let safe = max_safe_set(&fp, 0.0);
        let constrained = qr_star_safe(&fp, &safe, 0.99).unwrap();
        let open = qr_star_safe(&fp, &unconstrained(&fp), 0.99).unwrap();
        for s in 0..fp.len() {
            assert!(open.value(s) >= constrained.value(s) - 1e-9);
        }
        // a stricter limit only shrinks the safe set and the values
        let strict = max_safe_set(&fp, 0.4);
        let tighter = qr_star_safe(&fp, &strict, 0.99).unwrap();
        for s in 0..fp.len() {
            for a in 0..NUM_ACTIONS {
                assert!(!strict[s][a] || safe[s][a]);
            }
            assert!(tighter.value(s) <= constrained.value(s) + 1e-9);
        }
    }

    #[test]
    fn obstacle_forces_a_detour() {
        // start below the obstacle, goal above it
        let t = custom(
            5,
            vec![AtomicProp::subgoal("g1", [2.5, 4.5], 0.3), AtomicProp::region("o1", [2.5, 2.5], 0.6)],
            "F g1 & G !o1",
            Cell::new(2, 0),
        );
        let env = t.layout.env(0.0).unwrap();
        let fp = FiniteProduct::build(&t, &env).unwrap();
        let constrained = qr_star_safe(&fp, &max_safe_set(&fp, 0.0), 0.99).unwrap();
        let free = custom(
            5,
            vec![AtomicProp::subgoal("g1", [2.5, 4.5], 0.3), AtomicProp::region("o1", [2.5, 2.5], 0.6)],
            "F g1",
            Cell::new(2, 0),
        );
        let ffp = FiniteProduct::build(&free, &env).unwrap();
        let open = qr_star_safe(&ffp, &max_safe_set(&ffp, 0.0), 0.99).unwrap();
        let s0 = fp.state(env.index(Cell::new(2, 0)), t.dba.initial());
        assert!(constrained.value(s0) < open.value(ffp.state(env.index(Cell::new(2, 0)), free.dba.initial())));
        let path = optimal_path(&fp, &constrained, s0, 20);
        assert!(path.iter().all(|&s| fp.split(s).0 != env.index(Cell::new(2, 2))));
        assert!(t.is_accepting(fp.split(*path.last().unwrap()).1));
    }
}
