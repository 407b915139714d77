//! Tabular reward and safety critics with lazily interpolated target tables.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::automata::StateId;
use crate::grid::NUM_ACTIONS;
use crate::product::{Goal, GoalList};

pub type Row = [f64; NUM_ACTIONS];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CostMode {
    /// Minimum-safety critic; actions are safe when `Q^c > limit`.
    Min,
    /// Discounted sum of rectified violations; actions are safe when `Q^c < limit`.
    Sum,
}

/// Argmax of `qr` over actions with `qc` on the safe side of `limit`. With no safe
/// action, the safest one. Ties go to the lowest index.
pub fn constrained_greedy(qr: &[f64], qc: &[f64], limit: f64, mode: CostMode) -> usize {
    let safe = |c: f64| match mode {
        CostMode::Min => c > limit,
        CostMode::Sum => c < limit,
    };
    let mut best: Option<usize> = None;
    for a in 0..qr.len() {
        if safe(qc[a]) && best.is_none_or(|b| qr[a] > qr[b]) {
            best = Some(a);
        }
    }
    best.unwrap_or_else(|| {
        let mut b = 0;
        for a in 1..qc.len() {
            let better = match mode {
                CostMode::Min => qc[a] > qc[b],
                CostMode::Sum => qc[a] < qc[b],
            };
            if better {
                b = a;
            }
        }
        b
    })
}

/// Critic table key; `goals` is an interned goal-list code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Key {
    pub cell: u32,
    pub q: u32,
    pub goals: u32,
}

type GoalBits = Vec<Option<[u64; 3]>>;

fn goal_bits(list: &[Option<Goal>]) -> GoalBits {
    list.iter().map(|g| g.map(|g| [g.center[0].to_bits(), g.center[1].to_bits(), g.radius.to_bits()])).collect()
}

/// Interning table for goal lists.
#[derive(Debug, Clone, Default)]
pub struct GoalCodes {
    codes: HashMap<GoalBits, u32>,
    lists: Vec<GoalList>,
}

impl GoalCodes {
    pub fn intern(&mut self, list: &[Option<Goal>]) -> u32 {
        let bits = goal_bits(list);
        if let Some(c) = self.codes.get(&bits) {
            return *c;
        }
        let c = self.lists.len() as u32;
        self.codes.insert(bits, c);
        self.lists.push(list.to_vec());
        c
    }

    pub fn get(&self, list: &[Option<Goal>]) -> Option<u32> {
        self.codes.get(&goal_bits(list)).copied()
    }

    pub fn list(&self, code: u32) -> &GoalList {
        &self.lists[code as usize]
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

/// `Q^r`, `Q^c` and their targets. Targets follow `θ̄ ← (1-λ)θ̄ + λθ` once per
/// update call; entries are brought up to date only when touched.
#[derive(Debug, Clone)]
pub struct Critics {
    pub goal_codes: GoalCodes,
    index: HashMap<Key, usize>,
    keys: Vec<Key>,
    qr: Vec<Row>,
    qc: Vec<Row>,
    qr_bar: Vec<Row>,
    qc_bar: Vec<Row>,
    stamp: Vec<[u64; NUM_ACTIONS]>,
    visits: Vec<[u64; NUM_ACTIONS]>,
    pub qr_init: f64,
    pub qc_init: f64,
    pub lambda: f64,
    updates: u64,
}

impl Critics {
    pub fn new(qr_init: f64, qc_init: f64, lambda: f64) -> Self {
        Self {
            goal_codes: GoalCodes::default(),
            index: HashMap::new(),
            keys: Vec::new(),
            qr: Vec::new(),
            qc: Vec::new(),
            qr_bar: Vec::new(),
            qc_bar: Vec::new(),
            stamp: Vec::new(),
            visits: Vec::new(),
            qr_init,
            qc_init,
            lambda,
            updates: 0,
        }
    }

    pub fn key(&mut self, cell: usize, q: StateId, goals: &[Option<Goal>]) -> Key {
        Key { cell: cell as u32, q: q as u32, goals: self.goal_codes.intern(goals) }
    }

    /// Row index for `key`, created at the initial values if absent.
    pub fn row(&mut self, key: Key) -> usize {
        if let Some(r) = self.index.get(&key) {
            return *r;
        }
        let r = self.keys.len();
        self.index.insert(key, r);
        self.keys.push(key);
        self.qr.push([self.qr_init; NUM_ACTIONS]);
        self.qc.push([self.qc_init; NUM_ACTIONS]);
        self.qr_bar.push([self.qr_init; NUM_ACTIONS]);
        self.qc_bar.push([self.qc_init; NUM_ACTIONS]);
        self.stamp.push([self.updates; NUM_ACTIONS]);
        self.visits.push([0; NUM_ACTIONS]);
        r
    }

    pub fn find(&self, key: &Key) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn qr(&self, row: usize) -> &Row {
        &self.qr[row]
    }

    pub fn qc(&self, row: usize) -> &Row {
        &self.qc[row]
    }

    pub fn visits(&self, row: usize) -> &[u64; NUM_ACTIONS] {
        &self.visits[row]
    }

    /// Main-table values for a key, falling back to the initial values.
    pub fn values(&self, key: &Key) -> (Row, Row) {
        match self.find(key) {
            Some(r) => (self.qr[r], self.qc[r]),
            None => ([self.qr_init; NUM_ACTIONS], [self.qc_init; NUM_ACTIONS]),
        }
    }

    fn decay(&self, row: usize, a: usize) -> f64 {
        let k = self.updates - self.stamp[row][a];
        if k == 0 {
            1.0
        } else {
            (1.0 - self.lambda).powi(k.min(i32::MAX as u64) as i32)
        }
    }

    /// Current target-table values `(Q^r̄, Q^c̄)` at `(row, a)`.
    pub fn target(&self, row: usize, a: usize) -> (f64, f64) {
        let w = self.decay(row, a);
        let r = self.qr[row][a] + w * (self.qr_bar[row][a] - self.qr[row][a]);
        let c = self.qc[row][a] + w * (self.qc_bar[row][a] - self.qc[row][a]);
        (r, c)
    }

    fn sync(&mut self, row: usize, a: usize) {
        let (r, c) = self.target(row, a);
        self.qr_bar[row][a] = r;
        self.qc_bar[row][a] = c;
        self.stamp[row][a] = self.updates;
    }

    /// Moves `(row, a)` toward the given targets; returns the visit count after the update.
    pub fn update(&mut self, row: usize, a: usize, yr: f64, yc: f64, step: impl Fn(u64) -> (f64, f64), clamp: Option<f64>) -> u64 {
        self.sync(row, a);
        self.visits[row][a] += 1;
        let n = self.visits[row][a];
        let (ar, ac) = step(n);
        self.qr[row][a] += ar * (yr - self.qr[row][a]);
        let mut c = self.qc[row][a] + ac * (yc - self.qc[row][a]);
        if let Some(m) = clamp {
            c = c.clamp(-m, m);
        }
        self.qc[row][a] = c;
        n
    }

    /// Advances every target table by one interpolation step.
    pub fn advance_targets(&mut self) {
        self.updates += 1;
    }

    pub fn snapshot(&self) -> Vec<(Key, Row, Row, Row, Row, [u64; NUM_ACTIONS])> {
        (0..self.len())
            .map(|r| {
                let mut rb = [0.0; NUM_ACTIONS];
                let mut cb = [0.0; NUM_ACTIONS];
                for a in 0..NUM_ACTIONS {
                    (rb[a], cb[a]) = self.target(r, a);
                }
                (self.keys[r], self.qr[r], self.qc[r], rb, cb, self.visits[r])
            })
            .collect()
    }

    /// Rebuilds critics from a snapshot; target tables are taken as current.
    pub fn restore(
        qr_init: f64,
        qc_init: f64,
        lambda: f64,
        goal_lists: &[GoalList],
        rows: Vec<(Key, Row, Row, Row, Row, [u64; NUM_ACTIONS])>,
    ) -> Self {
        let mut c = Self::new(qr_init, qc_init, lambda);
        for l in goal_lists {
            c.goal_codes.intern(l);
        }
        for (key, qr, qc, rb, cb, visits) in rows {
            let r = c.row(key);
            c.qr[r] = qr;
            c.qc[r] = qc;
            c.qr_bar[r] = rb;
            c.qc_bar[r] = cb;
            c.visits[r] = visits;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_examples() {
        assert_eq!(constrained_greedy(&[0.1, 0.9], &[0.2, -0.3], 0.0, CostMode::Min), 0);
        assert_eq!(constrained_greedy(&[0.0, 0.0], &[-0.2, -0.1], 0.0, CostMode::Min), 1);
        assert_eq!(constrained_greedy(&[0.5, 0.5], &[0.1, 0.1], 0.0, CostMode::Min), 0);
        assert_eq!(constrained_greedy(&[1.0, 2.0], &[5.0, 45.0], 40.0, CostMode::Sum), 0);
        assert_eq!(constrained_greedy(&[1.0, 2.0], &[50.0, 45.0], 40.0, CostMode::Sum), 1);
        // boundary: qc == limit is not safe
        assert_eq!(constrained_greedy(&[0.0, 1.0], &[0.5, 0.0], 0.0, CostMode::Min), 0);
    }

    #[test]
    fn step_toward_target() {
        let mut c = Critics::new(0.0, 1.0, 0.005);
        let k = c.key(0, 0, &[None]);
        let r = c.row(k);
        c.update(r, 2, 1.0, 1.0, |_| (0.5, 0.5), Some(1.0));
        assert_eq!(c.qr(r)[2], 0.5);
        c.update(r, 2, 0.0, -3.0, |_| (0.0, 1.0), Some(1.0));
        assert_eq!(c.qc(r)[2], -1.0);
    }

    #[test]
    fn full_interpolation_copies_main() {
        let mut c = Critics::new(0.0, 1.0, 1.0);
        let r = {
            let k = c.key(3, 1, &[None]);
            c.row(k)
        };
        c.update(r, 0, 0.7, -0.25, |_| (1.0, 1.0), None);
        assert_eq!(c.target(r, 0), (0.0, 1.0));
        c.advance_targets();
        assert_eq!(c.target(r, 0), (c.qr(r)[0], c.qc(r)[0]));
        assert_eq!(c.target(r, 0), (0.7, -0.25));
    }

    #[test]
    fn lazy_targets_match_eager() {
        let lambda = 0.1;
        let mut c = Critics::new(0.0, 1.0, lambda);
        let r = {
            let k = c.key(0, 0, &[None]);
            c.row(k)
        };
        let (mut main, mut bar) = (0.0f64, 0.0f64);
        let ys = [1.0, 0.0, 0.0, 2.0, 0.5, 0.0, 0.0, 0.0, 3.0];
        for (i, y) in ys.iter().enumerate() {
            if *y != 0.0 {
                c.update(r, 1, *y, 0.0, |_| (0.3, 0.0), None);
                main += 0.3 * (y - main);
            }
            c.advance_targets();
            bar = (1.0 - lambda) * bar + lambda * main;
            assert!((c.target(r, 1).0 - bar).abs() < 1e-12, "step {i}");
        }
    }

    #[test]
    fn goal_codes_distinguish_radius() {
        let mut g = GoalCodes::default();
        let a = g.intern(&[Some(Goal { center: [1.5, 1.5], radius: 1.0 })]);
        let b = g.intern(&[Some(Goal { center: [1.5, 1.5], radius: 0.9 })]);
        let c = g.intern(&[Some(Goal { center: [1.5, 1.5], radius: 1.0 })]);
        assert_ne!(a, b);
        assert_eq!(a, c);
        assert_eq!(g.len(), 2);
    }
}
