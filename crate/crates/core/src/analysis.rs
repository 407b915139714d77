//! Safety, liveness and subgoal structure extracted from a DBA.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::automata::{BoolFn, Dba, StateId};
use crate::stl::{Formula, PropId, PropTable};

/// Per-state task structure. `subgoals[q]` has the same length for every `q`;
/// `None` is the null-goal padding.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStructure {
    pub unsafe_states: BTreeSet<StateId>,
    pub safety: Vec<Formula>,
    pub liveness: Vec<Formula>,
    pub subgoals: Vec<Vec<Option<PropId>>>,
    /// True when the accepting set can be left without failing (loop tasks).
    pub recurrent: bool,
}

/// States from which no accepting state is graph-reachable.
pub fn unsafe_sinks(a: &Dba) -> BTreeSet<StateId> {
    let n = a.num_states();
    let succ: Vec<BTreeSet<StateId>> = (0..n).map(|q| a.successors(q)).collect();
    let mut live: BTreeSet<StateId> = a.accepting().clone();
    loop {
        let before = live.len();
        for q in 0..n {
            if !live.contains(&q) && succ[q].iter().any(|t| live.contains(t)) {
                live.insert(q);
            }
        }
        if live.len() == before {
            break;
        }
    }
    (0..n).filter(|q| !live.contains(q)).collect()
}

/// Valuations of the automaton alphabet that no single point can produce are
/// don't-cares when simplifying per-state conditions.
fn care(a: &Dba, props: &PropTable) -> impl Fn(u32) -> bool {
    let ap = a.ap().to_vec();
    let props = props.clone();
    move |m| props.realizable(&ap, m)
}

fn successor_fn(a: &Dba, q: StateId, keep: impl Fn(StateId) -> bool) -> BoolFn {
    BoolFn::from_fn(a.ap().to_vec(), |m| {
        let global = crate::automata::to_global(a.ap(), m);
        a.step_valuation(q, global).map(&keep).unwrap_or(false)
    })
}

/// `S(q)`: holds exactly on the valuations that keep `q` out of `unsafe`.
pub fn safety_map(a: &Dba, unsafe_states: &BTreeSet<StateId>, props: &PropTable) -> Vec<Formula> {
    (0..a.num_states())
        .map(|q| {
            if unsafe_states.contains(&q) {
                return Formula::False;
            }
            let enters = a
                .outgoing(q)
                .any(|e| unsafe_states.contains(&e.target) && !a.guard_valuations(&e.guard).is_empty());
            if !enters {
                return Formula::True;
            }
            successor_fn(a, q, |t| !unsafe_states.contains(&t)).to_formula(care(a, props))
        })
        .collect()
}

/// `O(q)`: the valuations that move `q` to a different, non-unsafe state.
pub fn liveness_map(a: &Dba, unsafe_states: &BTreeSet<StateId>, props: &PropTable) -> Vec<Formula> {
    (0..a.num_states())
        .map(|q| {
            if unsafe_states.contains(&q) {
                return Formula::False;
            }
            successor_fn(a, q, |t| t != q && !unsafe_states.contains(&t)).to_formula(care(a, props))
        })
        .collect()
}

/// `G(q)`: subgoal atoms of `O(q)`, ordered by proposition name and padded to a common width (at least 1).
pub fn subgoal_map(liveness: &[Formula], props: &PropTable) -> Vec<Vec<Option<PropId>>> {
    let mut lists: Vec<Vec<Option<PropId>>> = liveness
        .iter()
        .map(|o| {
            let mut ids: Vec<PropId> = o.atoms().into_iter().filter(|p| props.get(*p).is_subgoal()).collect();
            ids.sort_by(|x, y| props.get(*x).id.cmp(&props.get(*y).id));
            ids.dedup();
            ids.into_iter().map(Some).collect()
        })
        .collect();
    let width = lists.iter().map(Vec::len).max().unwrap_or(0).max(1);
    for l in &mut lists {
        l.resize(width, None);
    }
    lists
}

/// Some accepting state can reach a non-accepting, non-unsafe state.
fn is_recurrent(a: &Dba, unsafe_states: &BTreeSet<StateId>) -> bool {
    let mut seen: BTreeSet<StateId> = a.accepting().clone();
    let mut stack: Vec<StateId> = seen.iter().copied().collect();
    while let Some(q) = stack.pop() {
        for t in a.successors(q) {
            if !a.is_accepting(t) && !unsafe_states.contains(&t) {
                return true;
            }
            if seen.insert(t) {
                stack.push(t);
            }
        }
    }
    false
}

impl TaskStructure {
    pub fn analyze(a: &Dba, props: &PropTable) -> Self {
        let unsafe_states = unsafe_sinks(a);
        let safety = safety_map(a, &unsafe_states, props);
        let liveness = liveness_map(a, &unsafe_states, props);
        let subgoals = subgoal_map(&liveness, props);
        let recurrent = is_recurrent(a, &unsafe_states);
        Self { unsafe_states, safety, liveness, subgoals, recurrent }
    }

    pub fn width(&self) -> usize {
        self.subgoals.first().map_or(1, Vec::len)
    }

    pub fn is_unsafe(&self, q: StateId) -> bool {
        self.unsafe_states.contains(&q)
    }

    pub fn to_json(&self, a: &Dba, props: &PropTable) -> serde_json::Value {
        #[derive(Serialize)]
        struct Row {
            state: StateId,
            accepting: bool,
            #[serde(rename = "unsafe")]
            is_unsafe: bool,
            safety: String,
            liveness: String,
            subgoals: Vec<Option<String>>,
        }
        let rows: Vec<Row> = (0..a.num_states())
            .map(|q| Row {
                state: q,
                accepting: a.is_accepting(q),
                is_unsafe: self.is_unsafe(q),
                safety: self.safety[q].display(props).to_string(),
                liveness: self.liveness[q].display(props).to_string(),
                subgoals: self.subgoals[q].iter().map(|g| g.map(|p| props.get(p).id.clone())).collect(),
            })
            .collect();
        serde_json::json!({
            "initial": a.initial(),
            "recurrent": self.recurrent,
            "width": self.width(),
            "states": rows,
        })
    }

    pub fn table(&self, a: &Dba, props: &PropTable) -> String {
        let mut rows = vec![["q".to_string(), "flags".into(), "S(q)".into(), "O(q)".into(), "G(q)".into()]];
        for q in 0..a.num_states() {
            let mut flags = String::new();
            if q == a.initial() {
                flags.push('I');
            }
            if a.is_accepting(q) {
                flags.push('F');
            }
            if self.is_unsafe(q) {
                flags.push('U');
            }
            let goals: Vec<String> = self.subgoals[q]
                .iter()
                .map(|g| g.map_or("-".to_string(), |p| props.get(p).id.clone()))
                .collect();
            rows.push([
                q.to_string(),
                flags,
                self.safety[q].display(props).to_string(),
                self.liveness[q].display(props).to_string(),
                format!("[{}]", goals.join(", ")),
            ]);
        }
        let widths: Vec<usize> = (0..5).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{translate, Edge};
    use crate::stl::{parse_formula, AtomicProp};

    fn props() -> PropTable {
        PropTable::new(vec![
            AtomicProp::subgoal("g1", [8.5, 8.5], 1.0),
            AtomicProp::subgoal("g2", [1.5, 1.5], 1.0),
            AtomicProp::region("o1", [5.0, 5.0], 1.5),
        ])
        .unwrap()
    }

    fn analyze(text: &str) -> (Dba, TaskStructure, PropTable) {
        let p = props();
        let a = translate(&parse_formula(text, &p).unwrap()).unwrap();
        let ts = TaskStructure::analyze(&a, &p);
        (a, ts, p)
    }

    fn show(f: &Formula, p: &PropTable) -> String {
        f.display(p).to_string()
    }

    #[test]
    fn task3_trap_and_safety() {
        let (a, ts, p) = analyze("F g1 & G !o1");
        assert_eq!(ts.unsafe_states.len(), 1);
        let trap = *ts.unsafe_states.iter().next().unwrap();
        assert_eq!(a.successors(trap), BTreeSet::from([trap]));
        assert_eq!(show(&ts.safety[a.initial()], &p), "!o1");
        assert_eq!(ts.safety[trap], Formula::False);
        assert_eq!(show(&ts.liveness[a.initial()], &p), "g1");
    }

    #[test]
    fn task1_has_no_trap() {
        let (a, ts, p) = analyze("F (g1 & X F g2)");
        assert!(ts.unsafe_states.is_empty());
        assert!(ts.safety.iter().all(|s| *s == Formula::True));
        assert_eq!(show(&ts.liveness[a.initial()], &p), "g1");
        assert_eq!(ts.subgoals[a.initial()], vec![p.lookup("g1")]);
        assert!(!ts.recurrent);
    }

    #[test]
    fn branching_task() {
        let (a, ts, p) = analyze("F g1 & F g2");
        assert_eq!(show(&ts.liveness[a.initial()], &p), "g1 | g2");
        assert_eq!(ts.subgoals[a.initial()], vec![p.lookup("g1"), p.lookup("g2")]);
        let acc = *a.accepting().iter().next().unwrap();
        assert_eq!(ts.liveness[acc], Formula::False);
        assert_eq!(ts.subgoals[acc], vec![None, None]);
    }

    #[test]
    fn disappearing_constraint() {
        let (a, ts, p) = analyze("!o1 U g1 & X F g2");
        assert_eq!(show(&ts.safety[a.initial()], &p), "!o1");
        let after_g1 = a.step(a.initial(), [8.5, 8.5], &p).unwrap();
        assert_eq!(ts.safety[after_g1], Formula::True);
    }

    #[test]
    fn loop_task_is_recurrent() {
        let (_, ts, _) = analyze("G F (g1 & X F g2) & G !o1");
        assert!(ts.recurrent);
        assert_eq!(ts.unsafe_states.len(), 1);
    }

    #[test]
    fn hand_built_cycle_without_exit() {
        // 0 -> {1 | 2}, 1 <-> 2 forever, 3 accepting reached only from 0
        let p = props();
        let g1 = p.lookup("g1").unwrap();
        let a = Dba::new(
            vec![g1],
            4,
            0,
            [3],
            vec![
                Edge { source: 0, guard: Formula::atom(g1), target: 3 },
                Edge { source: 0, guard: Formula::not(Formula::atom(g1)), target: 1 },
                Edge { source: 1, guard: Formula::True, target: 2 },
                Edge { source: 2, guard: Formula::True, target: 1 },
                Edge { source: 3, guard: Formula::True, target: 3 },
            ],
        )
        .unwrap();
        assert_eq!(unsafe_sinks(&a), BTreeSet::from([1, 2]));
    }

    #[test]
    fn negated_guard_soundness_on_grid() {
        let p = props();
        for text in ["F g1 & G !o1", "!o1 U g1 & X F g2", "G F (g1 & X F g2) & G !o1"] {
            let a = translate(&parse_formula(text, &p).unwrap()).unwrap();
            let ts = TaskStructure::analyze(&a, &p);
            let rob = crate::stl::Robustness::new(&p);
            for q in (0..a.num_states()).filter(|q| !ts.is_unsafe(*q)) {
                for i in 0..100 {
                    let s = [(i % 10) as f64 + 0.5, (i / 10) as f64 + 0.5];
                    if rob.state(&ts.safety[q], s).unwrap() > 0.0 {
                        assert!(!ts.is_unsafe(a.step(q, s, &p).unwrap()), "{text} q{q} {s:?}");
                    }
                }
            }
        }
    }
}
