//! Deterministic Büchi automata with predicate-guarded edges.

mod boolfn;
pub mod hoa;
mod translate;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stl::{Formula, Point, PropId, PropTable, StlError};

pub use boolfn::{to_global, to_local, BoolFn};
pub use translate::translate;

/// Validation enumerates every valuation, so the alphabet is capped.
pub const MAX_AUTOMATON_PROPS: usize = 16;

pub type StateId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutomatonError {
    #[error("unsupported formula: {0}")]
    UnsupportedFormula(String),
    #[error("automaton uses {0} propositions; at most {MAX_AUTOMATON_PROPS} are supported")]
    TooManyPropositions(usize),
    #[error("state {0} out of range")]
    StateOutOfRange(StateId),
    #[error("edge guard is not propositional: {0}")]
    GuardNotPropositional(#[from] StlError),
    #[error("guard mentions a proposition outside the automaton alphabet")]
    GuardOutsideAlphabet,
    #[error("no enabled edge from state {state} (valuation {valuation:#b})")]
    NoEnabledEdge { state: StateId, valuation: u32 },
    #[error("{count} enabled edges from state {state} (valuation {valuation:#b})")]
    MultipleEnabledEdges { state: StateId, valuation: u32, count: usize },
    #[error("malformed HOA at line {line}: {message}")]
    MalformedHoa { line: usize, message: String },
    #[error("unknown acceptance condition: {0}")]
    UnknownAcceptance(String),
    #[error("automaton is not a DBA: {0}")]
    NotDeterministic(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: StateId,
    pub guard: Formula,
    pub target: StateId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    None,
    One(StateId),
    Many(usize),
}

/// A Büchi automaton whose alphabet is the set of Boolean valuations of `ap`.
///
/// Construction only checks structure; [`Dba::validate`] checks determinism
/// and completeness, and [`Dba::step`] refuses a symbol with zero or several
/// enabled edges.
#[derive(Debug, Clone)]
pub struct Dba {
    ap: Vec<PropId>,
    num_states: usize,
    initial: StateId,
    accepting: BTreeSet<StateId>,
    edges: Vec<Edge>,
    // per state, per local valuation
    table: Vec<Vec<Slot>>,
}

impl PartialEq for Dba {
    fn eq(&self, other: &Self) -> bool {
        self.ap == other.ap
            && self.num_states == other.num_states
            && self.initial == other.initial
            && self.accepting == other.accepting
            && self.edges == other.edges
    }
}

impl Dba {
    pub fn new(
        ap: Vec<PropId>,
        num_states: usize,
        initial: StateId,
        accepting: impl IntoIterator<Item = StateId>,
        edges: Vec<Edge>,
    ) -> Result<Self, AutomatonError> {
        if ap.len() > MAX_AUTOMATON_PROPS {
            return Err(AutomatonError::TooManyPropositions(ap.len()));
        }
        if initial >= num_states {
            return Err(AutomatonError::StateOutOfRange(initial));
        }
        let accepting: BTreeSet<StateId> = accepting.into_iter().collect();
        if let Some(&q) = accepting.iter().find(|&&q| q >= num_states) {
            return Err(AutomatonError::StateOutOfRange(q));
        }
        for e in &edges {
            for q in [e.source, e.target] {
                if q >= num_states {
                    return Err(AutomatonError::StateOutOfRange(q));
                }
            }
            if !e.guard.is_propositional() {
                return Err(AutomatonError::GuardNotPropositional(StlError::TemporalOperator));
            }
            if e.guard.atoms().iter().any(|p| !ap.contains(p)) {
                return Err(AutomatonError::GuardOutsideAlphabet);
            }
        }
        let n_val = 1u32 << ap.len();
        let mut table = vec![vec![Slot::None; n_val as usize]; num_states];
        for e in &edges {
            for local in 0..n_val {
                if e.guard.holds(to_global(&ap, local))? {
                    let slot = &mut table[e.source][local as usize];
                    *slot = match *slot {
                        Slot::None => Slot::One(e.target),
                        Slot::One(_) => Slot::Many(2),
                        Slot::Many(k) => Slot::Many(k + 1),
                    };
                }
            }
        }
        Ok(Self { ap, num_states, initial, accepting, edges, table })
    }

    pub fn ap(&self) -> &[PropId] {
        &self.ap
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn accepting(&self) -> &BTreeSet<StateId> {
        &self.accepting
    }

    pub fn is_accepting(&self, q: StateId) -> bool {
        self.accepting.contains(&q)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn outgoing(&self, q: StateId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.source == q)
    }

    /// Successor under a global valuation bitmask.
    pub fn step_valuation(&self, q: StateId, valuation: u32) -> Result<StateId, AutomatonError> {
        let row = self.table.get(q).ok_or(AutomatonError::StateOutOfRange(q))?;
        let local = to_local(&self.ap, valuation);
        match row[local as usize] {
            Slot::One(t) => Ok(t),
            Slot::None => Err(AutomatonError::NoEnabledEdge { state: q, valuation }),
            Slot::Many(count) => Err(AutomatonError::MultipleEnabledEdges { state: q, valuation, count }),
        }
    }

    /// `δ(q, s)`: atoms are true iff their robustness at `s` is `>= 0`.
    pub fn step(&self, q: StateId, s: Point, props: &PropTable) -> Result<StateId, AutomatonError> {
        self.step_valuation(q, props.valuation(s))
    }

    /// Runs from the initial state over every point of `w`.
    pub fn run(&self, w: &[Point], props: &PropTable) -> Result<Run, AutomatonError> {
        let mut states = Vec::with_capacity(w.len() + 1);
        states.push(self.initial);
        let mut q = self.initial;
        for s in w {
            q = self.step(q, *s, props)?;
            states.push(q);
        }
        let accepting_visits = states.iter().filter(|q| self.is_accepting(**q)).count();
        Ok(Run { states, accepting_visits })
    }

    /// Exhaustive determinism and completeness check over all valuations of the alphabet.
    pub fn validate(&self, props: &PropTable) -> Result<ValidationReport, AutomatonError> {
        if self.ap.len() > MAX_AUTOMATON_PROPS {
            return Err(AutomatonError::TooManyPropositions(self.ap.len()));
        }
        let mut report = ValidationReport::default();
        for (q, row) in self.table.iter().enumerate() {
            for (local, slot) in row.iter().enumerate() {
                let witness = || self.describe_valuation(local as u32, props);
                match slot {
                    Slot::One(_) => {}
                    Slot::None => report.incomplete.push(Witness { state: q, valuation: witness() }),
                    Slot::Many(_) => report.nondeterministic.push(Witness { state: q, valuation: witness() }),
                }
            }
        }
        Ok(report)
    }

    fn describe_valuation(&self, local: u32, props: &PropTable) -> String {
        if self.ap.is_empty() {
            return "{}".into();
        }
        let lits: Vec<String> = self
            .ap
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let name = &props.get(*p).id;
                if local & (1 << i) != 0 {
                    name.clone()
                } else {
                    format!("!{name}")
                }
            })
            .collect();
        lits.join(" & ")
    }

    /// Local valuations for which `guard` is true.
    pub fn guard_valuations(&self, guard: &Formula) -> Vec<u32> {
        (0..(1u32 << self.ap.len()))
            .filter(|&m| guard.holds(to_global(&self.ap, m)).unwrap_or(false))
            .collect()
    }

    /// States reachable in one step through a satisfiable edge.
    pub fn successors(&self, q: StateId) -> BTreeSet<StateId> {
        self.outgoing(q)
            .filter(|e| !self.guard_valuations(&e.guard).is_empty())
            .map(|e| e.target)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub states: Vec<StateId>,
    pub accepting_visits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub state: StateId,
    pub valuation: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub nondeterministic: Vec<Witness>,
    pub incomplete: Vec<Witness>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.nondeterministic.is_empty() && self.incomplete.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_clean() {
            return write!(f, "deterministic and complete");
        }
        for w in &self.nondeterministic {
            writeln!(f, "nondeterministic at state {} on {}", w.state, w.valuation)?;
        }
        for w in &self.incomplete {
            writeln!(f, "incomplete at state {} on {}", w.state, w.valuation)?;
        }
        Ok(())
    }
}
