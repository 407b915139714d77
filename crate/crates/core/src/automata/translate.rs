//! Formula to DBA translation.
//!
//! The formula is put in negation normal form and split into a positive
//! Boolean combination of three objective kinds, each of which has an exact
//! deterministic automaton built by formula progression:
//!
//! * co-safety formulas (no `G`/release): accepted once the residual is `true`;
//! * safety formulas (no `F`/until): rejected once the residual is `false`;
//! * recurrence `G F ψ` with co-safe `ψ`: progress `F ψ`, flag the step it
//!   reaches `true`, restart.
//!
//! The objectives run in lock-step; conjunctions of recurrences use one
//! round-robin counter per disjunct of the acceptance DNF. States with empty
//! language are merged into a single trap.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use super::boolfn::{to_global, BoolFn};
use super::{AutomatonError, Dba, Edge, MAX_AUTOMATON_PROPS};
use crate::stl::{Formula, PropId};

const MAX_STATES: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Ltl {
    True,
    False,
    Lit(PropId, bool),
    And(Box<Ltl>, Box<Ltl>),
    Or(Box<Ltl>, Box<Ltl>),
    Next(Box<Ltl>),
    Eventually(Box<Ltl>),
    Always(Box<Ltl>),
    Until(Box<Ltl>, Box<Ltl>),
    Release(Box<Ltl>, Box<Ltl>),
}

use Ltl::*;

fn and(a: Ltl, b: Ltl) -> Ltl {
    match (a, b) {
        (False, _) | (_, False) => False,
        (True, x) | (x, True) => x,
        (a, b) if a == b => a,
        (a, b) => And(Box::new(a), Box::new(b)),
    }
}

fn or(a: Ltl, b: Ltl) -> Ltl {
    match (a, b) {
        (True, _) | (_, True) => True,
        (False, x) | (x, False) => x,
        (a, b) if a == b => a,
        (a, b) => Or(Box::new(a), Box::new(b)),
    }
}

fn next(a: Ltl) -> Ltl {
    match a {
        True | False => a,
        a => Next(Box::new(a)),
    }
}

fn eventually(a: Ltl) -> Ltl {
    match a {
        True | False => a,
        Eventually(_) => a,
        // F G F x = G F x
        Always(ref inner) if matches!(**inner, Eventually(_)) => a,
        a => Eventually(Box::new(a)),
    }
}

fn always(a: Ltl) -> Ltl {
    match a {
        True | False => a,
        Always(_) => a,
        // G F G x = F G x
        Eventually(ref inner) if matches!(**inner, Always(_)) => a,
        a => Always(Box::new(a)),
    }
}

fn until(a: Ltl, b: Ltl) -> Ltl {
    match (a, b) {
        (_, True) => True,
        (_, False) => False,
        (False, b) => b,
        (True, b) => eventually(b),
        (a, b) => Until(Box::new(a), Box::new(b)),
    }
}

fn release(a: Ltl, b: Ltl) -> Ltl {
    match (a, b) {
        (_, True) => True,
        (_, False) => False,
        (True, b) => b,
        (False, b) => always(b),
        (a, b) => Release(Box::new(a), Box::new(b)),
    }
}

fn nnf(f: &Formula, negate: bool) -> Ltl {
    match (f, negate) {
        (Formula::True, false) | (Formula::False, true) => True,
        (Formula::True, true) | (Formula::False, false) => False,
        (Formula::Atom(p), neg) => Lit(*p, !neg),
        (Formula::Not(a), neg) => nnf(a, !neg),
        (Formula::And(a, b), false) | (Formula::Or(a, b), true) => and(nnf(a, negate), nnf(b, negate)),
        (Formula::Or(a, b), false) | (Formula::And(a, b), true) => or(nnf(a, negate), nnf(b, negate)),
        (Formula::Next(a), neg) => next(nnf(a, neg)),
        (Formula::Eventually(a), false) | (Formula::Always(a), true) => eventually(nnf(a, negate)),
        (Formula::Always(a), false) | (Formula::Eventually(a), true) => always(nnf(a, negate)),
        (Formula::Until(a, b), false) => until(nnf(a, false), nnf(b, false)),
        (Formula::Until(a, b), true) => release(nnf(a, true), nnf(b, true)),
    }
}

fn is_cosafe(f: &Ltl) -> bool {
    match f {
        True | False | Lit(..) => true,
        And(a, b) | Or(a, b) | Until(a, b) => is_cosafe(a) && is_cosafe(b),
        Next(a) | Eventually(a) => is_cosafe(a),
        Always(_) | Release(..) => false,
    }
}

fn is_safe(f: &Ltl) -> bool {
    match f {
        True | False | Lit(..) => true,
        And(a, b) | Or(a, b) | Release(a, b) => is_safe(a) && is_safe(b),
        Next(a) | Always(a) => is_safe(a),
        Eventually(_) | Until(..) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Kind {
    CoSafe,
    Safe,
    Recur,
}

#[derive(Debug, Clone)]
enum Cls {
    Leaf(Kind, Ltl),
    And(Box<Cls>, Box<Cls>),
    Or(Box<Cls>, Box<Cls>),
}

impl Cls {
    fn all_recur(&self) -> bool {
        match self {
            Cls::Leaf(k, _) => *k == Kind::Recur,
            Cls::And(a, b) | Cls::Or(a, b) => a.all_recur() && b.all_recur(),
        }
    }

    fn map_next(self) -> Cls {
        match self {
            Cls::Leaf(Kind::Recur, f) => Cls::Leaf(Kind::Recur, f),
            Cls::Leaf(k, f) => Cls::Leaf(k, next(f)),
            Cls::And(a, b) => Cls::And(Box::new(a.map_next()), Box::new(b.map_next())),
            Cls::Or(a, b) => Cls::Or(Box::new(a.map_next()), Box::new(b.map_next())),
        }
    }
}

fn unsupported(f: &Ltl) -> String {
    format!("subformula {f:?} is outside the supported recurrence fragment")
}

fn classify(f: &Ltl) -> Result<Cls, String> {
    if is_cosafe(f) {
        return Ok(Cls::Leaf(Kind::CoSafe, f.clone()));
    }
    if is_safe(f) {
        return Ok(Cls::Leaf(Kind::Safe, f.clone()));
    }
    match f {
        And(a, b) => Ok(Cls::And(Box::new(classify(a)?), Box::new(classify(b)?))),
        Or(a, b) => Ok(Cls::Or(Box::new(classify(a)?), Box::new(classify(b)?))),
        Next(a) => Ok(classify(a)?.map_next()),
        Always(a) => match &**a {
            Eventually(b) if is_cosafe(b) => Ok(Cls::Leaf(Kind::Recur, (**b).clone())),
            And(x, y) => classify(&and(always((**x).clone()), always((**y).clone()))),
            Next(x) => classify(&next(always((**x).clone()))),
            Or(x, y) => {
                // G (x | y) = G x | y when y is prefix-independent
                let (cx, cy) = (classify(x), classify(y));
                match (cx, cy) {
                    (_, Ok(c)) if c.all_recur() => Ok(Cls::Or(Box::new(classify(&always((**x).clone()))?), Box::new(c))),
                    (Ok(c), _) if c.all_recur() => Ok(Cls::Or(Box::new(c), Box::new(classify(&always((**y).clone()))?))),
                    _ => Err(unsupported(f)),
                }
            }
            _ => match classify(a) {
                Ok(c) if c.all_recur() => Ok(c),
                _ => Err(unsupported(f)),
            },
        },
        Eventually(a) => match &**a {
            Or(x, y) => classify(&or(eventually((**x).clone()), eventually((**y).clone()))),
            Next(x) => classify(&next(eventually((**x).clone()))),
            And(x, y) => {
                // F (x & y) = F x & y when y is prefix-independent
                let (cx, cy) = (classify(x), classify(y));
                match (cx, cy) {
                    (_, Ok(c)) if c.all_recur() => Ok(Cls::And(Box::new(classify(&eventually((**x).clone()))?), Box::new(c))),
                    (Ok(c), _) if c.all_recur() => Ok(Cls::And(Box::new(c), Box::new(classify(&eventually((**y).clone()))?))),
                    _ => Err(unsupported(f)),
                }
            }
            _ => match classify(a) {
                Ok(c) if c.all_recur() => Ok(c),
                _ => Err(unsupported(f)),
            },
        },
        _ => Err(unsupported(f)),
    }
}

// ---------------------------------------------------------------------------
// Progression over interned closure formulas

type Clause = BTreeSet<u32>;
type Dnf = BTreeSet<Clause>;

#[derive(Default)]
struct Closure {
    nodes: Vec<Ltl>,
    index: HashMap<Ltl, u32>,
    prog_cache: HashMap<(u32, u32), Dnf>,
}

fn dnf_true() -> Dnf {
    BTreeSet::from([Clause::new()])
}

impl Closure {
    fn intern(&mut self, f: Ltl) -> u32 {
        if let Some(&id) = self.index.get(&f) {
            return id;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(f.clone());
        self.index.insert(f, id);
        id
    }

    /// Decomposes top-level `&`/`|` into clauses of interned non-Boolean formulas.
    fn to_dnf(&mut self, f: &Ltl) -> Dnf {
        match f {
            True => dnf_true(),
            False => Dnf::new(),
            And(a, b) => {
                let (da, db) = (self.to_dnf(a), self.to_dnf(b));
                self.product(&da, &db)
            }
            Or(a, b) => {
                let mut d = self.to_dnf(a);
                d.extend(self.to_dnf(b));
                self.absorb(d)
            }
            other => BTreeSet::from([BTreeSet::from([self.intern(other.clone())])]),
        }
    }

    fn product(&self, a: &Dnf, b: &Dnf) -> Dnf {
        let mut out = Dnf::new();
        for x in a {
            for y in b {
                out.insert(x.union(y).copied().collect());
            }
        }
        self.absorb(out)
    }

    fn contradictory(&self, c: &Clause) -> bool {
        c.iter().any(|&id| match self.nodes[id as usize] {
            Lit(p, true) => self.index.get(&Lit(p, false)).is_some_and(|n| c.contains(n)),
            _ => false,
        })
    }

    fn absorb(&self, d: Dnf) -> Dnf {
        let clauses: Vec<Clause> = d.into_iter().filter(|c| !self.contradictory(c)).collect();
        clauses
            .iter()
            .filter(|c| !clauses.iter().any(|o| o != *c && o.is_subset(c)))
            .cloned()
            .collect()
    }

    /// What must hold from the next position after reading `valuation` with `id` pending.
    fn prog(&mut self, id: u32, valuation: u32) -> Dnf {
        if let Some(d) = self.prog_cache.get(&(id, valuation)) {
            return d.clone();
        }
        let f = self.nodes[id as usize].clone();
        let d = match &f {
            True => dnf_true(),
            False => Dnf::new(),
            Lit(p, pol) => {
                if (valuation & p.bit() != 0) == *pol {
                    dnf_true()
                } else {
                    Dnf::new()
                }
            }
            And(..) | Or(..) => {
                let d = self.to_dnf(&f);
                self.prog_dnf(&d, valuation)
            }
            Next(a) => self.to_dnf(a),
            Eventually(a) => {
                let pa = self.prog_formula(a, valuation);
                let mut d = pa;
                d.insert(BTreeSet::from([id]));
                self.absorb(d)
            }
            Always(a) => {
                let pa = self.prog_formula(a, valuation);
                self.product(&pa, &BTreeSet::from([BTreeSet::from([id])]))
            }
            Until(a, b) => {
                let pa = self.prog_formula(a, valuation);
                let pb = self.prog_formula(b, valuation);
                let keep = self.product(&pa, &BTreeSet::from([BTreeSet::from([id])]));
                let mut d = pb;
                d.extend(keep);
                self.absorb(d)
            }
            Release(a, b) => {
                let pa = self.prog_formula(a, valuation);
                let pb = self.prog_formula(b, valuation);
                let mut alt = pa;
                alt.insert(BTreeSet::from([id]));
                let alt = self.absorb(alt);
                self.product(&pb, &alt)
            }
        };
        self.prog_cache.insert((id, valuation), d.clone());
        d
    }

    fn prog_formula(&mut self, f: &Ltl, valuation: u32) -> Dnf {
        let d = self.to_dnf(f);
        self.prog_dnf(&d, valuation)
    }

    fn prog_dnf(&mut self, d: &Dnf, valuation: u32) -> Dnf {
        let mut out = Dnf::new();
        for clause in d {
            let mut acc = dnf_true();
            for &id in clause {
                let p = self.prog(id, valuation);
                acc = self.product(&acc, &p);
                if acc.is_empty() {
                    break;
                }
            }
            out.extend(acc);
        }
        self.absorb(out)
    }
}

// ---------------------------------------------------------------------------
// Objectives and the lock-step product

struct Objective {
    kind: Kind,
    restart: Dnf,
    states: Vec<(Dnf, bool)>,
    index: HashMap<(Dnf, bool), u32>,
    cache: HashMap<(u32, u32), u32>,
}

impl Objective {
    fn intern(&mut self, s: (Dnf, bool)) -> u32 {
        if let Some(&id) = self.index.get(&s) {
            return id;
        }
        let id = self.states.len() as u32;
        self.states.push(s.clone());
        self.index.insert(s, id);
        id
    }

    fn done(&self, s: u32) -> bool {
        self.states[s as usize].0 == dnf_true()
    }

    fn dead(&self, s: u32) -> bool {
        self.states[s as usize].0.is_empty()
    }

    fn flagged(&self, s: u32) -> bool {
        self.states[s as usize].1
    }

    fn step(&mut self, closure: &mut Closure, s: u32, valuation: u32) -> u32 {
        if let Some(&t) = self.cache.get(&(s, valuation)) {
            return t;
        }
        let residual = self.states[s as usize].0.clone();
        let next = closure.prog_dnf(&residual, valuation);
        let t = if self.kind == Kind::Recur && next == dnf_true() {
            let restart = self.restart.clone();
            self.intern((restart, true))
        } else {
            self.intern((next, false))
        };
        self.cache.insert((s, valuation), t);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ProductState {
    objectives: Vec<u32>,
    counters: Vec<u8>,
}

/// One disjunct of the acceptance condition.
struct Disjunct {
    stable: Vec<usize>,
    recur: Vec<usize>,
}

fn acceptance_dnf(c: &Cls, leaves: &mut Vec<(Kind, Ltl)>) -> Vec<BTreeSet<usize>> {
    match c {
        Cls::Leaf(k, f) => {
            let idx = match leaves.iter().position(|(lk, lf)| lk == k && lf == f) {
                Some(i) => i,
                None => {
                    leaves.push((*k, f.clone()));
                    leaves.len() - 1
                }
            };
            vec![BTreeSet::from([idx])]
        }
        Cls::Or(a, b) => {
            let mut d = acceptance_dnf(a, leaves);
            d.extend(acceptance_dnf(b, leaves));
            d
        }
        Cls::And(a, b) => {
            let da = acceptance_dnf(a, leaves);
            let db = acceptance_dnf(b, leaves);
            let mut out = Vec::new();
            for x in &da {
                for y in &db {
                    out.push(x.union(y).copied().collect());
                }
            }
            out
        }
    }
}

/// Builds a deterministic, complete Büchi automaton for `f`.
///
/// Accepted formulas are positive Boolean combinations (after pushing
/// negations, `X`, `F`-over-`|` and `G`-over-`&` inward) of co-safety
/// formulas, safety formulas, and `G F ψ` with co-safe `ψ`. Anything else
/// yields [`AutomatonError::UnsupportedFormula`].
pub fn translate(f: &Formula) -> Result<Dba, AutomatonError> {
    let mut ap = f.atoms();
    ap.sort();
    if ap.len() > MAX_AUTOMATON_PROPS {
        return Err(AutomatonError::TooManyPropositions(ap.len()));
    }
    let normal = nnf(f, false);
    let cls = classify(&normal).map_err(AutomatonError::UnsupportedFormula)?;

    let mut leaves = Vec::new();
    let mut dnf = acceptance_dnf(&cls, &mut leaves);
    dnf.sort();
    dnf.dedup();
    let disjuncts: Vec<Disjunct> = dnf
        .iter()
        .map(|d| Disjunct {
            stable: d.iter().copied().filter(|&i| leaves[i].0 != Kind::Recur).collect(),
            recur: d.iter().copied().filter(|&i| leaves[i].0 == Kind::Recur).collect(),
        })
        .collect();
    if disjuncts.iter().any(|d| d.recur.len() > u8::MAX as usize) {
        return Err(AutomatonError::UnsupportedFormula("too many recurrence conjuncts".into()));
    }

    let mut closure = Closure::default();
    let mut objectives: Vec<Objective> = leaves
        .iter()
        .map(|(kind, f)| {
            let start = match kind {
                Kind::Recur => closure.to_dnf(&eventually(f.clone())),
                _ => closure.to_dnf(f),
            };
            let mut o = Objective {
                kind: *kind,
                restart: start.clone(),
                states: Vec::new(),
                index: HashMap::new(),
                cache: HashMap::new(),
            };
            o.intern((start, false));
            o
        })
        .collect();

    let advance = |objectives: &[Objective], obj: &[u32], prev: &[u8]| -> Vec<u8> {
        disjuncts
            .iter()
            .zip(prev)
            .map(|(d, &c)| {
                let m = d.recur.len() as u8;
                let mut c = if c == m { 0 } else { c };
                while c < m && objectives[d.recur[c as usize]].flagged(obj[d.recur[c as usize]]) {
                    c += 1;
                }
                c
            })
            .collect()
    };
    let accepting = |objectives: &[Objective], s: &ProductState| -> bool {
        disjuncts.iter().zip(&s.counters).any(|(d, &c)| {
            c as usize == d.recur.len()
                && d.stable.iter().all(|&i| {
                    let o = &objectives[i];
                    match o.kind {
                        Kind::CoSafe => o.done(s.objectives[i]),
                        _ => !o.dead(s.objectives[i]),
                    }
                })
        })
    };

    let init_obj = vec![0u32; objectives.len()];
    let init_counters = advance(&objectives, &init_obj, &vec![0; disjuncts.len()]);
    let init = ProductState { objectives: init_obj, counters: init_counters };

    let n_val = 1u32 << ap.len();
    let mut states = vec![init.clone()];
    let mut index = HashMap::from([(init, 0usize)]);
    let mut trans: Vec<Vec<usize>> = Vec::new();
    let mut i = 0;
    while i < states.len() {
        let cur = states[i].clone();
        let mut row = Vec::with_capacity(n_val as usize);
        for local in 0..n_val {
            let global = to_global(&ap, local);
            let obj: Vec<u32> = cur
                .objectives
                .iter()
                .enumerate()
                .map(|(k, &s)| objectives[k].step(&mut closure, s, global))
                .collect();
            let counters = advance(&objectives, &obj, &cur.counters);
            let next = ProductState { objectives: obj, counters };
            let id = match index.get(&next) {
                Some(&id) => id,
                None => {
                    if states.len() >= MAX_STATES {
                        return Err(AutomatonError::UnsupportedFormula(format!(
                            "automaton exceeds {MAX_STATES} states"
                        )));
                    }
                    states.push(next.clone());
                    index.insert(next, states.len() - 1);
                    states.len() - 1
                }
            };
            row.push(id);
        }
        trans.push(row);
        i += 1;
    }
    let acc: Vec<bool> = states.iter().map(|s| accepting(&objectives, s)).collect();

    let live = live_states(&trans, &acc);
    build_quotient(ap, &trans, &acc, &live)
}

/// States from which some accepting state on a cycle is reachable.
fn live_states(trans: &[Vec<usize>], acc: &[bool]) -> Vec<bool> {
    let n = trans.len();
    let reach_from = |start: usize| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = trans[start].iter().copied().collect();
        while let Some(q) = queue.pop_front() {
            if !seen[q] {
                seen[q] = true;
                queue.extend(trans[q].iter().copied());
            }
        }
        seen
    };
    let good: Vec<usize> = (0..n).filter(|&q| acc[q] && reach_from(q)[q]).collect();
    let mut preds = vec![Vec::new(); n];
    for (q, row) in trans.iter().enumerate() {
        for &t in row {
            preds[t].push(q);
        }
    }
    let mut live = vec![false; n];
    let mut queue: VecDeque<usize> = good.into_iter().collect();
    while let Some(q) = queue.pop_front() {
        if !live[q] {
            live[q] = true;
            queue.extend(preds[q].iter().copied());
        }
    }
    live
}

fn build_quotient(ap: Vec<PropId>, trans: &[Vec<usize>], acc: &[bool], live: &[bool]) -> Result<Dba, AutomatonError> {
    const TRAP: usize = usize::MAX;
    let class = |q: usize| if live[q] { q } else { TRAP };
    // renumber in BFS order from the initial state
    let mut order: Vec<usize> = Vec::new();
    let mut new_id: HashMap<usize, usize> = HashMap::new();
    let mut queue = VecDeque::from([class(0)]);
    while let Some(c) = queue.pop_front() {
        if new_id.contains_key(&c) {
            continue;
        }
        new_id.insert(c, order.len());
        order.push(c);
        if c != TRAP {
            queue.extend(trans[c].iter().map(|&t| class(t)));
        }
    }
    let n_val = 1u32 << ap.len();
    let mut edges = Vec::new();
    let mut accepting = Vec::new();
    for (q_new, &c) in order.iter().enumerate() {
        if c == TRAP {
            edges.push(Edge { source: q_new, guard: Formula::True, target: q_new });
            continue;
        }
        if acc[c] {
            accepting.push(q_new);
        }
        let mut by_target: BTreeMap<usize, BoolFn> = BTreeMap::new();
        for local in 0..n_val {
            let t = new_id[&class(trans[c][local as usize])];
            by_target
                .entry(t)
                .or_insert_with(|| BoolFn::constant(ap.clone(), false))
                .set(local, true);
        }
        for (t, fun) in by_target {
            edges.push(Edge { source: q_new, guard: fun.to_formula(|_| true), target: t });
        }
    }
    Dba::new(ap, order.len(), 0, accepting, edges)
}
