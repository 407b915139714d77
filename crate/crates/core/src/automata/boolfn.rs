//! Truth-table Boolean functions over a small ordered variable set, with
//! Quine-McCluskey minimization back into a [`Formula`].

use std::collections::BTreeSet;

use crate::stl::{Formula, PropId};

/// A Boolean function over `vars`; bit `i` of a local valuation is `vars[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolFn {
    vars: Vec<PropId>,
    table: Vec<bool>,
}

/// Cube: `mask` bits are fixed to the corresponding bits of `value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Cube {
    mask: u32,
    value: u32,
}

impl Cube {
    fn covers(&self, m: u32) -> bool {
        m & self.mask == self.value
    }
}

impl BoolFn {
    pub fn constant(vars: Vec<PropId>, value: bool) -> Self {
        let n = 1usize << vars.len();
        Self { vars, table: vec![value; n] }
    }

    pub fn from_fn(vars: Vec<PropId>, f: impl Fn(u32) -> bool) -> Self {
        let n = 1u32 << vars.len();
        let table = (0..n).map(f).collect();
        Self { vars, table }
    }

    pub fn vars(&self) -> &[PropId] {
        &self.vars
    }

    pub fn get(&self, local: u32) -> bool {
        self.table[local as usize]
    }

    pub fn set(&mut self, local: u32, value: bool) {
        self.table[local as usize] = value;
    }

    /// Maps a local valuation to the global bitmask over the prop table.
    pub fn to_global(&self, local: u32) -> u32 {
        to_global(&self.vars, local)
    }

    /// Minimal-ish DNF agreeing with `self` on every valuation where `care` holds.
    pub fn to_formula(&self, care: impl Fn(u32) -> bool) -> Formula {
        let k = self.vars.len();
        let n = 1u32 << k;
        let on: Vec<u32> = (0..n).filter(|&m| care(m) && self.get(m)).collect();
        let dc: Vec<u32> = (0..n).filter(|&m| !care(m)).collect();
        if on.is_empty() {
            return Formula::False;
        }
        if on.len() + dc.len() == n as usize {
            return Formula::True;
        }
        let full = if k == 32 { u32::MAX } else { (1u32 << k) - 1 };
        let primes = prime_implicants(on.iter().chain(&dc).copied(), full);
        let cover = select_cover(&primes, &on);
        let mut terms: Vec<Formula> = cover.iter().map(|c| self.cube_formula(*c)).collect();
        terms.sort();
        Formula::disjunction(terms)
    }

    fn cube_formula(&self, c: Cube) -> Formula {
        let lits = self.vars.iter().enumerate().filter(|(i, _)| c.mask & (1 << i) != 0).map(|(i, p)| {
            if c.value & (1 << i) != 0 {
                Formula::Atom(*p)
            } else {
                Formula::not(Formula::Atom(*p))
            }
        });
        Formula::conjunction(lits)
    }
}

pub fn to_global(vars: &[PropId], local: u32) -> u32 {
    vars.iter().enumerate().filter(|(i, _)| local & (1 << i) != 0).fold(0, |acc, (_, p)| acc | p.bit())
}

pub fn to_local(vars: &[PropId], global: u32) -> u32 {
    vars.iter().enumerate().filter(|(_, p)| global & p.bit() != 0).fold(0, |acc, (i, _)| acc | (1 << i))
}

fn prime_implicants(minterms: impl Iterator<Item = u32>, full: u32) -> Vec<Cube> {
    let mut current: BTreeSet<Cube> = minterms.map(|m| Cube { mask: full, value: m }).collect();
    let mut primes = BTreeSet::new();
    while !current.is_empty() {
        let items: Vec<Cube> = current.iter().copied().collect();
        let mut merged = vec![false; items.len()];
        let mut next = BTreeSet::new();
        for i in 0..items.len() {
            for j in (i + 1)..items.len() {
                let (a, b) = (items[i], items[j]);
                if a.mask != b.mask {
                    continue;
                }
                let diff = a.value ^ b.value;
                if diff.count_ones() == 1 {
                    next.insert(Cube { mask: a.mask & !diff, value: a.value & !diff });
                    merged[i] = true;
                    merged[j] = true;
                }
            }
        }
        for (i, c) in items.iter().enumerate() {
            if !merged[i] {
                primes.insert(*c);
            }
        }
        current = next;
    }
    primes.into_iter().collect()
}

/// Essential primes first, then greedy by number of newly covered minterms
/// (ties: fewer literals, then cube order) so output is deterministic.
fn select_cover(primes: &[Cube], on: &[u32]) -> Vec<Cube> {
    let mut chosen: Vec<Cube> = Vec::new();
    let mut uncovered: BTreeSet<u32> = on.iter().copied().collect();
    for &m in on {
        let covering: Vec<&Cube> = primes.iter().filter(|c| c.covers(m)).collect();
        if covering.len() == 1 && !chosen.contains(covering[0]) {
            chosen.push(*covering[0]);
        }
    }
    for c in &chosen {
        uncovered.retain(|m| !c.covers(*m));
    }
    while !uncovered.is_empty() {
        let best = primes
            .iter()
            .filter(|c| !chosen.contains(c))
            .max_by(|a, b| {
                let ca = uncovered.iter().filter(|m| a.covers(**m)).count();
                let cb = uncovered.iter().filter(|m| b.covers(**m)).count();
                ca.cmp(&cb)
                    .then(b.mask.count_ones().cmp(&a.mask.count_ones()))
                    .then(b.cmp(a))
            })
            .copied()
            .expect("every on-set minterm is covered by some prime");
        uncovered.retain(|m| !best.covers(*m));
        chosen.push(best);
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(k: u16) -> Vec<PropId> {
        (0..k).map(PropId).collect()
    }

    fn equivalent(f: &Formula, b: &BoolFn, care: impl Fn(u32) -> bool) -> bool {
        (0..(1u32 << b.vars().len()))
            .filter(|m| care(*m))
            .all(|m| f.holds(b.to_global(m)).unwrap() == b.get(m))
    }

    #[test]
    fn constants() {
        assert_eq!(BoolFn::constant(vars(2), true).to_formula(|_| true), Formula::True);
        assert_eq!(BoolFn::constant(vars(2), false).to_formula(|_| true), Formula::False);
        assert_eq!(BoolFn::constant(vec![], true).to_formula(|_| true), Formula::True);
    }

    #[test]
    fn single_literal() {
        let f = BoolFn::from_fn(vars(3), |m| m & 0b010 == 0);
        assert_eq!(f.to_formula(|_| true), Formula::not(Formula::Atom(PropId(1))));
    }

    #[test]
    fn dont_cares_simplify() {
        // !o1 | g1 over (g1=bit0, o1=bit1); with g1&o1 impossible it is just !o1
        let f = BoolFn::from_fn(vars(2), |m| m & 0b10 == 0 || m & 0b01 != 0);
        let exact = f.to_formula(|_| true);
        assert!(equivalent(&exact, &f, |_| true));
        let relaxed = f.to_formula(|m| m != 0b11);
        assert_eq!(relaxed, Formula::not(Formula::Atom(PropId(1))));
    }

    #[test]
    fn all_functions_of_three_vars_round_trip() {
        for bits in 0u32..256 {
            let f = BoolFn::from_fn(vars(3), |m| bits & (1 << m) != 0);
            let g = f.to_formula(|_| true);
            assert!(equivalent(&g, &f, |_| true), "function {bits:#010b}");
        }
    }
}
