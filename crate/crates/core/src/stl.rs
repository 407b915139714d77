//! Formulas over parameterized disk propositions, a text parser, and the
//! min/max quantitative semantics used for costs and monitoring.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default robustness cap. `ρ(⊤) = +1`, `ρ(⊥) = -1`.
pub const DEFAULT_RHO_MAX: f64 = 1.0;

/// Maximum number of propositions a table can hold; valuations are `u32` bitmasks.
pub const MAX_PROPS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StlError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown proposition `{name}` at offset {offset}")]
    UnknownProposition { name: String, offset: usize },
    #[error("temporal operator in a propositional context")]
    TemporalOperator,
    #[error("signal must contain at least one state")]
    EmptySignal,
    #[error("invalid proposition `{0}`: {1}")]
    InvalidProposition(String, String),
}

/// A point in the continuous workspace (cell units).
pub type Point = [f64; 2];

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropKind {
    /// Member of the subgoal set; its disk parameters become goal inputs.
    Subgoal,
    Region,
}

/// A disk proposition: true at `s` iff `radius - |s - center| >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicProp {
    pub id: String,
    pub kind: PropKind,
    pub center: Point,
    pub radius: f64,
}

impl AtomicProp {
    pub fn subgoal(id: impl Into<String>, center: Point, radius: f64) -> Self {
        Self { id: id.into(), kind: PropKind::Subgoal, center, radius }
    }

    pub fn region(id: impl Into<String>, center: Point, radius: f64) -> Self {
        Self { id: id.into(), kind: PropKind::Region, center, radius }
    }

    pub fn is_subgoal(&self) -> bool {
        self.kind == PropKind::Subgoal
    }

    /// Unclamped signed margin.
    pub fn margin(&self, s: Point) -> f64 {
        self.radius - distance(s, self.center)
    }

    /// Two disks are exclusive when no point can lie in both closed disks.
    pub fn excludes(&self, other: &AtomicProp) -> bool {
        distance(self.center, other.center) > self.radius + other.radius
    }
}

/// Index into a [`PropTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PropId(pub u16);

impl PropId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn bit(self) -> u32 {
        1 << self.0
    }
}

/// The proposition table a specification is resolved against.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropTable {
    props: Vec<AtomicProp>,
}

impl PropTable {
    pub fn new(props: Vec<AtomicProp>) -> Result<Self, StlError> {
        let mut table = Self::default();
        for p in props {
            table.insert(p)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, prop: AtomicProp) -> Result<PropId, StlError> {
        let valid_name = prop
            .id
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && prop.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
            && !is_keyword(&prop.id);
        if !valid_name {
            return Err(StlError::InvalidProposition(prop.id, "not a valid identifier".into()));
        }
        if !(prop.radius >= 0.0) || !prop.radius.is_finite() {
            return Err(StlError::InvalidProposition(prop.id, "radius must be finite and >= 0".into()));
        }
        if self.lookup(&prop.id).is_some() {
            return Err(StlError::InvalidProposition(prop.id, "duplicate id".into()));
        }
        if self.props.len() >= MAX_PROPS {
            return Err(StlError::InvalidProposition(prop.id, format!("at most {MAX_PROPS} propositions")));
        }
        self.props.push(prop);
        Ok(PropId((self.props.len() - 1) as u16))
    }

    pub fn lookup(&self, name: &str) -> Option<PropId> {
        self.props.iter().position(|p| p.id == name).map(|i| PropId(i as u16))
    }

    pub fn get(&self, id: PropId) -> &AtomicProp {
        &self.props[id.index()]
    }

    pub fn len(&self) -> usize {
        self.props.len()
    }

    pub fn is_empty(&self) -> bool {
        self.props.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PropId, &AtomicProp)> {
        self.props.iter().enumerate().map(|(i, p)| (PropId(i as u16), p))
    }

    /// Boolean valuation of every proposition at `s` (bit `i` set iff prop `i` holds).
    pub fn valuation(&self, s: Point) -> u32 {
        self.props
            .iter()
            .enumerate()
            .filter(|(_, p)| p.margin(s) >= 0.0)
            .fold(0, |acc, (i, _)| acc | (1 << i))
    }

    /// Whether a valuation restricted to `ids` can occur at some point, judged
    /// pairwise: two exclusive disks can never both hold.
    pub fn realizable(&self, ids: &[PropId], local_valuation: u32) -> bool {
        for (i, a) in ids.iter().enumerate() {
            if local_valuation & (1 << i) == 0 {
                continue;
            }
            for (j, b) in ids.iter().enumerate().skip(i + 1) {
                if local_valuation & (1 << j) != 0 && self.get(*a).excludes(self.get(*b)) {
                    return false;
                }
            }
        }
        true
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "F" | "G" | "X" | "U" | "true" | "false")
}

/// Temporal-logic formula over propositions of a [`PropTable`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Formula {
    True,
    False,
    Atom(PropId),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
    Eventually(Box<Formula>),
    Always(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(id: PropId) -> Self {
        Formula::Atom(id)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn next(f: Formula) -> Self {
        Formula::Next(Box::new(f))
    }

    pub fn eventually(f: Formula) -> Self {
        Formula::Eventually(Box::new(f))
    }

    pub fn always(f: Formula) -> Self {
        Formula::Always(Box::new(f))
    }

    pub fn until(a: Formula, b: Formula) -> Self {
        Formula::Until(Box::new(a), Box::new(b))
    }

    /// Conjunction of all items; `True` when empty.
    pub fn conjunction(items: impl IntoIterator<Item = Formula>) -> Self {
        items.into_iter().reduce(Formula::and).unwrap_or(Formula::True)
    }

    /// Disjunction of all items; `False` when empty.
    pub fn disjunction(items: impl IntoIterator<Item = Formula>) -> Self {
        items.into_iter().reduce(Formula::or).unwrap_or(Formula::False)
    }

    pub fn is_propositional(&self) -> bool {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) => true,
            Formula::Not(f) => f.is_propositional(),
            Formula::And(a, b) | Formula::Or(a, b) => a.is_propositional() && b.is_propositional(),
            Formula::Next(_) | Formula::Eventually(_) | Formula::Always(_) | Formula::Until(..) => false,
        }
    }

    /// Distinct atoms in order of first occurrence.
    pub fn atoms(&self) -> Vec<PropId> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut Vec<PropId>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Atom(p) => {
                if !out.contains(p) {
                    out.push(*p);
                }
            }
            Formula::Not(f) | Formula::Next(f) | Formula::Eventually(f) | Formula::Always(f) => {
                f.collect_atoms(out)
            }
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    /// Boolean value of a propositional formula under a valuation bitmask.
    pub fn holds(&self, valuation: u32) -> Result<bool, StlError> {
        Ok(match self {
            Formula::True => true,
            Formula::False => false,
            Formula::Atom(p) => valuation & p.bit() != 0,
            Formula::Not(f) => !f.holds(valuation)?,
            Formula::And(a, b) => a.holds(valuation)? && b.holds(valuation)?,
            Formula::Or(a, b) => a.holds(valuation)? || b.holds(valuation)?,
            _ => return Err(StlError::TemporalOperator),
        })
    }

    pub fn display<'a>(&'a self, props: &'a PropTable) -> FormulaDisplay<'a> {
        FormulaDisplay { formula: self, props }
    }
}

/// Renders a formula in the concrete text syntax accepted by [`parse_formula`].
pub struct FormulaDisplay<'a> {
    formula: &'a Formula,
    props: &'a PropTable,
}

impl FormulaDisplay<'_> {
    fn write(&self, f: &mut fmt::Formatter<'_>, node: &Formula, parent_prec: u8) -> fmt::Result {
        let prec = precedence(node);
        let wrap = prec < parent_prec;
        if wrap {
            f.write_str("(")?;
        }
        match node {
            Formula::True => f.write_str("true")?,
            Formula::False => f.write_str("false")?,
            Formula::Atom(p) => f.write_str(&self.props.get(*p).id)?,
            Formula::Not(a) => {
                f.write_str("!")?;
                self.write(f, a, 4)?;
            }
            Formula::Next(a) | Formula::Eventually(a) | Formula::Always(a) => {
                let op = match node {
                    Formula::Next(_) => "X ",
                    Formula::Eventually(_) => "F ",
                    _ => "G ",
                };
                f.write_str(op)?;
                self.write(f, a, 4)?;
            }
            Formula::Until(a, b) => {
                self.write(f, a, 4)?;
                f.write_str(" U ")?;
                self.write(f, b, 3)?;
            }
            Formula::And(a, b) => {
                self.write(f, a, 2)?;
                f.write_str(" & ")?;
                self.write(f, b, 3)?;
            }
            Formula::Or(a, b) => {
                self.write(f, a, 1)?;
                f.write_str(" | ")?;
                self.write(f, b, 2)?;
            }
        }
        if wrap {
            f.write_str(")")?;
        }
        Ok(())
    }
}

fn precedence(node: &Formula) -> u8 {
    match node {
        Formula::Or(..) => 1,
        Formula::And(..) => 2,
        Formula::Until(..) => 3,
        _ => 4,
    }
}

impl fmt::Display for FormulaDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, self.formula, 0)
    }
}

// ---------------------------------------------------------------------------
// Parser
//
//   or    := and ('|' and)*
//   and   := until ('&' until)*
//   until := unary ('U' until)?
//   unary := ('!' | 'F' | 'G' | 'X') unary | atom | '(' or ')'
//   atom  := 'true' | 'false' | identifier

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Not,
    And,
    Or,
    Eventually,
    Always,
    Next,
    Until,
    True,
    False,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, StlError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let tok = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'!' => Tok::Not,
            b'&' => Tok::And,
            b'|' => Tok::Or,
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word {
                    "F" => Tok::Eventually,
                    "G" => Tok::Always,
                    "X" => Tok::Next,
                    "U" => Tok::Until,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    _ => Tok::Ident(word.to_string()),
                };
                out.push((tok, start));
                continue;
            }
            _ => {
                return Err(StlError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{}`", text[start..].chars().next().unwrap_or('?')),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
    props: &'a PropTable,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, o)| *o)
    }

    fn error(&self, message: &str) -> StlError {
        StlError::Syntax { offset: self.offset(), message: message.to_string() }
    }

    fn or(&mut self) -> Result<Formula, StlError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, StlError> {
        let mut lhs = self.until()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            lhs = Formula::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Formula, StlError> {
        let lhs = self.unary()?;
        if self.peek() == Some(&Tok::Until) {
            self.pos += 1;
            return Ok(Formula::until(lhs, self.until()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, StlError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error("unexpected end of input"));
        };
        let offset = self.offset();
        self.pos += 1;
        match tok {
            Tok::Not => Ok(Formula::not(self.unary()?)),
            Tok::Eventually => Ok(Formula::eventually(self.unary()?)),
            Tok::Always => Ok(Formula::always(self.unary()?)),
            Tok::Next => Ok(Formula::next(self.unary()?)),
            Tok::True => Ok(Formula::True),
            Tok::False => Ok(Formula::False),
            Tok::Ident(name) => self
                .props
                .lookup(&name)
                .map(Formula::Atom)
                .ok_or(StlError::UnknownProposition { name, offset }),
            Tok::LParen => {
                let inner = self.or()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            _ => {
                self.pos -= 1;
                Err(self.error("expected a formula"))
            }
        }
    }
}

/// Parses `text` against `props`. Unary operators bind tightest, then `U`
/// (right-associative), then `&`, then `|`.
pub fn parse_formula(text: &str, props: &PropTable) -> Result<Formula, StlError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0, end: text.len(), props };
    let f = parser.or()?;
    if parser.pos != parser.toks.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Quantitative semantics

/// Robustness evaluator with cap `rho_max`.
#[derive(Debug, Clone, Copy)]
pub struct Robustness<'a> {
    pub props: &'a PropTable,
    pub rho_max: f64,
}

impl<'a> Robustness<'a> {
    pub fn new(props: &'a PropTable) -> Self {
        Self { props, rho_max: DEFAULT_RHO_MAX }
    }

    pub fn with_cap(props: &'a PropTable, rho_max: f64) -> Self {
        Self { props, rho_max }
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(-self.rho_max, self.rho_max)
    }

    /// Robustness of a propositional formula at a single state.
    pub fn state(&self, f: &Formula, s: Point) -> Result<f64, StlError> {
        Ok(match f {
            Formula::True => self.rho_max,
            Formula::False => -self.rho_max,
            Formula::Atom(p) => self.clamp(self.props.get(*p).margin(s)),
            Formula::Not(a) => -self.state(a, s)?,
            Formula::And(a, b) => self.state(a, s)?.min(self.state(b, s)?),
            Formula::Or(a, b) => self.state(a, s)?.max(self.state(b, s)?),
            _ => return Err(StlError::TemporalOperator),
        })
    }

    /// Robustness of `f` at index 0 of a finite signal.
    pub fn signal(&self, f: &Formula, w: &[Point]) -> Result<f64, StlError> {
        if w.is_empty() {
            return Err(StlError::EmptySignal);
        }
        Ok(self.trace(f, w)[0])
    }

    /// Robustness of `f` at every index of `w` (bounded semantics, weak next at the end).
    pub fn trace(&self, f: &Formula, w: &[Point]) -> Vec<f64> {
        let n = w.len();
        match f {
            Formula::True => vec![self.rho_max; n],
            Formula::False => vec![-self.rho_max; n],
            Formula::Atom(p) => {
                let prop = self.props.get(*p);
                w.iter().map(|s| self.clamp(prop.margin(*s))).collect()
            }
            Formula::Not(a) => self.trace(a, w).into_iter().map(|v| -v).collect(),
            Formula::And(a, b) => zip_with(self.trace(a, w), &self.trace(b, w), f64::min),
            Formula::Or(a, b) => zip_with(self.trace(a, w), &self.trace(b, w), f64::max),
            Formula::Next(a) => shift_weak(self.trace(a, w)),
            Formula::Eventually(a) => suffix_fold(self.trace(a, w), f64::max),
            Formula::Always(a) => suffix_fold(self.trace(a, w), f64::min),
            Formula::Until(a, b) => {
                let lhs = self.trace(a, w);
                let mut v = self.trace(b, w);
                for t in (0..n.saturating_sub(1)).rev() {
                    v[t] = v[t].max(lhs[t].min(v[t + 1]));
                }
                v
            }
        }
    }
}

fn zip_with(mut a: Vec<f64>, b: &[f64], op: fn(f64, f64) -> f64) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(b) {
        *x = op(*x, *y);
    }
    a
}

fn shift_weak<T: Copy>(mut v: Vec<T>) -> Vec<T> {
    if let Some(&last) = v.last() {
        v.remove(0);
        v.push(last);
    }
    v
}

fn suffix_fold<T: Copy>(mut v: Vec<T>, op: fn(T, T) -> T) -> Vec<T> {
    for t in (0..v.len().saturating_sub(1)).rev() {
        v[t] = op(v[t], v[t + 1]);
    }
    v
}

/// Boolean bounded semantics over a finite trace of valuations, with the same
/// suffix and weak-next conventions as [`Robustness::trace`].
pub fn holds_on_trace(f: &Formula, valuations: &[u32]) -> Vec<bool> {
    let n = valuations.len();
    match f {
        Formula::True => vec![true; n],
        Formula::False => vec![false; n],
        Formula::Atom(p) => valuations.iter().map(|v| v & p.bit() != 0).collect(),
        Formula::Not(a) => holds_on_trace(a, valuations).into_iter().map(|v| !v).collect(),
        Formula::And(a, b) => holds_on_trace(a, valuations)
            .into_iter()
            .zip(holds_on_trace(b, valuations))
            .map(|(x, y)| x && y)
            .collect(),
        Formula::Or(a, b) => holds_on_trace(a, valuations)
            .into_iter()
            .zip(holds_on_trace(b, valuations))
            .map(|(x, y)| x || y)
            .collect(),
        Formula::Next(a) => shift_weak(holds_on_trace(a, valuations)),
        Formula::Eventually(a) => suffix_fold(holds_on_trace(a, valuations), |x, y| x || y),
        Formula::Always(a) => suffix_fold(holds_on_trace(a, valuations), |x, y| x && y),
        Formula::Until(a, b) => {
            let lhs = holds_on_trace(a, valuations);
            let mut v = holds_on_trace(b, valuations);
            for t in (0..n.saturating_sub(1)).rev() {
                v[t] = v[t] || (lhs[t] && v[t + 1]);
            }
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> PropTable {
        PropTable::new(vec![
            AtomicProp::subgoal("g1", [8.5, 8.5], 1.0),
            AtomicProp::subgoal("g2", [1.5, 1.5], 1.0),
            AtomicProp::region("o1", [5.0, 5.0], 1.5),
        ])
        .unwrap()
    }

    #[test]
    fn parses_eventually_atom() {
        let props = table();
        let g1 = props.lookup("g1").unwrap();
        assert_eq!(parse_formula("F g1", &props).unwrap(), Formula::eventually(Formula::atom(g1)));
    }

    #[test]
    fn parses_sequential_and_constrained_templates() {
        let props = table();
        let g1 = Formula::atom(props.lookup("g1").unwrap());
        let g2 = Formula::atom(props.lookup("g2").unwrap());
        let o1 = Formula::atom(props.lookup("o1").unwrap());
        assert_eq!(
            parse_formula("F (g1 & X (F g2))", &props).unwrap(),
            Formula::eventually(Formula::and(g1.clone(), Formula::next(Formula::eventually(g2.clone()))))
        );
        assert_eq!(
            parse_formula("F g1 & G !o1", &props).unwrap(),
            Formula::and(Formula::eventually(g1.clone()), Formula::always(Formula::not(o1.clone())))
        );
        assert_eq!(
            parse_formula("!o1 U g1 & X F g2", &props).unwrap(),
            Formula::and(
                Formula::until(Formula::not(o1), g1),
                Formula::next(Formula::eventually(g2))
            )
        );
    }

    #[test]
    fn unbalanced_paren_reports_offset() {
        let err = parse_formula("F (g1 &", &table()).unwrap_err();
        assert_eq!(err, StlError::Syntax { offset: 7, message: "unexpected end of input".into() });
    }

    #[test]
    fn unknown_prop_and_bad_chars() {
        let props = table();
        assert!(matches!(
            parse_formula("F g9", &props),
            Err(StlError::UnknownProposition { offset: 2, .. })
        ));
        assert!(matches!(parse_formula("g1 # g2", &props), Err(StlError::Syntax { offset: 3, .. })));
        assert!(matches!(parse_formula("g1 g2", &props), Err(StlError::Syntax { offset: 3, .. })));
        assert!(matches!(parse_formula("", &props), Err(StlError::Syntax { offset: 0, .. })));
    }

    #[test]
    fn display_round_trips() {
        let props = table();
        for text in [
            "F (g1 & X F g2)",
            "F g1 & G !o1",
            "!o1 U g1 & X F g2",
            "G F (g1 & X F g2) & G !o1",
            "(g1 | g2) & !(o1 | g1)",
            "(g1 U g2) U o1",
            "true | false",
        ] {
            let f = parse_formula(text, &props).unwrap();
            let shown = f.display(&props).to_string();
            assert_eq!(parse_formula(&shown, &props).unwrap(), f, "{text} -> {shown}");
        }
    }

    #[test]
    fn state_robustness_rules() {
        let props = PropTable::new(vec![
            AtomicProp::subgoal("near_g1", [0.0, 0.0], 0.5),
            AtomicProp::region("in_o1", [10.0, 0.0], 1.0),
        ])
        .unwrap();
        let rob = Robustness::new(&props);
        let near = parse_formula("near_g1", &props).unwrap();
        assert!((rob.state(&near, [0.2, 0.0]).unwrap() - 0.3).abs() < 1e-12);

        // dist 0.4 from in_o1's center: ρ(in_o1) = 0.6
        let s = [9.6, 0.0];
        let not_o = parse_formula("!in_o1", &props).unwrap();
        assert!((rob.state(&not_o, s).unwrap() + 0.6).abs() < 1e-12);

        let props2 = PropTable::new(vec![
            AtomicProp::subgoal("near_g1", [0.0, 0.0], 0.5),
            AtomicProp::region("in_o1", [0.6, 0.0], 1.0),
        ])
        .unwrap();
        let rob2 = Robustness::new(&props2);
        let both = parse_formula("near_g1 & !in_o1", &props2).unwrap();
        // components: 0.3 and -(1.0 - 0.4) = -0.6
        assert!((rob2.state(&both, [0.2, 0.0]).unwrap() + 0.6).abs() < 1e-12);

        assert_eq!(rob.state(&Formula::True, s).unwrap(), 1.0);
        assert_eq!(rob.state(&Formula::False, s).unwrap(), -1.0);
        assert_eq!(rob.state(&parse_formula("F near_g1", &props).unwrap(), s), Err(StlError::TemporalOperator));
    }

    #[test]
    fn robustness_is_capped() {
        let props = table();
        let rob = Robustness::with_cap(&props, 0.5);
        let g1 = parse_formula("g1", &props).unwrap();
        assert_eq!(rob.state(&g1, [0.0, 0.0]).unwrap(), -0.5);
        assert_eq!(rob.state(&g1, [8.5, 8.5]).unwrap(), 0.5);
    }

    #[test]
    fn signal_small_cases() {
        let props = table();
        let rob = Robustness::new(&props);
        let p = parse_formula("g2", &props).unwrap();
        let fp = parse_formula("F g2", &props).unwrap();
        let s0 = [1.0, 1.5];
        assert_eq!(rob.signal(&fp, &[s0]).unwrap(), rob.state(&p, s0).unwrap());

        let not_o = parse_formula("!o1", &props).unwrap();
        let g_not_o = parse_formula("G !o1", &props).unwrap();
        let w = [[4.0, 4.6], [7.0, 5.0]];
        let expect = rob.state(&not_o, w[0]).unwrap().min(rob.state(&not_o, w[1]).unwrap());
        assert_eq!(rob.signal(&g_not_o, &w).unwrap(), expect);
        assert_eq!(rob.signal(&g_not_o, &[]), Err(StlError::EmptySignal));
    }

    #[test]
    fn weak_next_at_end() {
        let props = table();
        let rob = Robustness::new(&props);
        let xg = parse_formula("X g1", &props).unwrap();
        let g1 = parse_formula("g1", &props).unwrap();
        let s = [8.0, 8.0];
        assert_eq!(rob.signal(&xg, &[s]).unwrap(), rob.state(&g1, s).unwrap());
        assert_eq!(holds_on_trace(&xg, &[props.valuation(s)]), vec![true]);
    }
}
