//! HOA v1 import/export for state-based Büchi automata.
//!
//! Only explicit labels and the `Inf(0)` acceptance condition are supported.
//! Guards are written positionally: AP `i` of the header is atom `i`.

use std::fmt::Write as _;

use super::{AutomatonError, Dba, Edge};
use crate::stl::{Formula, PropId, PropTable};

pub fn emit_hoa(a: &Dba, props: &PropTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "HOA: v1");
    let _ = writeln!(out, "States: {}", a.num_states());
    let _ = writeln!(out, "Start: {}", a.initial());
    let names: Vec<String> = a.ap().iter().map(|p| format!("\"{}\"", props.get(*p).id)).collect();
    let _ = writeln!(out, "AP: {}{}{}", a.ap().len(), if names.is_empty() { "" } else { " " }, names.join(" "));
    let _ = writeln!(out, "acc-name: Buchi");
    let _ = writeln!(out, "Acceptance: 1 Inf(0)");
    let _ = writeln!(out, "properties: trans-labels explicit-labels state-acc deterministic complete");
    let _ = writeln!(out, "--BODY--");
    for q in 0..a.num_states() {
        if a.is_accepting(q) {
            let _ = writeln!(out, "State: {q} {{0}}");
        } else {
            let _ = writeln!(out, "State: {q}");
        }
        for e in a.outgoing(q) {
            let _ = writeln!(out, "[{}] {}", label(&e.guard, a.ap(), 0), e.target);
        }
    }
    let _ = writeln!(out, "--END--");
    out
}

fn label(f: &Formula, ap: &[PropId], parent: u8) -> String {
    let (text, prec) = match f {
        Formula::True => ("t".to_string(), 3),
        Formula::False => ("f".to_string(), 3),
        Formula::Atom(p) => (ap.iter().position(|x| x == p).expect("guard atom in alphabet").to_string(), 3),
        Formula::Not(a) => (format!("!{}", label(a, ap, 3)), 3),
        Formula::And(a, b) => (format!("{} & {}", label(a, ap, 2), label(b, ap, 2)), 2),
        Formula::Or(a, b) => (format!("{} | {}", label(a, ap, 1), label(b, ap, 1)), 1),
        _ => unreachable!("guards are propositional"),
    };
    if prec < parent {
        format!("({text})")
    } else {
        text
    }
}

fn malformed(line: usize, message: impl Into<String>) -> AutomatonError {
    AutomatonError::MalformedHoa { line, message: message.into() }
}

/// Splits a header value into whitespace-separated words, keeping quoted strings whole.
fn words(value: &str, line: usize) -> Result<Vec<String>, AutomatonError> {
    let mut out = Vec::new();
    let mut chars = value.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut s = String::from("\"");
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => s.extend(chars.next()),
                    Some(c) => s.push(c),
                    None => return Err(malformed(line, "unterminated string")),
                }
            }
            out.push(s);
        } else {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                s.push(c);
                chars.next();
            }
            out.push(s);
        }
    }
    Ok(out)
}

fn parse_usize(s: &str, line: usize) -> Result<usize, AutomatonError> {
    s.parse().map_err(|_| malformed(line, format!("expected a non-negative integer, found `{s}`")))
}

/// Parses a HOA document; AP names are resolved against `props`. Rejects
/// anything that is not a deterministic, complete state-based Büchi automaton.
pub fn parse_hoa(text: &str, props: &PropTable) -> Result<Dba, AutomatonError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());

    let mut version = false;
    let mut states: Option<usize> = None;
    let mut start: Option<usize> = None;
    let mut ap: Option<Vec<PropId>> = None;
    let mut acceptance = false;
    let mut body_line = 0;
    for (n, l) in lines.by_ref() {
        if l == "--BODY--" {
            body_line = n;
            break;
        }
        let (key, value) = l.split_once(':').ok_or_else(|| malformed(n, "expected `name: value`"))?;
        let value = value.trim();
        match key.trim() {
            "HOA" => {
                if value != "v1" {
                    return Err(malformed(n, format!("unsupported version `{value}`")));
                }
                version = true;
            }
            "States" => states = Some(parse_usize(value, n)?),
            "Start" => {
                if start.is_some() || value.contains('&') {
                    return Err(malformed(n, "exactly one initial state is required"));
                }
                start = Some(parse_usize(value, n)?);
            }
            "AP" => {
                let w = words(value, n)?;
                let count = parse_usize(w.first().map(String::as_str).unwrap_or(""), n)?;
                if w.len() != count + 1 {
                    return Err(malformed(n, "AP count does not match the names given"));
                }
                let mut ids = Vec::with_capacity(count);
                for name in &w[1..] {
                    let name = name
                        .strip_prefix('"')
                        .ok_or_else(|| malformed(n, "AP names must be quoted"))?;
                    let id = props
                        .lookup(name)
                        .ok_or_else(|| malformed(n, format!("unknown proposition `{name}`")))?;
                    ids.push(id);
                }
                ap = Some(ids);
            }
            "acc-name" => {
                if value != "Buchi" {
                    return Err(AutomatonError::UnknownAcceptance(value.to_string()));
                }
            }
            "Acceptance" => {
                let normalized: String = value.split_whitespace().collect::<Vec<_>>().join(" ");
                if normalized != "1 Inf(0)" {
                    return Err(AutomatonError::UnknownAcceptance(normalized));
                }
                acceptance = true;
            }
            _ => {}
        }
    }
    if body_line == 0 {
        return Err(malformed(0, "missing --BODY--"));
    }
    if !version {
        return Err(malformed(1, "missing `HOA: v1` header"));
    }
    if !acceptance {
        return Err(malformed(body_line, "missing Acceptance header"));
    }
    let states = states.ok_or_else(|| malformed(body_line, "missing States header"))?;
    let start = start.ok_or_else(|| malformed(body_line, "missing Start header"))?;
    let ap = ap.unwrap_or_default();

    let mut edges = Vec::new();
    let mut accepting = Vec::new();
    let mut current: Option<usize> = None;
    let mut ended = false;
    for (n, l) in lines {
        if l == "--END--" {
            ended = true;
            break;
        }
        if let Some(rest) = l.strip_prefix("State:") {
            let w = words(rest, n)?;
            let q = parse_usize(w.first().map(String::as_str).unwrap_or(""), n)?;
            if q >= states {
                return Err(malformed(n, format!("state {q} out of range")));
            }
            for extra in &w[1..] {
                if extra.starts_with('"') {
                    continue;
                }
                match extra.as_str() {
                    "{0}" => accepting.push(q),
                    "{}" => {}
                    other => return Err(malformed(n, format!("unsupported acceptance marks `{other}`"))),
                }
            }
            current = Some(q);
        } else if let Some(rest) = l.strip_prefix('[') {
            let source = current.ok_or_else(|| malformed(n, "edge before any State"))?;
            let (lab, tail) = rest.split_once(']').ok_or_else(|| malformed(n, "unterminated label"))?;
            let guard = parse_label(lab, &ap, n)?;
            let tail = tail.trim();
            if tail.contains('{') {
                return Err(malformed(n, "transition-based acceptance is not supported"));
            }
            let target = parse_usize(tail, n)?;
            if target >= states {
                return Err(malformed(n, format!("state {target} out of range")));
            }
            edges.push(Edge { source, guard, target });
        } else {
            return Err(malformed(n, "implicit labels are not supported"));
        }
    }
    if !ended {
        return Err(malformed(0, "missing --END--"));
    }
    let dba = Dba::new(ap, states, start, accepting, edges)?;
    let report = dba.validate(props)?;
    if !report.is_clean() {
        return Err(AutomatonError::NotDeterministic(report.to_string().trim_end().to_string()));
    }
    Ok(dba)
}

struct LabelParser<'a> {
    chars: Vec<char>,
    pos: usize,
    ap: &'a [PropId],
    line: usize,
}

impl LabelParser<'_> {
    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn or(&mut self) -> Result<Formula, AutomatonError> {
        let mut lhs = self.and()?;
        while self.peek() == Some('|') {
            self.pos += 1;
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, AutomatonError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some('&') {
            self.pos += 1;
            lhs = Formula::and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, AutomatonError> {
        match self.peek() {
            Some('!') => {
                self.pos += 1;
                Ok(Formula::not(self.unary()?))
            }
            Some('t') => {
                self.pos += 1;
                Ok(Formula::True)
            }
            Some('f') => {
                self.pos += 1;
                Ok(Formula::False)
            }
            Some('(') => {
                self.pos += 1;
                let inner = self.or()?;
                if self.peek() != Some(')') {
                    return Err(malformed(self.line, "expected `)` in label"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => {
                let start = self.pos;
                while self.chars.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
                let s: String = self.chars[start..self.pos].iter().collect();
                let i = parse_usize(&s, self.line)?;
                let p = self
                    .ap
                    .get(i)
                    .ok_or_else(|| malformed(self.line, format!("AP index {i} out of range")))?;
                Ok(Formula::Atom(*p))
            }
            _ => Err(malformed(self.line, "malformed label")),
        }
    }
}

fn parse_label(text: &str, ap: &[PropId], line: usize) -> Result<Formula, AutomatonError> {
    let mut p = LabelParser { chars: text.chars().collect(), pos: 0, ap, line };
    let f = p.or()?;
    if p.peek().is_some() {
        return Err(malformed(line, "trailing input in label"));
    }
    Ok(f)
}
