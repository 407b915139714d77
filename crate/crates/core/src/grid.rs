//! Discrete point-mass gridworlds and the canonical task layouts.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stl::{parse_formula, AtomicProp, Formula, Point, PropTable, StlError};

pub const NUM_ACTIONS: usize = 5;
pub const ACTION_NAMES: [&str; NUM_ACTIONS] = ["up", "down", "left", "right", "stay"];

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("template must be in 1..=5, got {0}")]
    InvalidTemplate(u8),
    #[error("grid size must be in 2..=256, got {0}")]
    InvalidSize(usize),
    #[error("slip must be in [0, 1], got {0}")]
    InvalidSlip(f64),
    #[error("action index {0} out of range")]
    InvalidAction(usize),
    #[error("cell ({0}, {1}) is outside the grid")]
    OutOfBounds(i64, i64),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error(transparent)]
    Formula(#[from] StlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: u16,
    pub y: u16,
}

impl Cell {
    pub const fn new(x: u16, y: u16) -> Self {
        Self { x, y }
    }
}

/// Continuous coordinates of a cell center.
pub fn state_coords(c: Cell) -> Point {
    [f64::from(c.x) + 0.5, f64::from(c.y) + 0.5]
}

/// The cell containing `p` (no bounds check).
pub fn cell_of(p: Point) -> Cell {
    Cell::new(p[0].floor().max(0.0) as u16, p[1].floor().max(0.0) as u16)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEnv {
    pub size: u16,
    pub slip: f64,
}

impl GridEnv {
    pub fn new(size: usize, slip: f64) -> Result<Self, GridError> {
        if !(2..=256).contains(&size) {
            return Err(GridError::InvalidSize(size));
        }
        if !(0.0..=1.0).contains(&slip) {
            return Err(GridError::InvalidSlip(slip));
        }
        Ok(Self { size: size as u16, slip })
    }

    pub fn num_cells(&self) -> usize {
        usize::from(self.size) * usize::from(self.size)
    }

    pub fn index(&self, c: Cell) -> usize {
        usize::from(c.y) * usize::from(self.size) + usize::from(c.x)
    }

    pub fn cell(&self, index: usize) -> Cell {
        let n = usize::from(self.size);
        Cell::new((index % n) as u16, (index / n) as u16)
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x < self.size && c.y < self.size
    }

    pub fn check(&self, x: i64, y: i64) -> Result<Cell, GridError> {
        if x < 0 || y < 0 || x >= i64::from(self.size) || y >= i64::from(self.size) {
            return Err(GridError::OutOfBounds(x, y));
        }
        Ok(Cell::new(x as u16, y as u16))
    }

    /// Deterministic effect of an action; moving off the edge leaves the cell unchanged.
    pub fn apply(&self, c: Cell, action: usize) -> Cell {
        let last = self.size - 1;
        match action {
            0 if c.y < last => Cell::new(c.x, c.y + 1),
            1 if c.y > 0 => Cell::new(c.x, c.y - 1),
            2 if c.x > 0 => Cell::new(c.x - 1, c.y),
            3 if c.x < last => Cell::new(c.x + 1, c.y),
            _ => c,
        }
    }

    /// With probability `slip` the chosen action is replaced by a uniformly random one.
    pub fn step(&self, c: Cell, action: usize, rng: &mut impl rand::RngCore) -> Result<Cell, GridError> {
        if action >= NUM_ACTIONS {
            return Err(GridError::InvalidAction(action));
        }
        let action = if self.slip > 0.0 && rng.gen::<f64>() < self.slip {
            rng.gen_range(0..NUM_ACTIONS)
        } else {
            action
        };
        Ok(self.apply(c, action))
    }
}

/// Propositions, start cells and formula text of one task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLayout {
    pub template: Option<u8>,
    pub size: u16,
    pub props: PropTable,
    pub formula: String,
    /// Reset draws uniformly from these cells.
    pub start: Vec<Cell>,
}

pub fn template_formula(template: u8) -> Result<&'static str, GridError> {
    Ok(match template {
        1 => "F (g1 & X F g2)",
        2 => "F g1 & F g2",
        3 => "F g1 & G !o1",
        4 => "!o1 U g1 & X F g2",
        5 => "G F (g1 & X F g2) & G !o1",
        t => return Err(GridError::InvalidTemplate(t)),
    })
}

/// Canonical layouts; coordinates scale with `size / 10`, except template 4 whose
/// geometry is chosen so that crossing the released obstacle is the short way to g2
/// (it needs `size >= 10` for the goals to clear the obstacle).
pub fn make_layout(template: u8, size: usize) -> Result<(TaskLayout, Formula), GridError> {
    let text = template_formula(template)?;
    GridEnv::new(size, 0.0)?;
    let n = size as f64;
    let k = n / 10.0;
    let sc = |v: f64| v * k;
    let (props, start) = if template == 4 {
        let props = vec![
            AtomicProp::subgoal("g1", [n - 1.5, n / 2.0], 0.9),
            AtomicProp::subgoal("g2", [1.5, n / 2.0], 0.9),
            AtomicProp::region("o1", [n / 2.0, n / 2.0], n / 4.0),
        ];
        (props, Cell::new(size as u16 - 2, 1))
    } else {
        let mut props = vec![AtomicProp::subgoal("g1", [sc(8.5), sc(8.5)], sc(1.0))];
        if template != 3 {
            props.push(AtomicProp::subgoal("g2", [sc(1.5), sc(1.5)], sc(1.0)));
        }
        if template >= 3 {
            props.push(AtomicProp::region("o1", [sc(5.0), sc(5.0)], sc(1.5)));
        }
        (props, cell_of([sc(1.5), sc(1.5)]))
    };
    let props = PropTable::new(props)?;
    let formula = parse_formula(text, &props)?;
    let layout = TaskLayout { template: Some(template), size: size as u16, props, formula: text.into(), start: vec![start] };
    check_layout(&layout)?;
    Ok((layout, formula))
}

impl TaskLayout {
    pub fn env(&self, slip: f64) -> Result<GridEnv, GridError> {
        GridEnv::new(usize::from(self.size), slip)
    }

    fn cells_where(&self, pred: impl Fn(Point) -> bool) -> Vec<bool> {
        let env = GridEnv { size: self.size, slip: 0.0 };
        (0..env.num_cells()).map(|i| pred(state_coords(env.cell(i)))).collect()
    }

    /// Cells whose center lies in some region (non-subgoal) proposition.
    pub fn obstacle_cells(&self) -> Vec<bool> {
        self.cells_where(|p| self.props.iter().any(|(_, a)| !a.is_subgoal() && a.margin(p) >= 0.0))
    }

    pub fn cells_in(&self, prop: &AtomicProp) -> Vec<bool> {
        self.cells_where(|p| prop.margin(p) >= 0.0)
    }
}

/// Obstacle-avoiding BFS from `from` to any cell in `goal`.
fn bfs(env: &GridEnv, blocked: &[bool], from: Cell, goal: &[bool]) -> Option<Vec<Cell>> {
    let mut prev = vec![usize::MAX; env.num_cells()];
    let s = env.index(from);
    prev[s] = s;
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        let i = env.index(c);
        if goal[i] {
            let mut path = vec![c];
            let mut j = i;
            while prev[j] != j {
                j = prev[j];
                path.push(env.cell(j));
            }
            path.reverse();
            return Some(path);
        }
        for a in 0..4 {
            let d = env.apply(c, a);
            let k = env.index(d);
            if prev[k] == usize::MAX && !blocked[k] {
                prev[k] = i;
                queue.push_back(d);
            }
        }
    }
    None
}

/// Validates disjointness, start placement and the existence of a safe path
/// visiting the subgoals in name order. Returns that path.
pub fn check_layout(layout: &TaskLayout) -> Result<Vec<Cell>, GridError> {
    let env = layout.env(0.0)?;
    let invalid = |m: String| Err(GridError::InvalidLayout(m));
    if layout.start.is_empty() {
        return invalid("no start cell".into());
    }
    for c in &layout.start {
        if !env.contains(*c) {
            return Err(GridError::OutOfBounds(i64::from(c.x), i64::from(c.y)));
        }
    }
    let goals: Vec<&AtomicProp> = layout.props.iter().map(|(_, p)| p).filter(|p| p.is_subgoal()).collect();
    let regions: Vec<&AtomicProp> = layout.props.iter().map(|(_, p)| p).filter(|p| !p.is_subgoal()).collect();
    for g in &goals {
        for r in &regions {
            if !g.excludes(r) {
                return invalid(format!("goal {} overlaps region {}", g.id, r.id));
            }
        }
    }
    let blocked = layout.obstacle_cells();
    for c in &layout.start {
        if blocked[env.index(*c)] {
            return invalid(format!("start ({}, {}) lies in an obstacle", c.x, c.y));
        }
    }
    let mut order = goals.clone();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut path = vec![layout.start[0]];
    for g in order {
        let target = layout.cells_in(g);
        if !target.iter().any(|t| *t) {
            return invalid(format!("goal {} contains no cell center", g.id));
        }
        let from = *path.last().expect("non-empty");
        match bfs(&env, &blocked, from, &target) {
            Some(leg) => path.extend(leg.into_iter().skip(1)),
            None => return invalid(format!("no obstacle-free path to {}", g.id)),
        }
    }
    Ok(path)
}

/// ASCII map, top row first: `#` obstacle, goal cells by the digit of their name
/// (or `g`), `S` start, `*` path cells.
pub fn render(layout: &TaskLayout, path: &[Cell]) -> String {
    let env = GridEnv { size: layout.size, slip: 0.0 };
    let blocked = layout.obstacle_cells();
    let goal_marks: Vec<(Vec<bool>, char)> = layout
        .props
        .iter()
        .filter(|(_, p)| p.is_subgoal())
        .map(|(_, p)| (layout.cells_in(p), p.id.chars().last().filter(char::is_ascii_digit).unwrap_or('g')))
        .collect();
    let mut out = String::new();
    for y in (0..layout.size).rev() {
        for x in 0..layout.size {
            let c = Cell::new(x, y);
            let i = env.index(c);
            let mut ch = '.';
            if blocked[i] {
                ch = '#';
            }
            for (cells, mark) in &goal_marks {
                if cells[i] {
                    ch = *mark;
                }
            }
            if path.contains(&c) && ch == '.' {
                ch = '*';
            }
            if layout.start.contains(&c) {
                ch = 'S';
            }
            out.push(ch);
            out.push(' ');
        }
        out.pop();
        out.push('\n');
    }
    let _ = writeln!(out, "formula: {}", layout.formula);
    for (_, p) in layout.props.iter() {
        let kind = if p.is_subgoal() { "subgoal" } else { "region" };
        let _ = writeln!(out, "{} {kind} center=({}, {}) radius={}", p.id, p.center[0], p.center[1], p.radius);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn moves_and_edges() {
        let env = GridEnv::new(10, 0.0).unwrap();
        let mut rng = seed::rng(0, "t", 0);
        assert_eq!(env.step(Cell::new(0, 0), 0, &mut rng).unwrap(), Cell::new(0, 1));
        assert_eq!(env.step(Cell::new(0, 0), 2, &mut rng).unwrap(), Cell::new(0, 0));
        assert_eq!(env.step(Cell::new(9, 9), 3, &mut rng).unwrap(), Cell::new(9, 9));
        assert_eq!(env.step(Cell::new(3, 3), 4, &mut rng).unwrap(), Cell::new(3, 3));
        assert_eq!(env.step(Cell::new(0, 0), 5, &mut rng), Err(GridError::InvalidAction(5)));
    }

    #[test]
    fn coords_round_trip() {
        assert_eq!(state_coords(Cell::new(0, 0)), [0.5, 0.5]);
        assert_eq!(state_coords(Cell::new(9, 9)), [9.5, 9.5]);
        let env = GridEnv::new(7, 0.0).unwrap();
        for i in 0..env.num_cells() {
            let c = env.cell(i);
            assert_eq!(cell_of(state_coords(c)), c);
            assert_eq!(env.index(c), i);
        }
    }

    #[test]
    fn full_slip_is_uniform() {
        // from the center every action has a distinct outcome
        let env = GridEnv::new(10, 1.0).unwrap();
        let mut rng = seed::rng(3, "slip", 0);
        let from = Cell::new(5, 5);
        let mut counts = [0usize; NUM_ACTIONS];
        let trials = 100_000;
        for _ in 0..trials {
            let to = env.step(from, 0, &mut rng).unwrap();
            let a = (0..NUM_ACTIONS).find(|a| env.apply(from, *a) == to).unwrap();
            counts[a] += 1;
        }
        for c in counts {
            let p = c as f64 / trials as f64;
            assert!((p - 0.2).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn canonical_layouts() {
        let (l1, _) = make_layout(1, 10).unwrap();
        let g1 = l1.props.get(l1.props.lookup("g1").unwrap());
        assert_eq!((g1.center, g1.radius), ([8.5, 8.5], 1.0));
        let g2 = l1.props.get(l1.props.lookup("g2").unwrap());
        assert_eq!((g2.center, g2.radius), ([1.5, 1.5], 1.0));
        assert_eq!(l1.start, vec![Cell::new(1, 1)]);
        let (l3, _) = make_layout(3, 10).unwrap();
        let o1 = l3.props.get(l3.props.lookup("o1").unwrap());
        assert_eq!((o1.center, o1.radius), ([5.0, 5.0], 1.5));
        let blocked: Vec<usize> = l3.obstacle_cells().iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect();
        assert_eq!(blocked, vec![44, 45, 54, 55]);
        assert_eq!(make_layout(5, 10).unwrap().0.formula, "G F (g1 & X F g2) & G !o1");
        assert_eq!(make_layout(6, 10), Err(GridError::InvalidTemplate(6)));
        for t in 1..=5 {
            for n in [6, 8, 10, 12, 16] {
                let r = make_layout(t, n);
                if t == 4 && n < 10 {
                    assert!(matches!(r, Err(GridError::InvalidLayout(_))));
                } else {
                    r.unwrap();
                }
            }
        }
    }

    #[test]
    fn template4_release_is_shorter() {
        let (l, _) = make_layout(4, 10).unwrap();
        let env = l.env(0.0).unwrap();
        let g1 = l.cells_in(l.props.get(l.props.lookup("g1").unwrap()));
        let g2 = l.cells_in(l.props.get(l.props.lookup("g2").unwrap()));
        let free = vec![false; env.num_cells()];
        let blocked = l.obstacle_cells();
        let to_g1 = bfs(&env, &blocked, l.start[0], &g1).unwrap();
        let at = *to_g1.last().unwrap();
        let through = bfs(&env, &free, at, &g2).unwrap();
        let around = bfs(&env, &blocked, at, &g2).unwrap();
        assert_eq!(to_g1.len() - 1, 3);
        assert!(through.len() < around.len());
        assert!(through.iter().any(|c| blocked[env.index(*c)]));
    }

    #[test]
    fn rejects_bad_layouts() {
        let (mut l, _) = make_layout(3, 10).unwrap();
        l.start = vec![Cell::new(5, 5)];
        assert!(matches!(check_layout(&l), Err(GridError::InvalidLayout(_))));
        let props = PropTable::new(vec![
            AtomicProp::subgoal("g1", [5.0, 5.0], 1.0),
            AtomicProp::region("o1", [5.5, 5.5], 1.0),
        ])
        .unwrap();
        let l = TaskLayout { template: None, size: 10, props, formula: "F g1".into(), start: vec![Cell::new(0, 0)] };
        assert!(matches!(check_layout(&l), Err(GridError::InvalidLayout(_))));
    }

    #[test]
    fn render_marks() {
        let (l, _) = make_layout(3, 10).unwrap();
        let map = render(&l, &[]);
        let rows: Vec<&str> = map.lines().collect();
        assert_eq!(rows[8].split(' ').nth(1), Some("S"));
        assert_eq!(rows[4].split(' ').nth(4), Some("#"));
        assert_eq!(rows[1].split(' ').nth(8), Some("1"));
    }
}
