//! Augmented product CMDP over a gridworld, a DBA and its task structure.

use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::TaskStructure;
use crate::automata::{translate, AutomatonError, Dba, StateId, MAX_AUTOMATON_PROPS};
use crate::grid::{state_coords, Cell, GridEnv, GridError, TaskLayout, NUM_ACTIONS};
use crate::stl::{Formula, Point, Robustness, DEFAULT_RHO_MAX};

#[derive(Debug, Error)]
pub enum ProductError {
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("translated automaton is not deterministic and complete:\n{0}")]
    InvalidAutomaton(String),
    #[error("cannot step from unsafe automaton state {0} with trap termination enabled")]
    StepFromTrap(StateId),
    #[error("trajectory: {0}")]
    Trajectory(String),
}

/// Subgoal parameters as seen by the critics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub center: Point,
    pub radius: f64,
}

impl Goal {
    pub fn contains(&self, p: Point) -> bool {
        self.radius - crate::stl::distance(p, self.center) >= 0.0
    }
}

pub type GoalList = Vec<Option<Goal>>;

/// Everything derived once from a task instance.
#[derive(Debug, Clone)]
pub struct Task {
    pub layout: TaskLayout,
    pub formula: Formula,
    pub dba: Dba,
    pub structure: TaskStructure,
    pub rho_max: f64,
    goals: Vec<GoalList>,
    cells: usize,
    cost: Vec<f64>,
    next_q: Vec<StateId>,
}

impl Task {
    pub fn new(layout: TaskLayout, formula: Formula) -> Result<Self, ProductError> {
        Self::with_cap(layout, formula, DEFAULT_RHO_MAX)
    }

    pub fn with_cap(layout: TaskLayout, formula: Formula, rho_max: f64) -> Result<Self, ProductError> {
        let dba = translate(&formula)?;
        if dba.ap().len() > MAX_AUTOMATON_PROPS {
            return Err(AutomatonError::TooManyPropositions(dba.ap().len()).into());
        }
        let report = dba.validate(&layout.props)?;
        if !report.is_clean() {
            return Err(ProductError::InvalidAutomaton(report.to_string()));
        }
        Self::from_dba(layout, formula, dba, rho_max)
    }

    pub fn from_dba(layout: TaskLayout, formula: Formula, dba: Dba, rho_max: f64) -> Result<Self, ProductError> {
        let props = &layout.props;
        let structure = TaskStructure::analyze(&dba, props);
        let goals = structure
            .subgoals
            .iter()
            .map(|l| l.iter().map(|g| g.map(|p| props.get(p)).map(|a| Goal { center: a.center, radius: a.radius })).collect())
            .collect();
        let env = layout.env(0.0)?;
        let cells = env.num_cells();
        let nq = dba.num_states();
        let rob = Robustness::with_cap(props, rho_max);
        let mut cost = vec![0.0; nq * cells];
        let mut next_q = vec![0; nq * cells];
        for i in 0..cells {
            let p = state_coords(env.cell(i));
            let v = props.valuation(p);
            for q in 0..nq {
                cost[q * cells + i] = rob.state(&structure.safety[q], p).expect("safety conditions are propositional");
                next_q[q * cells + i] = dba.step_valuation(q, v)?;
            }
        }
        Ok(Self { layout, formula, dba, structure, rho_max, goals, cells, cost, next_q })
    }

    pub fn num_states(&self) -> usize {
        self.dba.num_states()
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn goals(&self, q: StateId) -> &GoalList {
        &self.goals[q]
    }

    /// `ρ(s, S(q))` at a cell index.
    pub fn cost(&self, cell: usize, q: StateId) -> f64 {
        self.cost[q * self.cells + cell]
    }

    /// `δ(q, s)` at a cell index.
    pub fn next_q(&self, q: StateId, cell: usize) -> StateId {
        self.next_q[q * self.cells + cell]
    }

    pub fn is_accepting(&self, q: StateId) -> bool {
        self.dba.is_accepting(q)
    }

    pub fn is_unsafe(&self, q: StateId) -> bool {
        self.structure.is_unsafe(q)
    }
}

/// `⟨s, g⁺, q⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub cell: Cell,
    pub gplus: GoalList,
    pub q: StateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: AugmentedState,
    pub reward: f64,
    pub cost: f64,
    pub trapped: bool,
    pub timeout: bool,
}

impl StepOutcome {
    pub fn done(&self, trap_termination: bool) -> bool {
        self.timeout || (self.trapped && trap_termination)
    }
}

#[derive(Debug, Clone)]
pub struct Product<'a> {
    pub task: &'a Task,
    pub env: GridEnv,
    pub horizon: usize,
    pub trap_termination: bool,
}

impl<'a> Product<'a> {
    pub fn new(task: &'a Task, slip: f64, horizon: usize) -> Result<Self, ProductError> {
        let env = task.layout.env(slip)?;
        Ok(Self { task, env, horizon, trap_termination: true })
    }

    /// The automaton starts in `q0` without reading `s0`.
    pub fn reset(&self, rng: &mut impl rand::RngCore) -> AugmentedState {
        let starts = &self.task.layout.start;
        let cell = if starts.len() == 1 { starts[0] } else { starts[rng.gen_range(0..starts.len())] };
        let q = self.task.dba.initial();
        AugmentedState { cell, gplus: self.task.goals(q).clone(), q }
    }

    /// One product transition taken at episode step `t` (0-based).
    pub fn step(
        &self,
        aug: &AugmentedState,
        action: usize,
        t: usize,
        rng: &mut impl rand::RngCore,
    ) -> Result<StepOutcome, ProductError> {
        if action >= NUM_ACTIONS {
            return Err(GridError::InvalidAction(action).into());
        }
        if self.trap_termination && self.task.is_unsafe(aug.q) {
            return Err(ProductError::StepFromTrap(aug.q));
        }
        let cost = self.task.cost(self.env.index(aug.cell), aug.q);
        let cell = self.env.step(aug.cell, action, rng)?;
        let q = self.task.next_q(aug.q, self.env.index(cell));
        let trapped = self.task.is_unsafe(q);
        let reward = if self.task.is_accepting(q) { 1.0 } else { 0.0 };
        let timeout = t + 1 >= self.horizon && !(trapped && self.trap_termination);
        Ok(StepOutcome { next: AugmentedState { cell, gplus: self.task.goals(q).clone(), q }, reward, cost, trapped, timeout })
    }
}

/// Reach tasks must end accepting; recurrent tasks need one accepting visit.
/// Either way no unsafe state may appear.
pub fn episode_success(states: &[StateId], task: &Task) -> bool {
    if states.iter().any(|q| task.is_unsafe(*q)) {
        return false;
    }
    if task.structure.recurrent {
        states.iter().any(|q| task.is_accepting(*q))
    } else {
        states.last().is_some_and(|q| task.is_accepting(*q))
    }
}

/// One CSV row; the last row of an episode has no action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub q: StateId,
    pub action: Option<usize>,
    pub reward: Option<f64>,
    pub cost: Option<f64>,
    pub trapped: bool,
}

pub fn write_trajectory(rows: &[TrajectoryRow], out: impl Write) -> Result<(), ProductError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| ProductError::Trajectory(e.to_string()))?;
    }
    w.flush().map_err(|e| ProductError::Trajectory(e.to_string()))
}

pub fn read_trajectory(input: impl Read) -> Result<Vec<TrajectoryRow>, ProductError> {
    let mut r = csv::Reader::from_reader(input);
    let rows: Vec<TrajectoryRow> = r
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ProductError::Trajectory(e.to_string()))?;
    if rows.is_empty() {
        return Err(ProductError::Trajectory("no rows".into()));
    }
    Ok(rows)
}
