//! Step-by-step solution construction for TSP, CVRP and OP with action masks
//! and terminal rewards.
//!
//! Routes are stored as node lists including the start and, once finished,
//! the closing return: a TSP tour from 2 reads `[2, 0, 1, 2]`, a CVRP solution
//! `[0, 3, 1, 0, 2, 0]`, an OP route `[0, 4, 2, 0]`.

use thiserror::Error;

use crate::instance::{Distribution, InstanceError, ProblemKind, RoutingInstance};

/// Slack for floating-point accumulation in OP budget checks.
pub const BUDGET_TOL: f64 = 1e-9;

pub const DEPOT: usize = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("start node {start} out of range for {n} nodes")]
    StartOutOfRange { start: usize, n: usize },
    #[error("{0} episodes must start at the depot")]
    NonDepotStart(ProblemKind),
    #[error("episode already finished")]
    Done,
    #[error("episode not finished")]
    NotDone,
    #[error("illegal move to node {0}")]
    IllegalMove(usize),
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// `true` marks a selectable node.
pub type ActionMask = Vec<bool>;

#[derive(Debug, Clone)]
pub struct EnvState<'a> {
    inst: &'a RoutingInstance,
    start: usize,
    current: usize,
    visited: Vec<bool>,
    visited_count: usize,
    route: Vec<usize>,
    traveled: f64,
    remaining_capacity: u32,
    remaining_budget: f64,
    done: bool,
}

impl<'a> EnvState<'a> {
    pub fn reset(inst: &'a RoutingInstance, start: usize) -> Result<Self, EnvError> {
        inst.validate()?;
        let n = inst.n();
        if start >= n {
            return Err(EnvError::StartOutOfRange { start, n });
        }
        if inst.kind != ProblemKind::Tsp && start != DEPOT {
            return Err(EnvError::NonDepotStart(inst.kind));
        }
        let mut visited = vec![false; n];
        visited[start] = true;
        Ok(Self {
            inst,
            start,
            current: start,
            visited,
            visited_count: 1,
            route: vec![start],
            traveled: 0.0,
            remaining_capacity: inst.capacity.unwrap_or(0),
            remaining_budget: inst.budget.unwrap_or(0.0),
            done: false,
        })
    }

    pub fn instance(&self) -> &'a RoutingInstance {
        self.inst
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn route(&self) -> &[usize] {
        &self.route
    }

    pub fn traveled(&self) -> f64 {
        self.traveled
    }

    pub fn visited(&self) -> &[bool] {
        &self.visited
    }

    pub fn remaining_capacity(&self) -> u32 {
        self.remaining_capacity
    }

    pub fn remaining_budget(&self) -> f64 {
        self.remaining_budget
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Scalar state features fed to the decoder: none for TSP, the remaining
    /// capacity fraction for CVRP, the remaining budget fraction for OP.
    pub fn dynamic_features(&self) -> Vec<f64> {
        match self.inst.kind {
            ProblemKind::Tsp => vec![],
            ProblemKind::Cvrp => vec![self.remaining_capacity as f64 / self.inst.capacity.unwrap() as f64],
            ProblemKind::Op => {
                let b = self.inst.budget.unwrap();
                vec![if b > 0.0 { self.remaining_budget / b } else { 0.0 }]
            }
        }
    }

    pub fn valid_actions(&self) -> Result<ActionMask, EnvError> {
        if self.done {
            return Err(EnvError::Done);
        }
        let inst = self.inst;
        let n = inst.n();
        let mut mask = vec![false; n];
        match inst.kind {
            ProblemKind::Tsp => {
                for j in 0..n {
                    mask[j] = !self.visited[j];
                }
            }
            ProblemKind::Cvrp => {
                for j in 1..n {
                    mask[j] = !self.visited[j] && inst.demand(j) <= self.remaining_capacity;
                }
                mask[DEPOT] = self.current != DEPOT;
            }
            ProblemKind::Op => {
                let check_return = inst.distribution != Distribution::Xasy;
                for j in 1..n {
                    mask[j] = !self.visited[j]
                        && (!check_return
                            || inst.d(self.current, j) + inst.d(j, DEPOT) <= self.remaining_budget + BUDGET_TOL);
                }
                mask[DEPOT] = true;
            }
        }
        Ok(mask)
    }

    pub fn step(&mut self, node: usize) -> Result<(), EnvError> {
        let mask = self.valid_actions()?;
        if node >= mask.len() || !mask[node] {
            return Err(EnvError::IllegalMove(node));
        }
        let inst = self.inst;
        let d = inst.d(self.current, node);
        self.traveled += d;
        self.route.push(node);
        self.current = node;
        if !self.visited[node] {
            self.visited[node] = true;
            self.visited_count += 1;
        }
        match inst.kind {
            ProblemKind::Tsp => {
                if self.visited_count == inst.n() {
                    self.traveled += inst.d(node, self.start);
                    self.route.push(self.start);
                    self.current = self.start;
                    self.done = true;
                }
            }
            ProblemKind::Cvrp => {
                if node == DEPOT {
                    self.remaining_capacity = inst.capacity.unwrap();
                    self.done = self.visited_count == inst.n();
                } else {
                    self.remaining_capacity -= inst.demand(node);
                }
            }
            ProblemKind::Op => {
                self.remaining_budget -= d;
                self.done = node == DEPOT;
            }
        }
        Ok(())
    }

    pub fn finalize_reward(&self) -> Result<f64, EnvError> {
        if !self.done {
            return Err(EnvError::NotDone);
        }
        Ok(match self.inst.kind {
            ProblemKind::Tsp | ProblemKind::Cvrp => -self.traveled,
            ProblemKind::Op => {
                if self.traveled <= self.inst.budget.unwrap() + BUDGET_TOL {
                    (1..self.inst.n()).filter(|&j| self.visited[j]).map(|j| self.inst.prize(j)).sum()
                } else {
                    0.0
                }
            }
        })
    }
}

/// Sum of consecutive edge lengths along a node list.
pub fn route_length(inst: &RoutingInstance, route: &[usize]) -> f64 {
    route.windows(2).map(|w| inst.d(w[0], w[1])).sum()
}

/// Replays a complete route through a fresh environment and returns its
/// reward. Fails if any move is illegal or the route does not terminate
/// exactly at its last element.
pub fn replay_route(inst: &RoutingInstance, route: &[usize]) -> Result<f64, EnvError> {
    let (&start, rest) = route.split_first().ok_or(EnvError::NotDone)?;
    let mut state = EnvState::reset(inst, start)?;
    // TSP tours close themselves, so the final return is not a move.
    let moves = match inst.kind {
        ProblemKind::Tsp => rest.split_last().map_or(rest, |(_, init)| init),
        _ => rest,
    };
    for &node in moves {
        state.step(node)?;
    }
    if state.route() != route {
        return Err(EnvError::NotDone);
    }
    state.finalize_reward()
}
