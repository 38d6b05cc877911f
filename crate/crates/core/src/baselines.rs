//! Classical construction heuristics and exact subset-DP solvers for small
//! instances. All heuristics start at node 0 and break ties by lowest index.

use thiserror::Error;

use crate::env::{replay_route, route_length, BUDGET_TOL, DEPOT};
use crate::instance::{DistanceMatrix, Distribution, ProblemKind, RoutingInstance};

pub const HELD_KARP_MAX_N: usize = 16;
pub const EXACT_OP_MAX_N: usize = 12;
pub const EXACT_CVRP_MAX_N: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{solver} supports at most {max} nodes, got {n}")]
    SizeLimit { solver: &'static str, n: usize, max: usize },
    #[error("{solver} needs a {expected} instance, got {got}")]
    WrongKind { solver: &'static str, expected: ProblemKind, got: ProblemKind },
    #[error("no path from {from} to {target}")]
    NoPath { from: usize, target: usize },
}

/// A complete route with its objective: tour length for TSP/CVRP, collected
/// prize for OP. CVRP routes revisit the depot between subtours.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub route: Vec<usize>,
    pub objective: f64,
    pub feasible: bool,
}

impl Solution {
    /// Recomputes objective and feasibility of `route` from scratch.
    pub fn evaluate(inst: &RoutingInstance, route: Vec<usize>) -> Self {
        let feasible_moves = replay_route(inst, &route).is_ok();
        let length = route_length(inst, &route);
        let (objective, feasible) = match inst.kind {
            ProblemKind::Tsp | ProblemKind::Cvrp => (length, feasible_moves),
            ProblemKind::Op => {
                let within = length <= inst.budget.unwrap_or(0.0) + BUDGET_TOL;
                let prize = if within { collected_prize(inst, &route) } else { 0.0 };
                (prize, feasible_moves && within)
            }
        };
        Self { route, objective, feasible }
    }

    /// The depot-delimited subtours of a CVRP route.
    pub fn subtours(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        for &v in self.route.iter().skip(1) {
            if v == DEPOT {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            } else {
                cur.push(v);
            }
        }
        out
    }
}

/// Sum of prizes of the distinct customers on a route, in index order.
pub fn collected_prize(inst: &RoutingInstance, route: &[usize]) -> f64 {
    let mut seen = vec![false; inst.n()];
    for &v in route {
        seen[v] = true;
    }
    (1..inst.n()).filter(|&j| seen[j]).map(|j| inst.prize(j)).sum()
}

fn require(inst: &RoutingInstance, solver: &'static str, kind: ProblemKind) -> Result<(), OracleError> {
    if inst.kind != kind {
        return Err(OracleError::WrongKind { solver, expected: kind, got: inst.kind });
    }
    Ok(())
}

fn limit(inst: &RoutingInstance, solver: &'static str, max: usize) -> Result<(), OracleError> {
    if inst.n() > max {
        return Err(OracleError::SizeLimit { solver, n: inst.n(), max });
    }
    Ok(())
}

fn close_tour(inst: &RoutingInstance, mut tour: Vec<usize>) -> Solution {
    tour.push(tour[0]);
    Solution::evaluate(inst, tour)
}

pub fn nearest_neighbor(inst: &RoutingInstance) -> Result<Solution, OracleError> {
    require(inst, "nearest_neighbor", ProblemKind::Tsp)?;
    let n = inst.n();
    let mut visited = vec![false; n];
    let mut tour = vec![0];
    visited[0] = true;
    let mut cur = 0;
    for _ in 1..n {
        let mut best: Option<usize> = None;
        for j in (0..n).filter(|&j| !visited[j]) {
            if best.map_or(true, |b| inst.d(cur, j) < inst.d(cur, b)) {
                best = Some(j);
            }
        }
        let next = best.unwrap();
        visited[next] = true;
        tour.push(next);
        cur = next;
    }
    Ok(close_tour(inst, tour))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum InsertionRule {
    Nearest,
    Farthest,
}

fn insertion(inst: &RoutingInstance, rule: InsertionRule) -> Result<Solution, OracleError> {
    require(inst, "insertion", ProblemKind::Tsp)?;
    let n = inst.n();
    if n < 3 {
        return Ok(close_tour(inst, (0..n).collect()));
    }
    let better = |a: f64, b: f64| match rule {
        InsertionRule::Nearest => a < b,
        InsertionRule::Farthest => a > b,
    };
    let mut in_tour = vec![false; n];
    // Distance from the subtour to each outside node: min over tour nodes t of d(t, v).
    let mut to_tour: Vec<f64> = (0..n).map(|v| inst.d(0, v)).collect();
    in_tour[0] = true;
    let mut tour = vec![0];
    for _ in 1..n {
        let mut pick: Option<usize> = None;
        for v in (0..n).filter(|&v| !in_tour[v]) {
            if pick.map_or(true, |p| better(to_tour[v], to_tour[p])) {
                pick = Some(v);
            }
        }
        let v = pick.unwrap();
        let len = tour.len();
        let mut best_pos = 0;
        let mut best_cost = f64::INFINITY;
        for p in 0..len {
            let (a, b) = (tour[p], tour[(p + 1) % len]);
            let cost = inst.d(a, v) + inst.d(v, b) - inst.d(a, b);
            if cost < best_cost {
                best_cost = cost;
                best_pos = p;
            }
        }
        tour.insert(best_pos + 1, v);
        in_tour[v] = true;
        for u in 0..n {
            to_tour[u] = to_tour[u].min(inst.d(v, u));
        }
    }
    Ok(close_tour(inst, tour))
}

/// Grows a directed subtour from node 0, always adding the outside node
/// closest to the subtour at its cheapest insertion position.
pub fn nearest_insertion(inst: &RoutingInstance) -> Result<Solution, OracleError> {
    insertion(inst, InsertionRule::Nearest)
}

/// As [`nearest_insertion`] but adds the outside node farthest from the subtour.
pub fn farthest_insertion(inst: &RoutingInstance) -> Result<Solution, OracleError> {
    insertion(inst, InsertionRule::Farthest)
}

/// Shortest directed path from `source` to `target` whose intermediate nodes
/// all satisfy `allowed`. Label-setting on the complete digraph, O(n²).
pub fn dijkstra_shortest_path(
    dist: &DistanceMatrix,
    source: usize,
    target: usize,
    allowed: &[bool],
) -> Result<(f64, Vec<usize>), OracleError> {
    let n = dist.n();
    if source == target {
        return Ok((0.0, vec![source]));
    }
    let mut label = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    label[source] = 0.0;
    loop {
        let mut u = None;
        for v in 0..n {
            if !settled[v] && label[v].is_finite() && u.map_or(true, |w: usize| label[v] < label[w]) {
                u = Some(v);
            }
        }
        let Some(u) = u else { break };
        settled[u] = true;
        if u == target {
            break;
        }
        if u != source && !allowed[u] {
            continue;
        }
        for v in 0..n {
            if !settled[v] && v != u {
                let cand = label[u] + dist.get(u, v);
                if cand < label[v] {
                    label[v] = cand;
                    prev[v] = u;
                }
            }
        }
    }
    if !label[target].is_finite() {
        return Err(OracleError::NoPath { from: source, target });
    }
    let mut path = vec![target];
    while *path.last().unwrap() != source {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    Ok((label[target], path))
}

/// Shortest distances from every node to `target` using only `allowed`
/// intermediates, with the successor on each path.
pub fn shortest_paths_to(dist: &DistanceMatrix, target: usize, allowed: &[bool]) -> (Vec<f64>, Vec<usize>) {
    let n = dist.n();
    let mut label = vec![f64::INFINITY; n];
    let mut next = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    label[target] = 0.0;
    loop {
        let mut u = None;
        for v in 0..n {
            if !settled[v] && label[v].is_finite() && u.map_or(true, |w: usize| label[v] < label[w]) {
                u = Some(v);
            }
        }
        let Some(u) = u else { break };
        settled[u] = true;
        if u != target && !allowed[u] {
            continue;
        }
        for v in 0..n {
            if !settled[v] && v != u {
                let cand = dist.get(v, u) + label[u];
                if cand < label[v] {
                    label[v] = cand;
                    next[v] = u;
                }
            }
        }
    }
    (label, next)
}

fn path_via(next: &[usize], from: usize, target: usize) -> Vec<usize> {
    let mut path = vec![from];
    while *path.last().unwrap() != target {
        path.push(next[*path.last().unwrap()]);
    }
    path
}

/// Prize-per-distance greedy for OP. A move is allowed only if the depot
/// stays reachable within the remaining budget: by the direct edge on
/// EUC/TMAT, by a shortest path through unvisited customers on XASY.
pub fn greedy_op(inst: &RoutingInstance) -> Result<Solution, OracleError> {
    require(inst, "greedy_op", ProblemKind::Op)?;
    let n = inst.n();
    let multi_hop = inst.distribution == Distribution::Xasy;
    let mut remaining = inst.budget.unwrap_or(0.0);
    let mut visited = vec![false; n];
    visited[DEPOT] = true;
    let mut route = vec![DEPOT];
    let mut cur = DEPOT;
    loop {
        let unvisited: Vec<bool> = visited.iter().map(|v| !v).collect();
        let (to_depot, next) = if multi_hop {
            shortest_paths_to(&inst.dist, DEPOT, &unvisited)
        } else {
            ((0..n).map(|j| inst.d(j, DEPOT)).collect(), vec![DEPOT; n])
        };
        let mut pick: Option<(usize, f64)> = None;
        for j in (1..n).filter(|&j| !visited[j]) {
            let d = inst.d(cur, j);
            if d + to_depot[j] > remaining + BUDGET_TOL {
                continue;
            }
            let ratio = if d > 0.0 { inst.prize(j) / d } else { f64::INFINITY };
            if pick.map_or(true, |(_, r)| ratio > r) {
                pick = Some((j, ratio));
            }
        }
        match pick {
            Some((j, _)) => {
                remaining -= inst.d(cur, j);
                visited[j] = true;
                route.push(j);
                cur = j;
            }
            None => {
                let back = if multi_hop { path_via(&next, cur, DEPOT) } else { vec![cur, DEPOT] };
                route.extend_from_slice(&back[1..]);
                if cur == DEPOT {
                    route.push(DEPOT);
                }
                break;
            }
        }
    }
    Ok(Solution::evaluate(inst, route))
}

/// `dp[mask][j]`: shortest path from the depot through exactly the nodes of
/// `mask` (bit `k` = node `k+1`) ending at node `j+1`.
struct PathTable {
    m: usize,
    cost: Vec<f64>,
    parent: Vec<u8>,
}

impl PathTable {
    fn build(inst: &RoutingInstance, feasible: impl Fn(usize) -> bool) -> Self {
        let m = inst.n() - 1;
        let size = 1usize << m;
        let mut cost = vec![f64::INFINITY; size * m];
        let mut parent = vec![u8::MAX; size * m];
        for j in 0..m {
            if feasible(1 << j) {
                cost[(1 << j) * m + j] = inst.d(DEPOT, j + 1);
            }
        }
        for mask in 1..size {
            if !feasible(mask) {
                continue;
            }
            for j in 0..m {
                let here = cost[mask * m + j];
                if mask & (1 << j) == 0 || !here.is_finite() {
                    continue;
                }
                for k in 0..m {
                    if mask & (1 << k) != 0 {
                        continue;
                    }
                    let next = mask | (1 << k);
                    if !feasible(next) {
                        continue;
                    }
                    let cand = here + inst.d(j + 1, k + 1);
                    if cand < cost[next * m + k] {
                        cost[next * m + k] = cand;
                        parent[next * m + k] = j as u8;
                    }
                }
            }
        }
        Self { m, cost, parent }
    }

    fn get(&self, mask: usize, j: usize) -> f64 {
        self.cost[mask * self.m + j]
    }

    /// Nodes of the optimal path for `(mask, last)` in visiting order.
    fn path(&self, mut mask: usize, mut j: usize) -> Vec<usize> {
        let mut out = Vec::new();
        loop {
            out.push(j + 1);
            let p = self.parent[mask * self.m + j];
            mask &= !(1 << j);
            if p == u8::MAX {
                break;
            }
            j = p as usize;
        }
        out.reverse();
        out
    }

    /// Cheapest closed route over `mask` returning to the depot by the direct edge.
    fn best_cycle(&self, inst: &RoutingInstance, mask: usize) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in (0..self.m).filter(|&j| mask & (1 << j) != 0) {
            let c = self.get(mask, j) + inst.d(j + 1, DEPOT);
            if c.is_finite() && best.map_or(true, |(b, _)| c < b) {
                best = Some((c, j));
            }
        }
        best
    }
}

/// Exact minimum directed Hamiltonian cycle, O(n² 2ⁿ).
pub fn held_karp_tsp(inst: &RoutingInstance) -> Result<Solution, OracleError> {
    require(inst, "held_karp_tsp", ProblemKind::Tsp)?;
    limit(inst, "held_karp_tsp", HELD_KARP_MAX_N)?;
    let table = PathTable::build(inst, |_| true);
    let full = (1usize << table.m) - 1;
    let (_, last) = table.best_cycle(inst, full).expect("complete digraph");
    let mut route = vec![DEPOT];
    route.extend(table.path(full, last));
    route.push(DEPOT);
    Ok(Solution::evaluate(inst, route))
}

/// Exact OP optimum: the maximum-prize simple cycle through the depot within
/// budget (ties broken by shorter length).
pub fn exact_op_small(inst: &RoutingInstance) -> Result<Solution, OracleError> {
    require(inst, "exact_op_small", ProblemKind::Op)?;
    limit(inst, "exact_op_small", EXACT_OP_MAX_N)?;
    let budget = inst.budget.unwrap_or(0.0);
    let table = PathTable::build(inst, |_| true);
    let m = table.m;
    let mut best_prize = 0.0;
    let mut best_len = 0.0;
    let mut best: Option<(usize, usize)> = None;
    for mask in 1..(1usize << m) {
        let Some((len, last)) = table.best_cycle(inst, mask) else { continue };
        if len > budget + BUDGET_TOL {
            continue;
        }
        let prize: f64 = (0..m).filter(|&k| mask & (1 << k) != 0).map(|k| inst.prize(k + 1)).sum();
        if prize > best_prize || (prize == best_prize && best.is_some() && len < best_len) {
            best_prize = prize;
            best_len = len;
            best = Some((mask, last));
        }
    }
    let mut route = vec![DEPOT];
    if let Some((mask, last)) = best {
        route.extend(table.path(mask, last));
    }
    route.push(DEPOT);
    Ok(Solution::evaluate(inst, route))
}

/// Exact CVRP optimum: cheapest capacity-feasible route for every customer
/// subset, then an optimal set partition over those routes.
pub fn exact_cvrp_small(inst: &RoutingInstance) -> Result<Solution, OracleError> {
    require(inst, "exact_cvrp_small", ProblemKind::Cvrp)?;
    limit(inst, "exact_cvrp_small", EXACT_CVRP_MAX_N)?;
    let m = inst.n() - 1;
    let cap = inst.capacity.unwrap_or(0);
    let load = |mask: usize| -> u32 { (0..m).filter(|&k| mask & (1 << k) != 0).map(|k| inst.demand(k + 1)).sum() };
    let table = PathTable::build(inst, |mask| load(mask) <= cap);
    let size = 1usize << m;
    let route_cost: Vec<Option<(f64, usize)>> =
        (0..size).map(|mask| if mask == 0 { None } else { table.best_cycle(inst, mask) }).collect();

    // best[u]: cheapest cover of customer set u; choice[u]: the route containing u's lowest customer.
    let mut best = vec![f64::INFINITY; size];
    let mut choice = vec![0usize; size];
    best[0] = 0.0;
    for u in 1..size {
        let low = u & u.wrapping_neg();
        let rest = u & !low;
        let mut sub = rest;
        loop {
            let s = sub | low;
            if let Some((c, _)) = route_cost[s] {
                let cand = c + best[u & !s];
                if cand < best[u] {
                    best[u] = cand;
                    choice[u] = s;
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    let mut route = vec![DEPOT];
    let mut u = size - 1;
    while u != 0 {
        let s = choice[u];
        let (_, last) = route_cost[s].unwrap();
        route.extend(table.path(s, last));
        route.push(DEPOT);
        u &= !s;
    }
    Ok(Solution::evaluate(inst, route))
}
