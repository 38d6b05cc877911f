//! Brute-force reference solvers and route checkers shared by the
//! integration tests. Nothing here calls the library's solvers.

#![allow(dead_code)]

use great_core::instance::{DistanceMatrix, ProblemKind, RoutingInstance};

pub const TOL: f64 = 1e-9;

/// Visits every permutation of `items` (Heap's algorithm).
pub fn for_each_permutation(items: &mut [usize], f: &mut impl FnMut(&[usize])) {
    fn heap(k: usize, items: &mut [usize], f: &mut impl FnMut(&[usize])) {
        if k <= 1 {
            f(items);
            return;
        }
        for i in 0..k - 1 {
            heap(k - 1, items, f);
            if k % 2 == 0 {
                items.swap(i, k - 1);
            } else {
                items.swap(0, k - 1);
            }
        }
        heap(k - 1, items, f);
    }
    let k = items.len();
    heap(k, items, f);
}

/// Length of depot → seq → depot, summed left to right.
pub fn cycle_len(inst: &RoutingInstance, seq: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut prev = 0;
    for &v in seq {
        total += inst.d(prev, v);
        prev = v;
    }
    total + inst.d(prev, 0)
}

pub fn brute_tsp(inst: &RoutingInstance) -> f64 {
    let mut rest: Vec<usize> = (1..inst.n()).collect();
    let mut best = f64::INFINITY;
    for_each_permutation(&mut rest, &mut |p| best = best.min(cycle_len(inst, p)));
    best
}

/// Every customer order, cut into consecutive capacity-feasible routes in
/// every possible way.
pub fn brute_cvrp(inst: &RoutingInstance) -> f64 {
    let cap = inst.capacity.unwrap();
    let mut rest: Vec<usize> = (1..inst.n()).collect();
    let m = rest.len();
    let mut best = f64::INFINITY;
    for_each_permutation(&mut rest, &mut |p| {
        for cuts in 0..(1u32 << (m - 1)) {
            let mut total = 0.0;
            let mut start = 0;
            let mut ok = true;
            for k in 0..m {
                let end_here = k == m - 1 || cuts & (1 << k) != 0;
                if end_here {
                    let seg = &p[start..=k];
                    if seg.iter().map(|&c| inst.demand(c)).sum::<u32>() > cap {
                        ok = false;
                        break;
                    }
                    total += cycle_len(inst, seg);
                    start = k + 1;
                }
            }
            if ok {
                best = best.min(total);
            }
        }
    });
    best
}

/// Every ordered sequence of distinct customers whose closed length fits
/// the budget; returns the best prize.
pub fn brute_op(inst: &RoutingInstance) -> f64 {
    fn rec(inst: &RoutingInstance, seq: &mut Vec<usize>, used: &mut Vec<bool>, budget: f64, best: &mut f64) {
        if cycle_len(inst, seq) <= budget + 1e-9 {
            let mut chosen: Vec<usize> = seq.clone();
            chosen.sort_unstable();
            let prize: f64 = chosen.iter().map(|&c| inst.prize(c)).sum();
            if prize > *best {
                *best = prize;
            }
        }
        for c in 1..inst.n() {
            if !used[c] {
                used[c] = true;
                seq.push(c);
                rec(inst, seq, used, budget, best);
                seq.pop();
                used[c] = false;
            }
        }
    }
    let mut best = 0.0;
    rec(inst, &mut Vec::new(), &mut vec![false; inst.n()], inst.budget.unwrap(), &mut best);
    best
}

pub fn path_len(inst: &RoutingInstance, route: &[usize]) -> f64 {
    route.windows(2).map(|w| inst.d(w[0], w[1])).sum()
}

/// Checks a closed TSP route visits every node exactly once.
pub fn is_hamiltonian_cycle(n: usize, route: &[usize]) -> bool {
    if route.len() != n + 1 || route.first() != route.last() {
        return false;
    }
    let mut seen = vec![false; n];
    for &v in &route[..n] {
        if v >= n || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    true
}

/// Checks a CVRP route starts and ends at the depot, serves every customer
/// exactly once and never exceeds capacity between depot visits.
pub fn cvrp_route_ok(inst: &RoutingInstance, route: &[usize]) -> bool {
    if route.first() != Some(&0) || route.last() != Some(&0) {
        return false;
    }
    let cap = inst.capacity.unwrap();
    let mut served = vec![false; inst.n()];
    let mut load = 0;
    for &v in &route[1..] {
        if v == 0 {
            load = 0;
            continue;
        }
        if served[v] {
            return false;
        }
        served[v] = true;
        load += inst.demand(v);
        if load > cap {
            return false;
        }
    }
    served[1..].iter().all(|&s| s)
}

/// Relabels nodes: node `i` of `inst` becomes node `perm[i]`.
pub fn relabel(inst: &RoutingInstance, perm: &[usize]) -> RoutingInstance {
    assert_eq!(inst.kind, ProblemKind::Tsp);
    let n = inst.n();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[perm[i] * n + perm[j]] = inst.d(i, j);
        }
    }
    RoutingInstance::tsp(inst.distribution, DistanceMatrix::from_rows(n, d).unwrap(), inst.seed)
}
