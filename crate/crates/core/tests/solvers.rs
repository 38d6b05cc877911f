mod common;

use great_core::baselines::{exact_cvrp_small, exact_op_small, farthest_insertion, greedy_op, held_karp_tsp, nearest_insertion, nearest_neighbor};
use great_core::instance::{generate_instance, parse_instances, serialize_instances, Distribution, ProblemKind};
use proptest::prelude::*;

use common::*;

fn distribution() -> impl Strategy<Value = Distribution> {
    prop_oneof![Just(Distribution::Euc), Just(Distribution::Tmat), Just(Distribution::Xasy)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn held_karp_matches_permutations(dist in distribution(), n in 3usize..8, seed in any::<u64>()) {
        let inst = generate_instance(ProblemKind::Tsp, dist, n, seed).unwrap();
        let sol = held_karp_tsp(&inst).unwrap();
        prop_assert!(is_hamiltonian_cycle(n, &sol.route));
        prop_assert!((path_len(&inst, &sol.route) - sol.objective).abs() < TOL);
        prop_assert!((sol.objective - brute_tsp(&inst)).abs() < TOL);
    }

    #[test]
    fn heuristics_are_feasible_and_no_better_than_optimal(dist in distribution(), n in 3usize..8, seed in any::<u64>()) {
        let inst = generate_instance(ProblemKind::Tsp, dist, n, seed).unwrap();
        let opt = brute_tsp(&inst);
        for sol in [nearest_neighbor(&inst), nearest_insertion(&inst), farthest_insertion(&inst)] {
            let sol = sol.unwrap();
            prop_assert!(is_hamiltonian_cycle(n, &sol.route));
            prop_assert!((path_len(&inst, &sol.route) - sol.objective).abs() < TOL);
            prop_assert!(sol.objective >= opt - TOL);
        }
    }

    #[test]
    fn exact_cvrp_matches_brute_force(dist in distribution(), n in 3usize..7, seed in any::<u64>()) {
        let inst = generate_instance(ProblemKind::Cvrp, dist, n, seed).unwrap();
        let sol = exact_cvrp_small(&inst).unwrap();
        prop_assert!(cvrp_route_ok(&inst, &sol.route));
        prop_assert!((path_len(&inst, &sol.route) - sol.objective).abs() < TOL);
        prop_assert!((sol.objective - brute_cvrp(&inst)).abs() < TOL);
    }

    #[test]
    fn exact_op_dominates_greedy(dist in distribution(), n in 3usize..8, seed in any::<u64>()) {
        let inst = generate_instance(ProblemKind::Op, dist, n, seed).unwrap();
        let exact = exact_op_small(&inst).unwrap();
        let greedy = greedy_op(&inst).unwrap();
        prop_assert!((exact.objective - brute_op(&inst)).abs() < TOL);
        prop_assert!(path_len(&inst, &exact.route) <= inst.budget.unwrap() + TOL);
        prop_assert!(greedy.feasible);
        prop_assert!(greedy.objective <= exact.objective + TOL);
    }

    #[test]
    fn instance_files_round_trip(dist in distribution(), n in 2usize..12, seed in any::<u64>()) {
        let instances: Vec<_> = [ProblemKind::Tsp, ProblemKind::Cvrp, ProblemKind::Op]
            .into_iter()
            .map(|k| generate_instance(k, dist, n, seed).unwrap())
            .collect();
        let text = serialize_instances(&instances);
        prop_assert_eq!(parse_instances(text.as_bytes()).unwrap(), instances);
    }
}

#[test]
fn relabeling_preserves_the_optimum() {
    let inst = generate_instance(ProblemKind::Tsp, Distribution::Xasy, 7, 11).unwrap();
    let perm = [0, 3, 1, 6, 2, 5, 4];
    let moved = relabel(&inst, &perm);
    let a = held_karp_tsp(&inst).unwrap().objective;
    let b = held_karp_tsp(&moved).unwrap().objective;
    assert!((a - b).abs() < TOL);
}
