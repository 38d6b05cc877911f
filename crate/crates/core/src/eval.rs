//! Inference-time scale augmentation and optimality-gap reports.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParameterStore;
use crate::baselines::Solution;
use crate::decoder::{greedy_pomo, PolicyConfig};
use crate::env::DEPOT;
use crate::instance::{scale_instance, ProblemKind, RoutingInstance};
use crate::rng::SplitMix64;
use crate::Error;

pub const CSV_HEADER: [&str; 6] = ["instance", "objective", "reference", "gap", "feasible", "millis"];

/// `k` scale factors evenly spaced over `[0.5, 1.5]`; `k = 1` gives `{1.0}`.
pub fn augmentation_factors(k: usize) -> Result<Vec<f64>, Error> {
    match k {
        0 => Err(Error::Config("augmentation count must be at least 1".into())),
        1 => Ok(vec![1.0]),
        _ => Ok((0..k).map(|i| 0.5 + i as f64 / (k - 1) as f64).collect()),
    }
}

/// True when `a` is strictly better than `b` for this problem kind.
pub fn improves(kind: ProblemKind, a: f64, b: f64) -> bool {
    match kind {
        ProblemKind::Tsp | ProblemKind::Cvrp => a < b,
        ProblemKind::Op => a > b,
    }
}

/// Best feasible greedy multi-start solution over `k` scaled copies of the
/// instance. Every route is re-evaluated on the original instance.
pub fn augmented_solve(store: &ParameterStore, policy: &PolicyConfig, inst: &RoutingInstance, k: usize) -> Result<Solution, Error> {
    let mut best: Option<Solution> = None;
    for factor in augmentation_factors(k)? {
        let scaled = scale_instance(inst, factor)?;
        for trace in greedy_pomo(store, policy, &scaled)? {
            let s = Solution::evaluate(inst, trace.route);
            if !s.feasible {
                continue;
            }
            if best.as_ref().map_or(true, |b| improves(inst.kind, s.objective, b.objective)) {
                best = Some(s);
            }
        }
    }
    Ok(best.unwrap_or_else(|| Solution::evaluate(inst, vec![DEPOT, DEPOT])))
}

/// Relative gap of `objective` to `reference`; negative means better than
/// the reference for every kind. `None` when the reference is not positive.
pub fn gap(kind: ProblemKind, objective: f64, reference: f64) -> Option<f64> {
    if !(reference > 0.0 && reference.is_finite()) {
        return None;
    }
    let rel = (objective - reference) / reference;
    Some(match kind {
        ProblemKind::Tsp | ProblemKind::Cvrp => rel,
        ProblemKind::Op => -rel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub instance: usize,
    pub objective: f64,
    pub reference: f64,
    /// Missing when the reference is infeasible or zero.
    pub gap: Option<f64>,
    pub feasible: bool,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub kind: ProblemKind,
    pub rows: Vec<GapRow>,
}

impl GapReport {
    pub fn included(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().filter_map(|r| r.gap)
    }

    pub fn excluded(&self) -> usize {
        self.rows.iter().filter(|r| r.gap.is_none()).count()
    }

    pub fn mean_gap(&self) -> Option<f64> {
        let gaps: Vec<f64> = self.included().collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    pub fn mean_objective(&self) -> f64 {
        self.rows.iter().map(|r| r.objective).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn total_millis(&self) -> f64 {
        self.rows.iter().map(|r| r.millis).sum()
    }

    /// Percentile bootstrap interval for the mean gap.
    pub fn bootstrap_ci(&self, resamples: usize, level: f64, seed: u64) -> Option<(f64, f64)> {
        let gaps: Vec<f64> = self.included().collect();
        if gaps.is_empty() || resamples == 0 {
            return None;
        }
        let mut rng = SplitMix64::new(seed);
        let mut means: Vec<f64> = (0..resamples)
            .map(|_| (0..gaps.len()).map(|_| gaps[rng.below(gaps.len() as u64) as usize]).sum::<f64>() / gaps.len() as f64)
            .collect();
        means.sort_by(f64::total_cmp);
        let tail = (1.0 - level) / 2.0;
        let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
        Some((at(tail), at(1.0 - tail)))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.instance.to_string(),
                r.objective.to_string(),
                r.reference.to_string(),
                r.gap.map(|g| g.to_string()).unwrap_or_default(),
                r.feasible.to_string(),
                r.millis.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn from_csv(kind: ProblemKind, text: &str) -> Result<Self, Error> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| Error::Config(format!("gap report: {e}")))?;
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Config(format!("gap report: unexpected header {:?}", header.iter().collect::<Vec<_>>())));
        }
        let rows = r
            .deserialize()
            .collect::<Result<Vec<GapRow>, _>>()
            .map_err(|e| Error::Config(format!("gap report: {e}")))?;
        Ok(Self { kind, rows })
    }

    /// Human-readable table followed by the aggregate line.
    pub fn table(&self) -> String {
        let mut out = format!("{:>8} {:>14} {:>14} {:>10} {:>8} {:>10}\n", "instance", "objective", "reference", "gap%", "feasible", "millis");
        for r in &self.rows {
            let g = r.gap.map_or("-".to_string(), |g| format!("{:.3}", 100.0 * g));
            out += &format!("{:>8} {:>14.6} {:>14.6} {:>10} {:>8} {:>10.2}\n", r.instance, r.objective, r.reference, g, r.feasible, r.millis);
        }
        out += &self.summary();
        out
    }

    pub fn summary(&self) -> String {
        let mut s = match self.mean_gap() {
            Some(m) => format!("mean gap {:.4}% over {} instances", 100.0 * m, self.rows.len() - self.excluded()),
            None => "mean gap unavailable".to_string(),
        };
        if let Some((lo, hi)) = self.bootstrap_ci(1000, 0.95, 0) {
            s += &format!(", 95% CI [{:.4}%, {:.4}%]", 100.0 * lo, 100.0 * hi);
        }
        if self.excluded() > 0 {
            s += &format!(", {} excluded", self.excluded());
        }
        s += &format!(", total {:.1} ms\n", self.total_millis());
        s
    }
}

/// Runs `solver` and `reference` on every instance and collects gaps.
/// Instances whose reference is infeasible or zero are kept but excluded
/// from the mean.
pub fn evaluate_dataset<S, R>(data: &[RoutingInstance], solver: S, reference: R) -> Result<GapReport, Error>
where
    S: Fn(&RoutingInstance) -> Result<Solution, Error> + Sync,
    R: Fn(&RoutingInstance) -> Result<Solution, Error> + Sync,
{
    let kind = data.first().map_or(ProblemKind::Tsp, |i| i.kind);
    let rows = data
        .par_iter()
        .enumerate()
        .map(|(idx, inst)| -> Result<GapRow, Error> {
            let started = Instant::now();
            let s = solver(inst)?;
            let millis = started.elapsed().as_secs_f64() * 1e3;
            let r = reference(inst)?;
            // re-check against the route itself rather than trusting the solver
            let checked = Solution::evaluate(inst, s.route.clone());
            let gap = if r.feasible { gap(inst.kind, checked.objective, r.objective) } else { None };
            Ok(GapRow { instance: idx, objective: checked.objective, reference: r.objective, gap, feasible: checked.feasible, millis })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GapReport { kind, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{held_karp_tsp, nearest_neighbor};
    use crate::decoder::PolicyConfig;
    use crate::encoder::{GreatConfig, Variant};
    use crate::instance::{gen_xasy, DistanceMatrix, Distribution};

    #[test]
    fn factor_grids() {
        assert_eq!(augmentation_factors(1).unwrap(), vec![1.0]);
        let nine = augmentation_factors(9).unwrap();
        assert_eq!(nine.len(), 9);
        for (i, f) in nine.iter().enumerate() {
            assert_eq!(*f, 0.5 + 0.125 * i as f64);
        }
        let big = augmentation_factors(33).unwrap();
        assert!(nine.iter().all(|f| big.contains(f)));
        assert!(augmentation_factors(0).is_err());
    }

    #[test]
    fn gap_signs() {
        assert_eq!(gap(ProblemKind::Tsp, 1.1, 1.0).map(|g| (g * 1e6).round()), Some(100000.0));
        assert_eq!(gap(ProblemKind::Op, 1.2, 1.0).map(|g| (g * 1e6).round()), Some(-200000.0));
        assert_eq!(gap(ProblemKind::Op, 1.0, 0.0), None);
        assert_eq!(gap(ProblemKind::Cvrp, 2.0, 2.0), Some(0.0));
    }

    #[test]
    fn worked_matrix_gap_is_zero() {
        let d = vec![0.0, 0.2, 0.9, 0.4, 0.0, 0.1, 0.5, 0.8, 0.0];
        let inst = RoutingInstance::tsp(Distribution::Xasy, DistanceMatrix::from_rows(3, d).unwrap(), 0);
        let r = evaluate_dataset(&[inst], |i| Ok(nearest_neighbor(i)?), |i| Ok(held_karp_tsp(i)?)).unwrap();
        assert_eq!(r.rows[0].gap, Some(0.0));
    }

    #[test]
    fn csv_round_trip_and_self_reference() {
        let data: Vec<_> = (0..6).map(|s| gen_xasy(7, s).unwrap()).collect();
        let r = evaluate_dataset(&data, |i| Ok(nearest_neighbor(i)?), |i| Ok(held_karp_tsp(i)?)).unwrap();
        let back = GapReport::from_csv(ProblemKind::Tsp, &r.to_csv()).unwrap();
        assert_eq!(back, r);
        assert!((back.mean_gap().unwrap() - r.mean_gap().unwrap()).abs() < 1e-9);
        let (lo, hi) = r.bootstrap_ci(500, 0.95, 1).unwrap();
        assert!(lo <= r.mean_gap().unwrap() && r.mean_gap().unwrap() <= hi);
        let same = evaluate_dataset(&data, |i| Ok(held_karp_tsp(i)?), |i| Ok(held_karp_tsp(i)?)).unwrap();
        assert!(same.included().all(|g| g == 0.0));
        assert!(GapReport::from_csv(ProblemKind::Tsp, "a,b\n1,2\n").is_err());
    }

    #[test]
    fn augmentation_never_hurts() {
        let policy = PolicyConfig::new(GreatConfig { hidden_dim: 8, layers: 1, heads: 2, variant: Variant::Nb, symmetric_mode: false }, ProblemKind::Tsp);
        let store = policy.init_params(4).unwrap();
        for seed in 0..5 {
            let inst = gen_xasy(6, seed).unwrap();
            let one = augmented_solve(&store, &policy, &inst, 1).unwrap();
            let nine = augmented_solve(&store, &policy, &inst, 9).unwrap();
            let plain = greedy_pomo(&store, &policy, &inst).unwrap();
            let best_plain = plain.iter().map(|t| -t.reward).fold(f64::INFINITY, f64::min);
            assert_eq!(one.objective, best_plain);
            assert!(nine.objective <= one.objective);
        }
    }
}
