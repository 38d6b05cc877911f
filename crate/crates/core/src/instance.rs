//! Routing instances: generators for the EUC, TMAT and XASY distance
//! distributions, CVRP/OP attachments, scaling, and the JSON-lines file format.
//!
//! Node 0 is the depot for CVRP and OP.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

pub const DEFAULT_CAPACITY: u32 = 50;
pub const BUDGET_EUC_TMAT: f64 = 4.0;
pub const BUDGET_XASY: f64 = 0.4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("invalid instance size {0}: at least 2 nodes required")]
    InvalidSize(usize),
    #[error("invalid scale factor {0}: must be positive and finite")]
    InvalidFactor(f64),
    #[error("expected a {expected} instance, got {got}")]
    WrongKind { expected: ProblemKind, got: ProblemKind },
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Tsp,
    Cvrp,
    Op,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Euc,
    Tmat,
    Xasy,
}

impl ProblemKind {
    pub fn tag(self) -> &'static str {
        match self {
            ProblemKind::Tsp => "tsp",
            ProblemKind::Cvrp => "cvrp",
            ProblemKind::Op => "op",
        }
    }
}

impl Distribution {
    pub fn tag(self) -> &'static str {
        match self {
            Distribution::Euc => "euc",
            Distribution::Tmat => "tmat",
            Distribution::Xasy => "xasy",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ProblemKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "tsp" => Ok(ProblemKind::Tsp),
            "cvrp" => Ok(ProblemKind::Cvrp),
            "op" => Ok(ProblemKind::Op),
            _ => Err(format!("unknown kind tag {s:?}")),
        }
    }
}

impl FromStr for Distribution {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "euc" => Ok(Distribution::Euc),
            "tmat" => Ok(Distribution::Tmat),
            "xasy" => Ok(Distribution::Xasy),
            _ => Err(format!("unknown distribution tag {s:?}")),
        }
    }
}

/// Dense row-major `n x n` matrix of directed distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(n: usize, d: Vec<f64>) -> Result<Self, InstanceError> {
        if n < 2 {
            return Err(InstanceError::InvalidSize(n));
        }
        if d.len() != n * n {
            return Err(InstanceError::Invalid(format!(
                "distance matrix has {} entries, expected {}",
                d.len(),
                n * n
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = d[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(InstanceError::Invalid(format!("distance d[{i}][{j}] = {v}")));
                }
                if i == j && v != 0.0 {
                    return Err(InstanceError::Invalid(format!("nonzero diagonal d[{i}][{i}] = {v}")));
                }
            }
        }
        Ok(Self { n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    pub fn max_entry(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Smallest `d[i][k] + d[k][j] - d[i][j]` over all triples.
    pub fn min_triangle_slack(&self) -> f64 {
        let n = self.n;
        let mut worst = f64::INFINITY;
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    worst = worst.min(self.get(i, k) + self.get(k, j) - self.get(i, j));
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingInstance {
    pub kind: ProblemKind,
    pub distribution: Distribution,
    pub dist: DistanceMatrix,
    pub demands: Option<Vec<u32>>,
    pub capacity: Option<u32>,
    pub prizes: Option<Vec<f64>>,
    pub budget: Option<f64>,
    pub seed: u64,
}

impl RoutingInstance {
    pub fn tsp(distribution: Distribution, dist: DistanceMatrix, seed: u64) -> Self {
        Self {
            kind: ProblemKind::Tsp,
            distribution,
            dist,
            demands: None,
            capacity: None,
            prizes: None,
            budget: None,
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.dist.n()
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist.get(i, j)
    }

    /// Checks that the optional fields match the declared kind.
    pub fn validate(&self) -> Result<(), InstanceError> {
        let n = self.n();
        match self.kind {
            ProblemKind::Tsp => Ok(()),
            ProblemKind::Cvrp => {
                let demands = self
                    .demands
                    .as_ref()
                    .ok_or_else(|| InstanceError::Invalid("CVRP instance without demands".into()))?;
                let cap = self
                    .capacity
                    .ok_or_else(|| InstanceError::Invalid("CVRP instance without capacity".into()))?;
                if demands.len() != n {
                    return Err(InstanceError::Invalid(format!(
                        "{} demands for {n} nodes",
                        demands.len()
                    )));
                }
                if demands[0] != 0 {
                    return Err(InstanceError::Invalid("depot demand must be 0".into()));
                }
                if cap == 0 || demands.iter().any(|&q| q > cap) {
                    return Err(InstanceError::Invalid("a demand exceeds the vehicle capacity".into()));
                }
                Ok(())
            }
            ProblemKind::Op => {
                let prizes = self
                    .prizes
                    .as_ref()
                    .ok_or_else(|| InstanceError::Invalid("OP instance without prizes".into()))?;
                let budget = self
                    .budget
                    .ok_or_else(|| InstanceError::Invalid("OP instance without budget".into()))?;
                if prizes.len() != n {
                    return Err(InstanceError::Invalid(format!("{} prizes for {n} nodes", prizes.len())));
                }
                if prizes[0] != 0.0 {
                    return Err(InstanceError::Invalid("depot prize must be 0".into()));
                }
                if prizes.iter().any(|p| !p.is_finite() || *p < 0.0) || !budget.is_finite() || budget < 0.0 {
                    return Err(InstanceError::Invalid("prizes and budget must be finite and nonnegative".into()));
                }
                Ok(())
            }
        }
    }

    pub fn demand(&self, node: usize) -> u32 {
        self.demands.as_ref().map_or(0, |d| d[node])
    }

    pub fn prize(&self, node: usize) -> f64 {
        self.prizes.as_ref().map_or(0.0, |p| p[node])
    }
}

fn check_size(n: usize) -> Result<(), InstanceError> {
    if n < 2 {
        Err(InstanceError::InvalidSize(n))
    } else {
        Ok(())
    }
}

/// Euclidean instance from fixed coordinates.
pub fn euclidean_from_coords(coords: &[(f64, f64)], seed: u64) -> Result<RoutingInstance, InstanceError> {
    let n = coords.len();
    check_size(n)?;
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let (dx, dy) = (coords[i].0 - coords[j].0, coords[i].1 - coords[j].1);
                d[i * n + j] = dx.hypot(dy);
            }
        }
    }
    Ok(RoutingInstance::tsp(Distribution::Euc, DistanceMatrix::from_rows(n, d)?, seed))
}

/// Uniform points in the unit square, Euclidean distances.
pub fn gen_euclidean(n: usize, seed: u64) -> Result<RoutingInstance, InstanceError> {
    check_size(n)?;
    let mut rng = SplitMix64::new(seed);
    let coords: Vec<(f64, f64)> = (0..n).map(|_| (rng.next_f64(), rng.next_f64())).collect();
    euclidean_from_coords(&coords, seed)
}

/// Off-diagonal entries drawn i.i.d. from `(0, 1)` in row-major order.
fn uniform_asymmetric(n: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = rng.next_open01();
            }
        }
    }
    d
}

/// Shortest-path closure of a raw matrix followed by division by its maximum.
pub fn tmat_from_raw(n: usize, mut d: Vec<f64>, seed: u64) -> Result<RoutingInstance, InstanceError> {
    check_size(n)?;
    // One Floyd-Warshall sweep yields exact shortest paths, hence the fixpoint.
    for k in 0..n {
        for i in 0..n {
            let dik = d[i * n + k];
            for j in 0..n {
                let via = dik + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    let max = d.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(InstanceError::Invalid("all distances are zero".into()));
    }
    for v in &mut d {
        *v /= max;
    }
    Ok(RoutingInstance::tsp(Distribution::Tmat, DistanceMatrix::from_rows(n, d)?, seed))
}

pub fn gen_tmat(n: usize, seed: u64) -> Result<RoutingInstance, InstanceError> {
    check_size(n)?;
    let mut rng = SplitMix64::new(seed);
    let raw = uniform_asymmetric(n, &mut rng);
    tmat_from_raw(n, raw, seed)
}

pub fn gen_xasy(n: usize, seed: u64) -> Result<RoutingInstance, InstanceError> {
    check_size(n)?;
    let mut rng = SplitMix64::new(seed);
    let d = uniform_asymmetric(n, &mut rng);
    Ok(RoutingInstance::tsp(Distribution::Xasy, DistanceMatrix::from_rows(n, d)?, seed))
}

pub fn generate(distribution: Distribution, n: usize, seed: u64) -> Result<RoutingInstance, InstanceError> {
    match distribution {
        Distribution::Euc => gen_euclidean(n, seed),
        Distribution::Tmat => gen_tmat(n, seed),
        Distribution::Xasy => gen_xasy(n, seed),
    }
}

fn require_template(inst: &RoutingInstance) -> Result<(), InstanceError> {
    check_size(inst.n())?;
    if inst.kind != ProblemKind::Tsp {
        return Err(InstanceError::WrongKind { expected: ProblemKind::Tsp, got: inst.kind });
    }
    Ok(())
}

/// Demands uniform on `{1..9}` for customers, capacity 50.
pub fn attach_cvrp(inst: &RoutingInstance, seed: u64) -> Result<RoutingInstance, InstanceError> {
    require_template(inst)?;
    let mut rng = SplitMix64::new(seed);
    let mut demands = vec![0u32; inst.n()];
    for q in demands.iter_mut().skip(1) {
        *q = 1 + rng.below(9) as u32;
    }
    Ok(RoutingInstance {
        kind: ProblemKind::Cvrp,
        demands: Some(demands),
        capacity: Some(DEFAULT_CAPACITY),
        ..inst.clone()
    })
}

/// Prizes uniform on `{0.01, ..., 1.00}`; budget by distribution.
pub fn attach_op(inst: &RoutingInstance, seed: u64) -> Result<RoutingInstance, InstanceError> {
    require_template(inst)?;
    let mut rng = SplitMix64::new(seed);
    let mut prizes = vec![0.0; inst.n()];
    for p in prizes.iter_mut().skip(1) {
        *p = (1 + rng.below(100)) as f64 / 100.0;
    }
    let budget = match inst.distribution {
        Distribution::Xasy => BUDGET_XASY,
        Distribution::Euc | Distribution::Tmat => BUDGET_EUC_TMAT,
    };
    Ok(RoutingInstance {
        kind: ProblemKind::Op,
        prizes: Some(prizes),
        budget: Some(budget),
        ..inst.clone()
    })
}

/// Generates a complete instance of the given kind. The attachment stream is
/// derived from `seed`, so `(kind, distribution, n, seed)` fixes the instance.
pub fn generate_instance(
    kind: ProblemKind,
    distribution: Distribution,
    n: usize,
    seed: u64,
) -> Result<RoutingInstance, InstanceError> {
    let base = generate(distribution, n, seed)?;
    let attach_seed = SplitMix64::derive(seed, 1);
    match kind {
        ProblemKind::Tsp => Ok(base),
        ProblemKind::Cvrp => attach_cvrp(&base, attach_seed),
        ProblemKind::Op => attach_op(&base, attach_seed),
    }
}

/// Multiplies every distance (and the OP budget) by `factor`.
pub fn scale_instance(inst: &RoutingInstance, factor: f64) -> Result<RoutingInstance, InstanceError> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(InstanceError::InvalidFactor(factor));
    }
    if factor == 1.0 {
        return Ok(inst.clone());
    }
    let n = inst.n();
    let d = inst.dist.as_slice().iter().map(|v| v * factor).collect();
    Ok(RoutingInstance {
        dist: DistanceMatrix { n, d },
        budget: inst.budget.map(|b| b * factor),
        ..inst.clone()
    })
}

fn push_float(out: &mut String, v: f64) {
    // 17 significant digits: one before the point, sixteen after.
    write!(out, "{v:.16e}").unwrap();
}

fn push_floats(out: &mut String, values: &[f64]) {
    out.push('[');
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        push_float(out, *v);
    }
    out.push(']');
}

/// One JSON object on a single line (no trailing newline).
pub fn serialize_instance(inst: &RoutingInstance) -> String {
    let mut out = String::with_capacity(24 * inst.n() * inst.n() + 128);
    write!(
        out,
        "{{\"kind\":\"{}\",\"distribution\":\"{}\",\"n\":{},\"seed\":{},\"dist\":",
        inst.kind,
        inst.distribution,
        inst.n(),
        inst.seed
    )
    .unwrap();
    push_floats(&mut out, inst.dist.as_slice());
    if let Some(demands) = &inst.demands {
        out.push_str(",\"demands\":[");
        for (k, q) in demands.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{q}").unwrap();
        }
        out.push(']');
    }
    if let Some(cap) = inst.capacity {
        write!(out, ",\"capacity\":{cap}").unwrap();
    }
    if let Some(prizes) = &inst.prizes {
        out.push_str(",\"prizes\":");
        push_floats(&mut out, prizes);
    }
    if let Some(budget) = inst.budget {
        out.push_str(",\"budget\":");
        push_float(&mut out, budget);
    }
    out.push('}');
    out
}

/// Newline-terminated lines, one instance each.
pub fn serialize_instances(instances: &[RoutingInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serialize_instance(inst));
        out.push('\n');
    }
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    kind: String,
    distribution: String,
    n: usize,
    seed: u64,
    dist: Vec<f64>,
    demands: Option<Vec<u32>>,
    capacity: Option<u32>,
    prizes: Option<Vec<f64>>,
    budget: Option<f64>,
}

fn byte_offset_of(line: &str, base: usize, err: &serde_json::Error) -> usize {
    if err.line() == 0 {
        return base;
    }
    let mut offset = 0;
    for (k, l) in line.split_inclusive('\n').enumerate() {
        if k + 1 == err.line() {
            return base + offset + err.column().saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    base + line.len()
}

fn parse_line(line: &str, base: usize) -> Result<RoutingInstance, InstanceError> {
    let raw: RawInstance = serde_json::from_str(line).map_err(|e| InstanceError::Parse {
        offset: byte_offset_of(line, base, &e),
        message: e.to_string(),
    })?;
    let at = |message: String| InstanceError::Parse { offset: base, message };
    let kind: ProblemKind = raw.kind.parse().map_err(at)?;
    let distribution: Distribution = raw.distribution.parse().map_err(at)?;
    let dist = DistanceMatrix::from_rows(raw.n, raw.dist).map_err(|e| at(e.to_string()))?;
    let inst = RoutingInstance {
        kind,
        distribution,
        dist,
        demands: raw.demands,
        capacity: raw.capacity,
        prizes: raw.prizes,
        budget: raw.budget,
        seed: raw.seed,
    };
    inst.validate().map_err(|e| at(e.to_string()))?;
    Ok(inst)
}

/// Parses exactly one instance from a byte stream (surrounding whitespace allowed).
pub fn parse_instance(bytes: &[u8]) -> Result<RoutingInstance, InstanceError> {
    let mut all = parse_instances(bytes)?;
    match all.len() {
        1 => Ok(all.pop().unwrap()),
        k => Err(InstanceError::Parse { offset: 0, message: format!("expected one instance, found {k}") }),
    }
}

/// Parses a JSON-lines stream; blank lines are skipped. An empty stream is an error.
pub fn parse_instances(bytes: &[u8]) -> Result<Vec<RoutingInstance>, InstanceError> {
    let text = std::str::from_utf8(bytes).map_err(|e| InstanceError::Parse {
        offset: e.valid_up_to(),
        message: "stream is not valid UTF-8".into(),
    })?;
    let mut out = Vec::new();
    let mut base = 0;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if !content.trim().is_empty() {
            out.push(parse_line(content, base)?);
        }
        base += line.len();
    }
    if out.is_empty() {
        return Err(InstanceError::Parse { offset: 0, message: "empty instance stream".into() });
    }
    Ok(out)
}
