//! Pointer decoder over GREAT node embeddings and POMO-style multi-start
//! rollouts.
//!
//! At every step the context `W_c [mean(h) ‖ h_first ‖ h_current ‖ dyn]`
//! is projected to a query and scored against projected node keys:
//! `u_j = C · tanh(q·k_j / √d)`. Masked nodes are excluded from the softmax.
//! The encoder runs once per instance; all rollouts of the instance advance
//! together as the rows of one batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::{masked_softmax_rows, ParameterStore, Tape, Var};
use crate::encoder::{encode, init_encoder_params, Encoded, GreatConfig};
use crate::env::{EnvState, DEPOT};
use crate::instance::{ProblemKind, RoutingInstance};
use crate::rng::SplitMix64;
use crate::Error;

pub const DEFAULT_CLIP: f64 = 10.0;
/// Upper bound on rollouts per instance.
pub const POMO_CAP: usize = 100;
/// Logits closer than this to the maximum count as ties in greedy decoding.
pub const GREEDY_TIE_TOL: f64 = 1e-12;

/// Encoder configuration plus everything the decoder needs to size itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub encoder: GreatConfig,
    pub kind: ProblemKind,
    #[serde(default = "default_clip")]
    pub clip: f64,
}

fn default_clip() -> f64 {
    DEFAULT_CLIP
}

impl PolicyConfig {
    pub fn new(encoder: GreatConfig, kind: ProblemKind) -> Self {
        Self { encoder, kind, clip: DEFAULT_CLIP }
    }

    pub fn dynamic_dim(&self) -> usize {
        match self.kind {
            ProblemKind::Tsp => 0,
            ProblemKind::Cvrp | ProblemKind::Op => 1,
        }
    }

    /// Fresh encoder and decoder parameters.
    pub fn init_params(&self, seed: u64) -> Result<ParameterStore, Error> {
        let mut rng = SplitMix64::new(seed);
        let mut store = ParameterStore::new();
        init_encoder_params(&mut store, &self.encoder, self.kind, &mut rng)?;
        let d = self.encoder.hidden_dim;
        store.insert_uniform("dec.context", &[3 * d + self.dynamic_dim(), d], &mut rng)?;
        store.insert_uniform("dec.query", &[d, d], &mut rng)?;
        store.insert_uniform("dec.key", &[d, d], &mut rng)?;
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Where a rollout begins: its start node and, for depot problems, an
/// optional customer forced as the first move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutPlan {
    pub start: usize,
    pub forced_first: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrace {
    pub start: usize,
    /// Every move, including a forced first move.
    pub actions: Vec<usize>,
    /// Log-probability of each move; forced moves record 0.
    pub log_probs: Vec<f64>,
    pub reward: f64,
    /// Full node sequence as recorded by the environment.
    pub route: Vec<usize>,
}

impl RolloutTrace {
    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Differentiable per-step log-probabilities: row `k` of `var` belongs to
/// rollout `rollout[k]`.
#[derive(Debug, Clone)]
pub struct LogProbTerm {
    pub var: Var,
    pub rollout: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Rollouts {
    pub traces: Vec<RolloutTrace>,
    pub terms: Vec<LogProbTerm>,
}

impl Rollouts {
    pub fn rewards(&self) -> Vec<f64> {
        self.traces.iter().map(|t| t.reward).collect()
    }

    pub fn best(&self) -> Option<&RolloutTrace> {
        self.traces.iter().fold(None, |best: Option<&RolloutTrace>, t| match best {
            Some(b) if b.reward >= t.reward => Some(b),
            _ => Some(t),
        })
    }
}

enum Chooser<'r> {
    Greedy,
    Sample(&'r mut SplitMix64),
    Replay(&'r [RolloutTrace]),
}

/// Multi-start plans: one per start node for TSP, one per forced first
/// customer for CVRP and OP; at most [`POMO_CAP`].
pub fn pomo_plans(inst: &RoutingInstance) -> Vec<RolloutPlan> {
    let n = inst.n();
    match inst.kind {
        ProblemKind::Tsp => (0..n.min(POMO_CAP)).map(|s| RolloutPlan { start: s, forced_first: None }).collect(),
        ProblemKind::Cvrp | ProblemKind::Op => (1..n)
            .take(POMO_CAP)
            .map(|c| RolloutPlan { start: DEPOT, forced_first: Some(c) })
            .collect(),
    }
}

/// Per-instance tensors shared by all rollouts.
struct DecoderCache {
    nodes: Var,
    mean: Var,
    keys_t: Var,
    w_context: Var,
    w_query: Var,
}

fn prepare(tape: &mut Tape, store: &ParameterStore, enc: &Encoded) -> Result<DecoderCache, Error> {
    let mean = tape.mean_rows(enc.nodes)?;
    let w_key = tape.param(store, "dec.key")?;
    let keys = tape.matmul(enc.nodes, w_key)?;
    let keys_t = tape.transpose(keys)?;
    Ok(DecoderCache {
        nodes: enc.nodes,
        mean,
        keys_t,
        w_context: tape.param(store, "dec.context")?,
        w_query: tape.param(store, "dec.query")?,
    })
}

fn context_rows(tape: &mut Tape, cache: &DecoderCache, states: &[&EnvState]) -> Result<Var, Error> {
    let rows = states.len();
    let means = tape.gather_rows(cache.mean, &vec![0; rows])?;
    let first: Vec<usize> = states.iter().map(|s| s.start()).collect();
    let current: Vec<usize> = states.iter().map(|s| s.current()).collect();
    let firsts = tape.gather_rows(cache.nodes, &first)?;
    let currents = tape.gather_rows(cache.nodes, &current)?;
    let dynamic: Vec<f64> = states.iter().flat_map(|s| s.dynamic_features()).collect();
    let mut parts = vec![means, firsts, currents];
    if !dynamic.is_empty() {
        let k = dynamic.len() / rows;
        parts.push(tape.constant(&[rows, k], dynamic)?);
    }
    let joined = tape.concat(&parts)?;
    Ok(tape.matmul(joined, cache.w_context)?)
}

/// Context vectors `[rows, d]` for a set of states over shared node embeddings.
pub fn context_vector(tape: &mut Tape, store: &ParameterStore, enc: &Encoded, states: &[&EnvState]) -> Result<Var, Error> {
    let cache = prepare(tape, store, enc)?;
    context_rows(tape, &cache, states)
}

fn logits_rows(tape: &mut Tape, cache: &DecoderCache, context: Var, clip: f64) -> Result<Var, Error> {
    let d = tape.shape(context)[1] as f64;
    let q = tape.matmul(context, cache.w_query)?;
    let compat = tape.matmul(q, cache.keys_t)?;
    let compat = tape.scale(compat, 1.0 / d.sqrt())?;
    let bounded = tape.tanh(compat)?;
    Ok(tape.scale(bounded, clip)?)
}

/// Clipped pointer logits `[rows, n]` for the given context rows. Masking is
/// applied by the consumer (softmax or log-probability pick).
pub fn pointer_logits(tape: &mut Tape, store: &ParameterStore, cfg: &PolicyConfig, enc: &Encoded, context: Var) -> Result<Var, Error> {
    let cache = prepare(tape, store, enc)?;
    logits_rows(tape, &cache, context, cfg.clip)
}

fn greedy_pick(probs: &[f64]) -> usize {
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    probs.iter().position(|&p| p > 0.0 && p >= max - GREEDY_TIE_TOL).unwrap()
}

fn sample_pick(probs: &[f64], rng: &mut SplitMix64) -> usize {
    let u = rng.next_f64();
    let mut cum = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = k;
            if u < cum {
                return k;
            }
        }
    }
    last
}

fn run(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &PolicyConfig,
    inst: &RoutingInstance,
    plans: &[RolloutPlan],
    mut chooser: Chooser,
) -> Result<Rollouts, Error> {
    if inst.kind != cfg.kind {
        return Err(Error::Config(format!("policy for {} given a {} instance", cfg.kind, inst.kind)));
    }
    let enc = encode(tape, store, &cfg.encoder, inst)?;
    let cache = prepare(tape, store, &enc)?;
    let n = inst.n();

    let mut states = plans.iter().map(|p| EnvState::reset(inst, p.start)).collect::<Result<Vec<_>, _>>()?;
    let mut actions: Vec<Vec<usize>> = vec![Vec::new(); plans.len()];
    let mut log_probs: Vec<Vec<f64>> = vec![Vec::new(); plans.len()];
    for (r, plan) in plans.iter().enumerate() {
        if let Some(first) = plan.forced_first {
            if states[r].valid_actions()?.get(first) == Some(&true) {
                states[r].step(first)?;
                actions[r].push(first);
                log_probs[r].push(0.0);
            }
        }
    }

    let mut terms = Vec::new();
    loop {
        let active: Vec<usize> = (0..states.len()).filter(|&r| !states[r].is_done()).collect();
        if active.is_empty() {
            break;
        }
        let mut mask = Vec::with_capacity(active.len() * n);
        for &r in &active {
            mask.extend(states[r].valid_actions()?);
        }
        let refs: Vec<&EnvState> = active.iter().map(|&r| &states[r]).collect();
        let context = context_rows(tape, &cache, &refs)?;
        let logits = logits_rows(tape, &cache, context, cfg.clip)?;
        let probs = masked_softmax_rows(tape.value(logits), &mask, n)?;
        let chosen: Vec<usize> = active
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let row = &probs[k * n..(k + 1) * n];
                match &mut chooser {
                    Chooser::Greedy => greedy_pick(row),
                    Chooser::Sample(rng) => sample_pick(row, rng),
                    Chooser::Replay(traces) => traces[r].actions[states[r].route().len() - 1],
                }
            })
            .collect();
        let lp = tape.log_softmax_pick(logits, &mask, &chosen)?;
        for (k, &r) in active.iter().enumerate() {
            states[r].step(chosen[k])?;
            actions[r].push(chosen[k]);
            log_probs[r].push(tape.value(lp)[k]);
        }
        terms.push(LogProbTerm { var: lp, rollout: active });
    }

    let traces = states
        .iter()
        .zip(actions.into_iter().zip(log_probs))
        .map(|(s, (actions, log_probs))| {
            Ok(RolloutTrace { start: s.start(), actions, log_probs, reward: s.finalize_reward()?, route: s.route().to_vec() })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(Rollouts { traces, terms })
}

/// A single rollout from `plan`.
pub fn decode_rollout(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &PolicyConfig,
    inst: &RoutingInstance,
    plan: RolloutPlan,
    mode: DecodeMode,
    rng: &mut SplitMix64,
) -> Result<Rollouts, Error> {
    rollouts_from(tape, store, cfg, inst, &[plan], mode, rng)
}

/// Rollouts for an explicit set of plans.
pub fn rollouts_from(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &PolicyConfig,
    inst: &RoutingInstance,
    plans: &[RolloutPlan],
    mode: DecodeMode,
    rng: &mut SplitMix64,
) -> Result<Rollouts, Error> {
    let chooser = match mode {
        DecodeMode::Greedy => Chooser::Greedy,
        DecodeMode::Sample => Chooser::Sample(rng),
    };
    run(tape, store, cfg, inst, plans, chooser)
}

/// All multi-start rollouts of an instance.
pub fn pomo_rollouts(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &PolicyConfig,
    inst: &RoutingInstance,
    mode: DecodeMode,
    rng: &mut SplitMix64,
) -> Result<Rollouts, Error> {
    rollouts_from(tape, store, cfg, inst, &pomo_plans(inst), mode, rng)
}

/// Re-runs recorded traces with their actions fixed, rebuilding the
/// differentiable log-probabilities under the current parameters.
pub fn replay_rollouts(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &PolicyConfig,
    inst: &RoutingInstance,
    traces: &[RolloutTrace],
) -> Result<Rollouts, Error> {
    let plans: Vec<RolloutPlan> = traces
        .iter()
        .map(|t| RolloutPlan {
            start: t.start,
            forced_first: match inst.kind {
                ProblemKind::Tsp => None,
                _ => t.log_probs.first().filter(|&&lp| lp == 0.0).and(t.actions.first().copied()),
            },
        })
        .collect();
    run(tape, store, cfg, inst, &plans, Chooser::Replay(traces))
}

/// Greedy multi-start traces on a private tape.
pub fn greedy_pomo(store: &ParameterStore, cfg: &PolicyConfig, inst: &RoutingInstance) -> Result<Vec<RolloutTrace>, Error> {
    let mut tape = Tape::new();
    let mut rng = SplitMix64::new(0);
    Ok(pomo_rollouts(&mut tape, store, cfg, inst, DecodeMode::Greedy, &mut rng)?.traces)
}
