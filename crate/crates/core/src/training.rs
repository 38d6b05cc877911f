//! Multi-rollout REINFORCE with a shared mean baseline, validation-based
//! model selection and curriculum fine-tuning over growing instance sizes.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, Gradients, ParameterStore, Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::decoder::{greedy_pomo, pomo_rollouts, DecodeMode, PolicyConfig, Rollouts, DEFAULT_CLIP};
use crate::encoder::GreatConfig;
use crate::eval::augmented_solve;
use crate::instance::{generate_instance, scale_instance, Distribution, ProblemKind, RoutingInstance};
use crate::rng::SplitMix64;
use crate::Error;

const LABEL_VALIDATION: u64 = 0x5641_4c;
const LABEL_DATA: u64 = 0x4441_5441;
const LABEL_SAMPLING: u64 = 0x5341_4d50;
const LABEL_SCALE: u64 = 0x5343_414c;
const LABEL_INIT: u64 = 0x494e_4954;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub encoder: GreatConfig,
    pub kind: ProblemKind,
    pub distribution: Distribution,
    pub n: usize,
    pub epochs: usize,
    pub instances_per_epoch: usize,
    pub refresh_every: usize,
    pub batch_size: usize,
    pub scale_range: [f64; 2],
    pub validation_size: usize,
    /// Augmentation count used during validation; 1 disables augmentation.
    pub validation_aug: usize,
    pub lr: f64,
    pub clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder: GreatConfig::default(),
            kind: ProblemKind::Tsp,
            distribution: Distribution::Xasy,
            n: 10,
            epochs: 400,
            instances_per_epoch: 2_000,
            refresh_every: 10,
            batch_size: 32,
            scale_range: [0.5, 1.5],
            validation_size: 100,
            validation_aug: 1,
            lr: 1e-4,
            clip: DEFAULT_CLIP,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.encoder.validate()?;
        let counts = [
            ("n", self.n),
            ("epochs", self.epochs),
            ("instances_per_epoch", self.instances_per_epoch),
            ("refresh_every", self.refresh_every),
            ("batch_size", self.batch_size),
            ("validation_size", self.validation_size),
            ("validation_aug", self.validation_aug),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("scale_range must satisfy 0 < lo < hi, got [{lo}, {hi}]")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.clip > 0.0) {
            return Err(Error::Config("lr and clip must be positive".into()));
        }
        Ok(())
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig { encoder: self.encoder, kind: self.kind, clip: self.clip }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }

    /// Fixed held-out instances, independent of the training stream.
    pub fn validation_set(&self) -> Result<Vec<RoutingInstance>, Error> {
        let base = SplitMix64::derive(self.seed, LABEL_VALIDATION);
        dataset(self.kind, self.distribution, self.n, self.validation_size, base)
    }

    /// Training instances for an epoch; the set changes every `refresh_every` epochs.
    pub fn training_set(&self, epoch: usize) -> Result<Vec<RoutingInstance>, Error> {
        let block = (epoch / self.refresh_every) as u64;
        let base = SplitMix64::derive(SplitMix64::derive(self.seed, LABEL_DATA), block);
        dataset(self.kind, self.distribution, self.n, self.instances_per_epoch, base)
    }
}

/// `count` instances with seeds derived from `base`.
pub fn dataset(
    kind: ProblemKind,
    distribution: Distribution,
    n: usize,
    count: usize,
    base: u64,
) -> Result<Vec<RoutingInstance>, Error> {
    (0..count as u64)
        .map(|i| Ok(generate_instance(kind, distribution, n, SplitMix64::derive(base, i))?))
        .collect()
}

/// Shared-baseline policy-gradient loss
/// `-(1/N) Σ_r (R_r - mean R) · Σ_t log p_r,t`; rewards are constants.
pub fn pomo_loss(tape: &mut Tape, rollouts: &Rollouts) -> Result<Var, Error> {
    let n = rollouts.traces.len();
    if n < 2 {
        return Err(Error::DegenerateBaseline(n));
    }
    let rewards = rollouts.rewards();
    let baseline = rewards.iter().sum::<f64>() / n as f64;
    let coef: Vec<f64> = rewards.iter().map(|r| -(r - baseline) / n as f64).collect();
    let mut total: Option<Var> = None;
    for term in &rollouts.terms {
        let w: Vec<f64> = term.rollout.iter().map(|&r| coef[r]).collect();
        let part = tape.weighted_sum(term.var, &w)?;
        total = Some(match total {
            Some(t) => tape.add(t, part)?,
            None => part,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(&[], vec![0.0])?),
    }
}

struct InstanceStep {
    grads: Gradients,
    loss: f64,
    reward_sum: f64,
    rollouts: usize,
}

fn instance_step(store: &ParameterStore, policy: &PolicyConfig, inst: &RoutingInstance, seed: u64) -> Result<InstanceStep, Error> {
    let mut tape = Tape::new();
    let mut rng = SplitMix64::new(seed);
    let rollouts = pomo_rollouts(&mut tape, store, policy, inst, DecodeMode::Sample, &mut rng)?;
    let loss = pomo_loss(&mut tape, &rollouts)?;
    let grads = tape.backward(loss)?;
    let rewards = rollouts.rewards();
    Ok(InstanceStep { grads, loss: tape.scalar(loss), reward_sum: rewards.iter().sum(), rollouts: rewards.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean rollout reward on the (scaled) training instances.
    pub mean_reward: f64,
    pub mean_loss: f64,
    pub batches: usize,
    pub scale_factors: Vec<f64>,
    pub instances_per_sec: f64,
    /// Mean best-of-POMO validation reward, when validation ran.
    pub validation: Option<f64>,
}

/// Options for one pass over a dataset.
#[derive(Debug, Clone, Copy)]
pub struct EpochPlan {
    pub epoch: usize,
    pub batch_size: usize,
    pub scale_range: [f64; 2],
    pub seed: u64,
}

/// One pass over `data`: each batch is scaled by a single factor drawn from
/// the open scale range, rollouts are sampled, and one Adam step is taken
/// on the batch-mean loss. Gradients are reduced in instance order, so the
/// result does not depend on the thread count.
pub fn run_epoch(
    store: &mut ParameterStore,
    policy: &PolicyConfig,
    adam: &AdamConfig,
    data: &[RoutingInstance],
    plan: EpochPlan,
) -> Result<EpochReport, Error> {
    let started = Instant::now();
    let [lo, hi] = plan.scale_range;
    let epoch_seed = SplitMix64::derive(plan.seed, plan.epoch as u64);
    let mut scale_rng = SplitMix64::new(SplitMix64::derive(epoch_seed, LABEL_SCALE));
    let sample_base = SplitMix64::derive(epoch_seed, LABEL_SAMPLING);
    let mut loss_sum = 0.0;
    let mut reward_sum = 0.0;
    let mut rollout_count = 0;
    let mut factors = Vec::new();
    for (b, batch) in data.chunks(plan.batch_size.max(1)).enumerate() {
        let factor = lo + (hi - lo) * scale_rng.next_open01();
        assert!(factor > lo && factor < hi, "scale factor {factor} outside ({lo}, {hi})");
        factors.push(factor);
        let offset = b * plan.batch_size;
        let steps: Vec<Result<InstanceStep, Error>> = batch
            .par_iter()
            .enumerate()
            .map(|(k, inst)| {
                let scaled = scale_instance(inst, factor)?;
                instance_step(store, policy, &scaled, SplitMix64::derive(sample_base, (offset + k) as u64))
            })
            .collect();
        let weight = 1.0 / batch.len() as f64;
        let mut batch_loss = 0.0;
        for step in steps {
            let step = step.map_err(|e| non_finite(e, plan.epoch, b))?;
            store.accumulate(&step.grads, weight)?;
            batch_loss += weight * step.loss;
            reward_sum += step.reward_sum;
            rollout_count += step.rollouts;
        }
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: plan.epoch, batch: b, detail: format!("batch loss {batch_loss}") });
        }
        store.adam_step(adam);
        loss_sum += batch_loss;
    }
    let batches = factors.len();
    Ok(EpochReport {
        epoch: plan.epoch,
        mean_reward: reward_sum / rollout_count.max(1) as f64,
        mean_loss: loss_sum / batches.max(1) as f64,
        batches,
        scale_factors: factors,
        instances_per_sec: data.len() as f64 / started.elapsed().as_secs_f64().max(1e-9),
        validation: None,
    })
}

fn non_finite(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Autodiff(crate::autodiff::AutodiffError::NonFinite(op)) => {
            Error::NonFiniteLoss { epoch, batch, detail: format!("non-finite value produced by {op}") }
        }
        other => other,
    }
}

/// One epoch of the configured training stream.
pub fn train_epoch(store: &mut ParameterStore, cfg: &TrainConfig, epoch: usize) -> Result<EpochReport, Error> {
    let data = cfg.training_set(epoch)?;
    let plan = EpochPlan { epoch, batch_size: cfg.batch_size, scale_range: cfg.scale_range, seed: cfg.seed };
    run_epoch(store, &cfg.policy(), &cfg.adam(), &data, plan)
}

/// Reward of a solution objective: negated length for TSP/CVRP, prize for OP.
pub fn objective_reward(kind: ProblemKind, objective: f64) -> f64 {
    match kind {
        ProblemKind::Tsp | ProblemKind::Cvrp => -objective,
        ProblemKind::Op => objective,
    }
}

/// Mean over instances of the best greedy multi-start reward (or of the
/// best augmented solution when `aug > 1`), always on unscaled instances.
pub fn validate(store: &ParameterStore, policy: &PolicyConfig, val: &[RoutingInstance], aug: usize) -> Result<f64, Error> {
    let rewards: Vec<f64> = val
        .par_iter()
        .map(|inst| -> Result<f64, Error> {
            if aug > 1 {
                let s = augmented_solve(store, policy, inst, aug)?;
                return Ok(objective_reward(policy.kind, s.objective));
            }
            let traces = greedy_pomo(store, policy, inst)?;
            Ok(traces.iter().map(|t| t.reward).fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<_, _>>()?;
    Ok(rewards.iter().sum::<f64>() / rewards.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub last: Checkpoint,
    /// Parameters with the best validation score seen.
    pub best: Checkpoint,
    pub history: Vec<EpochReport>,
}

/// Full training run. Each epoch's parameters are validated after rounding
/// to checkpoint precision, so the stored best reloads to the same score.
pub fn train(cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochReport)) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    let policy = cfg.policy();
    let mut store = policy.init_params(SplitMix64::derive(cfg.seed, LABEL_INIT))?;
    let val = cfg.validation_set()?;
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut report = train_epoch(&mut store, cfg, epoch)?;
        let mut rounded = store.clone();
        rounded.round_to_f32();
        let score = validate(&rounded, &policy, &val, cfg.validation_aug)?;
        report.validation = Some(score);
        if best.as_ref().and_then(|b| b.best_score).map_or(true, |s| score > s) {
            best = Some(Checkpoint { policy, train: Some(cfg.clone()), epoch, best_score: Some(score), params: rounded });
        }
        on_epoch(&report);
        history.push(report);
    }
    let best = best.ok_or_else(|| Error::Config("epochs must be positive".into()))?;
    let last = Checkpoint { policy, train: Some(cfg.clone()), epoch: cfg.epochs - 1, best_score: best.best_score, params: store };
    Ok(TrainOutcome { last, best, history })
}

/// Instance sizes growing by 10% per step from `n0`, with the checkpoint
/// sizes inserted and the sequence ending at the largest checkpoint.
pub fn curriculum_sizes(n0: usize, checkpoints: &[usize]) -> Result<Vec<usize>, Error> {
    let last = *checkpoints.iter().max().ok_or_else(|| Error::Config("at least one checkpoint size required".into()))?;
    if last <= n0 {
        return Err(Error::Config(format!("checkpoint sizes must exceed the base size {n0}")));
    }
    let mut sizes: Vec<usize> = checkpoints.to_vec();
    let mut k = 1;
    loop {
        let s = (n0 as f64 * 1.1f64.powi(k) + 1e-9).floor() as usize;
        if s >= last {
            break;
        }
        if s > n0 {
            sizes.push(s);
        }
        k += 1;
    }
    sizes.sort_unstable();
    sizes.dedup();
    Ok(sizes)
}

/// Batch size used while fine-tuning at size `n`.
pub fn finetune_batch_size(n: usize) -> usize {
    if n < 250 {
        16
    } else if n < 350 {
        8
    } else {
        4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub sizes: Vec<usize>,
    /// Sizes at which a snapshot is emitted; these also train for
    /// `checkpoint_epochs` epochs instead of one.
    pub checkpoints: Vec<usize>,
    pub instances_per_size: usize,
    pub checkpoint_epochs: usize,
}

impl CurriculumSchedule {
    pub fn geometric(n0: usize, checkpoints: &[usize], instances_per_size: usize) -> Result<Self, Error> {
        let s = Self { sizes: curriculum_sizes(n0, checkpoints)?, checkpoints: checkpoints.to_vec(), instances_per_size, checkpoint_epochs: 5 };
        s.validate(n0)?;
        Ok(s)
    }

    pub fn validate(&self, n0: usize) -> Result<(), Error> {
        let mut prev = n0;
        for &s in &self.sizes {
            if s <= prev {
                return Err(Error::Config(format!("curriculum sizes must increase: {s} after {prev}")));
            }
            prev = s;
        }
        if let Some(c) = self.checkpoints.iter().find(|c| !self.sizes.contains(c)) {
            return Err(Error::Config(format!("checkpoint size {c} is not in the schedule")));
        }
        if self.instances_per_size == 0 || self.checkpoint_epochs == 0 {
            return Err(Error::Config("instances_per_size and checkpoint_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Fine-tunes `base` through the schedule, returning a snapshot at each
/// checkpoint size. Every epoch draws a fresh dataset at the current size.
pub fn curriculum_finetune(
    base: &Checkpoint,
    schedule: &CurriculumSchedule,
    distribution: Distribution,
    seed: u64,
    adam: &AdamConfig,
    mut on_epoch: impl FnMut(usize, &EpochReport),
) -> Result<Vec<(usize, Checkpoint)>, Error> {
    let n0 = base.train.as_ref().map_or(0, |t| t.n);
    schedule.validate(n0)?;
    let policy = base.policy;
    let scale_range = base.train.as_ref().map_or([0.5, 1.5], |t| t.scale_range);
    let mut store = base.params.clone();
    let mut snapshots = Vec::new();
    let mut epoch = 0;
    for &n in &schedule.sizes {
        let epochs = if schedule.checkpoints.contains(&n) { schedule.checkpoint_epochs } else { 1 };
        for _ in 0..epochs {
            let data_seed = SplitMix64::derive(SplitMix64::derive(seed, LABEL_DATA), epoch as u64);
            let data = dataset(policy.kind, distribution, n, schedule.instances_per_size, data_seed)?;
            let plan = EpochPlan { epoch, batch_size: finetune_batch_size(n), scale_range, seed };
            let report = run_epoch(&mut store, &policy, adam, &data, plan)?;
            on_epoch(n, &report);
            epoch += 1;
        }
        if schedule.checkpoints.contains(&n) {
            let mut train = base.train.clone();
            if let Some(t) = train.as_mut() {
                t.n = n;
            }
            snapshots.push((n, Checkpoint { policy, train, epoch, best_score: None, params: store.clone() }));
        }
    }
    Ok(snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check_gradients;
    use crate::autodiff::FdOptions;
    use crate::decoder::{LogProbTerm, RolloutTrace};
    use crate::encoder::Variant;
    use crate::instance::gen_xasy;

    fn trace(reward: f64) -> RolloutTrace {
        RolloutTrace { start: 0, actions: vec![], log_probs: vec![], reward, route: vec![] }
    }

    #[test]
    fn loss_of_two_traces() {
        let mut tape = Tape::new();
        let lp = tape.constant(&[2], vec![-0.5, -0.5]).unwrap();
        let r = Rollouts { traces: vec![trace(-1.0), trace(-3.0)], terms: vec![LogProbTerm { var: lp, rollout: vec![0, 1] }] };
        let loss = pomo_loss(&mut tape, &r).unwrap();
        assert_eq!(tape.scalar(loss), 0.0);
        let single = Rollouts { traces: vec![trace(1.0)], terms: vec![] };
        assert!(matches!(pomo_loss(&mut tape, &single), Err(Error::DegenerateBaseline(1))));
    }

    #[test]
    fn loss_gradient_favors_better_trace() {
        let mut store = ParameterStore::new();
        store.insert("z", &[2], vec![0.3, -0.2]).unwrap();
        let build = |tape: &mut Tape, store: &ParameterStore| -> Result<Var, Error> {
            let z = tape.param(store, "z")?;
            let lp = tape.log_softmax_pick(z, &[true, true], &[0])?;
            let lp2 = tape.log_softmax_pick(z, &[true, true], &[1])?;
            let both = tape.concat(&[lp, lp2])?;
            let r = Rollouts { traces: vec![trace(-1.0), trace(-3.0)], terms: vec![LogProbTerm { var: both, rollout: vec![0, 1] }] };
            pomo_loss(tape, &r)
        };
        let mut tape = Tape::new();
        let loss = build(&mut tape, &store).unwrap();
        let g = tape.backward(loss).unwrap();
        // descending the gradient raises the logit of the better action 0
        assert!(g["z"][0] < 0.0 && g["z"][1] > 0.0);
        let report = check_gradients(&store, &g, build, &FdOptions { tol: 1e-6, ..FdOptions::default() }).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn equal_rewards_give_zero_loss_and_gradient() {
        let policy = PolicyConfig::new(GreatConfig { hidden_dim: 8, layers: 1, heads: 2, variant: Variant::Nb, symmetric_mode: false }, ProblemKind::Tsp);
        let store = policy.init_params(1).unwrap();
        let inst = gen_xasy(4, 2).unwrap();
        let mut tape = Tape::new();
        let mut rng = SplitMix64::new(3);
        let mut r = pomo_rollouts(&mut tape, &store, &policy, &inst, DecodeMode::Sample, &mut rng).unwrap();
        r.traces.iter_mut().for_each(|t| t.reward = -2.0);
        let loss = pomo_loss(&mut tape, &r).unwrap();
        assert_eq!(tape.scalar(loss), 0.0);
        let g = tape.backward(loss).unwrap();
        assert!(g.values().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn curriculum_schedule_matches_reference_list() {
        let sizes = curriculum_sizes(100, &[200, 500]).unwrap();
        assert_eq!(sizes, vec![110, 121, 133, 146, 161, 177, 194, 200, 214, 235, 259, 285, 313, 345, 379, 417, 459, 500]);
        assert_eq!(curriculum_sizes(10, &[20]).unwrap(), vec![11, 12, 13, 14, 16, 17, 19, 20]);
        assert_eq!(finetune_batch_size(300), 8);
        assert_eq!(finetune_batch_size(249), 16);
        assert_eq!(finetune_batch_size(350), 4);
        let bad = CurriculumSchedule { sizes: vec![12, 11], checkpoints: vec![12], instances_per_size: 1, checkpoint_epochs: 1 };
        assert!(matches!(bad.validate(10), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation_and_parsing() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { scale_range: [1.5, 0.5], ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "kind": "op"}"#).unwrap();
        assert_eq!(parsed.epochs, 3);
        assert_eq!(parsed.kind, ProblemKind::Op);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epochz": 3}"#).is_err());
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            encoder: GreatConfig { hidden_dim: 8, layers: 1, heads: 2, variant: Variant::Nb, symmetric_mode: false },
            n: 5,
            epochs: 2,
            instances_per_epoch: 12,
            refresh_every: 1,
            batch_size: 4,
            validation_size: 5,
            lr: 1e-3,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config();
        let a = train(&cfg, |_| {}).unwrap();
        let b = train(&cfg, |_| {}).unwrap();
        assert_eq!(a.last.params, b.last.params);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!((x.mean_reward, x.mean_loss, &x.scale_factors, x.validation), (y.mean_reward, y.mean_loss, &y.scale_factors, y.validation));
        }
        assert!(a.history.iter().flat_map(|r| &r.scale_factors).all(|&f| f > 0.5 && f < 1.5));
        assert_eq!(a.history[0].batches, 3);
    }

    #[test]
    fn best_checkpoint_reloads_to_same_score() {
        let cfg = tiny_config();
        let out = train(&cfg, |_| {}).unwrap();
        let best_scores: Vec<f64> = out.history.iter().map(|r| r.validation.unwrap()).collect();
        let max = best_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best.best_score, Some(max));
        let back = Checkpoint::from_bytes(&out.best.to_bytes()).unwrap();
        let val = cfg.validation_set().unwrap();
        assert_eq!(validate(&back.params, &back.policy, &val, 1).unwrap(), max);
        assert_eq!(validate(&back.params, &back.policy, &val, 1).unwrap(), validate(&back.params, &back.policy, &val, 1).unwrap());
    }

    #[test]
    fn finetune_emits_snapshots() {
        let cfg = TrainConfig { n: 4, epochs: 1, instances_per_epoch: 4, ..tiny_config() };
        let out = train(&cfg, |_| {}).unwrap();
        let schedule = CurriculumSchedule::geometric(4, &[5, 6], 4).unwrap();
        assert_eq!(schedule.sizes, vec![5, 6]);
        let schedule = CurriculumSchedule { checkpoint_epochs: 2, ..schedule };
        let mut seen = Vec::new();
        let snaps = curriculum_finetune(&out.best, &schedule, Distribution::Xasy, 1, &cfg.adam(), |n, _| seen.push(n)).unwrap();
        assert_eq!(seen, vec![5, 5, 6, 6]);
        assert_eq!(snaps.iter().map(|s| s.0).collect::<Vec<_>>(), vec![5, 6]);
        for (_, c) in &snaps {
            Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        }
    }
}
