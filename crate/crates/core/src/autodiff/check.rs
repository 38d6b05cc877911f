//! Central finite-difference verification of reverse-mode gradients.

use super::{AutodiffError, Gradients, ParameterStore, Tape, Var};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    pub step: f64,
    pub tol: f64,
    /// Coordinates to probe; every coordinate is checked when there are fewer.
    pub samples: usize,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self { step: 1e-5, tol: 1e-6, samples: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Offender {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(1, |numeric|)`
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub checked: usize,
    pub passed: bool,
    pub worst: Option<Offender>,
}

/// Runs `loss_fn` forward and backward once, then compares the analytic
/// gradient with central differences on a sample of coordinates.
pub fn finite_diff_check<F, E>(store: &ParameterStore, loss_fn: F, opts: &FdOptions) -> Result<FdReport, E>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    check_gradients(store, &grads, loss_fn, opts)
}

/// Compares a supplied analytic gradient against central differences.
pub fn check_gradients<F, E>(store: &ParameterStore, analytic: &Gradients, loss_fn: F, opts: &FdOptions) -> Result<FdReport, E>
where
    F: Fn(&mut Tape, &ParameterStore) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut coords: Vec<(String, usize)> = Vec::new();
    for (name, p) in store.iter() {
        coords.extend((0..p.value.len()).map(|i| (name.to_string(), i)));
    }
    if coords.len() > opts.samples {
        let mut rng = SplitMix64::new(opts.seed);
        for k in 0..opts.samples {
            let j = k + rng.below((coords.len() - k) as u64) as usize;
            coords.swap(k, j);
        }
        coords.truncate(opts.samples);
    }

    let eval = |s: &ParameterStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, s)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite("loss").into());
        }
        Ok(value)
    };

    let mut probe = store.clone();
    let mut worst: Option<Offender> = None;
    for (name, idx) in &coords {
        let original = store.get(name).unwrap().value[*idx];
        probe.get_mut(name).unwrap().value[*idx] = original + opts.step;
        let plus = eval(&probe)?;
        probe.get_mut(name).unwrap().value[*idx] = original - opts.step;
        let minus = eval(&probe)?;
        probe.get_mut(name).unwrap().value[*idx] = original;

        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic.get(name).map_or(0.0, |g| g[*idx]);
        let error = (a - numeric).abs() / numeric.abs().max(1.0);
        if worst.as_ref().map_or(true, |w| error > w.error) {
            worst = Some(Offender { name: name.clone(), index: *idx, analytic: a, numeric, error });
        }
    }
    let passed = worst.as_ref().map_or(true, |w| w.error < opts.tol);
    Ok(FdReport { checked: coords.len(), passed, worst })
}
