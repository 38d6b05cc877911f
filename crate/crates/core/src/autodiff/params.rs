use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AutodiffError;
use crate::rng::SplitMix64;

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// First-moment estimate.
    pub m: Vec<f64>,
    /// Second-moment estimate.
    pub v: Vec<f64>,
    pub step: u64,
}

impl Parameter {
    fn new(shape: Vec<usize>, value: Vec<f64>) -> Self {
        let len = value.len();
        Self { shape, value, grad: vec![0.0; len], m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Named trainable tensors with gradient accumulators and Adam state.
/// Iteration order is by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> Result<(), AutodiffError> {
        if self.params.contains_key(name) {
            return Err(AutodiffError::DuplicateParameter(name.to_string()));
        }
        if shape.iter().product::<usize>() != value.len() {
            return Err(AutodiffError::Shape { op: "insert", left: shape.to_vec(), right: vec![value.len()] });
        }
        self.params.insert(name.to_string(), Parameter::new(shape.to_vec(), value));
        Ok(())
    }

    /// Inserts a `[fan_in, fan_out]` matrix with entries uniform on ±1/√fan_in.
    pub fn insert_uniform(&mut self, name: &str, shape: &[usize], rng: &mut SplitMix64) -> Result<(), AutodiffError> {
        let fan_in = shape[0].max(1) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let len = shape.iter().product();
        let value = (0..len).map(|_| rng.uniform(-bound, bound)).collect();
        self.insert(name, shape, value)
    }

    pub fn insert_const(&mut self, name: &str, shape: &[usize], c: f64) -> Result<(), AutodiffError> {
        self.insert(name, shape, vec![c; shape.iter().product()])
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `scale * grads` into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<(), AutodiffError> {
        for (name, g) in grads {
            let p = self.params.get_mut(name).ok_or_else(|| AutodiffError::UnknownParameter(name.clone()))?;
            if p.grad.len() != g.len() {
                return Err(AutodiffError::Shape { op: "accumulate", left: p.shape.clone(), right: vec![g.len()] });
            }
            for (acc, v) in p.grad.iter_mut().zip(g) {
                *acc += scale * v;
            }
        }
        Ok(())
    }

    /// One Adam update from the accumulated gradients, then clears them.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        for p in self.params.values_mut() {
            p.step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(p.step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(p.step as i32);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                p.value[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
                p.grad[i] = 0.0;
            }
        }
    }

    /// Rounds every value and optimizer moment to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for p in self.params.values_mut() {
            for buf in [&mut p.value, &mut p.m, &mut p.v] {
                buf.iter_mut().for_each(|x| *x = *x as f32 as f64);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::new();
        s.insert("w", &[2], vec![1.0, 2.0]).unwrap();
        assert_eq!(s.insert("w", &[2], vec![1.0, 2.0]), Err(AutodiffError::DuplicateParameter("w".into())));
        assert!(s.insert("v", &[3], vec![1.0]).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With bias correction the first step is lr * g/|g| (up to eps).
        let mut s = ParameterStore::new();
        s.insert("w", &[2], vec![1.0, -1.0]).unwrap();
        let mut g = Gradients::new();
        g.insert("w".into(), vec![0.5, -2.0]);
        s.accumulate(&g, 1.0).unwrap();
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        s.adam_step(&cfg);
        let w = &s.get("w").unwrap().value;
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
        assert!(s.get("w").unwrap().grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = ParameterStore::new();
        s.insert("x", &[1], vec![3.0]).unwrap();
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        for _ in 0..2000 {
            let x = s.get("x").unwrap().value[0];
            let mut g = Gradients::new();
            g.insert("x".into(), vec![2.0 * (x - 1.0)]);
            s.accumulate(&g, 1.0).unwrap();
            s.adam_step(&cfg);
        }
        assert!((s.get("x").unwrap().value[0] - 1.0).abs() < 1e-3);
    }
}
