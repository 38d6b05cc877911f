//! Binary checkpoint format.
//!
//! Layout: `GREATCKP` magic, u32 LE version, u64 LE header length, a JSON
//! header, then little-endian `f32` payloads in header order. Each parameter
//! contributes three tensors: its value and both Adam moments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParameterStore;
use crate::decoder::PolicyConfig;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"GREATCKP";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated checkpoint: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Value,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    role: Role,
    shape: Vec<usize>,
    offset: usize,
    step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    policy: PolicyConfig,
    train: Option<TrainConfig>,
    epoch: usize,
    best_score: Option<f64>,
    tensors: Vec<TensorEntry>,
}

/// Model parameters with optimizer state and training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: PolicyConfig,
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub best_score: Option<f64>,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn new(policy: PolicyConfig, params: ParameterStore) -> Self {
        Self { policy, train: None, epoch: 0, best_score: None, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        for (name, p) in self.params.iter() {
            for (role, data) in [(Role::Value, &p.value), (Role::AdamM, &p.m), (Role::AdamV, &p.v)] {
                tensors.push(TensorEntry { name: name.to_string(), role, shape: p.shape.clone(), offset: payload.len(), step: p.step });
                for &x in data {
                    payload.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
        }
        let header = Header { policy: self.policy, train: self.train.clone(), epoch: self.epoch, best_score: self.best_score, tensors };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    /// Parses a checkpoint and checks every tensor against the shapes its
    /// policy configuration implies.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 {
            return Err(CheckpointError::Truncated { expected: PREAMBLE, actual: bytes.len() });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < PREAMBLE {
            return Err(CheckpointError::Truncated { expected: PREAMBLE, actual: bytes.len() });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version { found: version, expected: VERSION });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = PREAMBLE.checked_add(header_len).ok_or(CheckpointError::Header("header length overflow".into()))?;
        if bytes.len() < header_end {
            return Err(CheckpointError::Truncated { expected: header_end, actual: bytes.len() });
        }
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end]).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let payload_len: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>() * 4).sum();
        let expected = header_end + payload_len;
        if bytes.len() < expected {
            return Err(CheckpointError::Truncated { expected, actual: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(CheckpointError::Header(format!("{} trailing bytes after payload", bytes.len() - expected)));
        }
        let payload = &bytes[header_end..];

        let template = header.policy.init_params(0).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut params = template.clone();
        let mut seen = std::collections::BTreeSet::new();
        let mut cursor = 0;
        for t in &header.tensors {
            let expected_shape = template
                .get(&t.name)
                .map(|p| p.shape.clone())
                .ok_or_else(|| CheckpointError::Header(format!("unknown tensor {}", t.name)))?;
            if expected_shape != t.shape {
                return Err(CheckpointError::ShapeMismatch { name: t.name.clone(), expected: expected_shape, found: t.shape.clone() });
            }
            if t.offset != cursor {
                return Err(CheckpointError::Header(format!("tensor {} at offset {} (expected {cursor})", t.name, t.offset)));
            }
            let len = t.shape.iter().product::<usize>();
            let values: Vec<f64> = payload[cursor..cursor + 4 * len]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            cursor += 4 * len;
            let p = params.get_mut(&t.name).unwrap();
            p.step = t.step;
            match t.role {
                Role::Value => p.value = values,
                Role::AdamM => p.m = values,
                Role::AdamV => p.v = values,
            }
            seen.insert((t.name.clone(), t.role as u8));
        }
        for name in template.names() {
            for role in [Role::Value, Role::AdamM, Role::AdamV] {
                if !seen.contains(&(name.to_string(), role as u8)) {
                    return Err(CheckpointError::Header(format!("missing tensor {name} ({role:?})")));
                }
            }
        }
        Ok(Self { policy: header.policy, train: header.train, epoch: header.epoch, best_score: header.best_score, params })
    }

    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::Error> {
        Ok(Self::from_bytes(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{GreatConfig, Variant};
    use crate::instance::ProblemKind;

    fn sample() -> Checkpoint {
        let policy = PolicyConfig::new(GreatConfig { hidden_dim: 8, layers: 1, heads: 2, variant: Variant::Nf, symmetric_mode: false }, ProblemKind::Cvrp);
        let mut params = policy.init_params(5).unwrap();
        for (k, name) in params.names().map(str::to_string).collect::<Vec<_>>().iter().enumerate() {
            let p = params.get_mut(name).unwrap();
            p.m.iter_mut().for_each(|x| *x = 0.25 * k as f64);
            p.v.iter_mut().for_each(|x| *x = 1e-3);
            p.step = 7;
        }
        Checkpoint { policy, train: None, epoch: 3, best_score: Some(-4.5), params }
    }

    #[test]
    fn round_trip_at_f32() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        let mut rounded = c.clone();
        rounded.params.round_to_f32();
        assert_eq!(back, rounded);
        assert_eq!(back.params.get("dec.key").unwrap().step, 7);
    }

    #[test]
    fn truncation_reports_byte_counts() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        match Checkpoint::from_bytes(cut) {
            Err(CheckpointError::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, bytes.len() - 3);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(Checkpoint::from_bytes(&bytes[..30]), Err(CheckpointError::Truncated { .. })));
    }

    #[test]
    fn unknown_version_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        assert_eq!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Version { found: 9, expected: VERSION }));
        assert_eq!(Checkpoint::from_bytes(b"NOTACKPT0000000000000"), Err(CheckpointError::BadMagic));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let c = sample();
        let mut other = c.clone();
        other.policy.encoder.hidden_dim = 16;
        other.params = other.policy.init_params(1).unwrap();
        // header claims d=8 but tensors have d=16 shapes
        let mut bytes = other.to_bytes();
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[20..20 + header_len].to_vec()).unwrap();
        let patched = header.replacen("\"hidden_dim\":16", "\"hidden_dim\":8", 1);
        assert_eq!(patched.len(), header.len() - 1);
        let mut out = bytes[..12].to_vec();
        out.extend_from_slice(&(patched.len() as u64).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes.split_off(20 + header_len));
        assert!(matches!(Checkpoint::from_bytes(&out), Err(CheckpointError::ShapeMismatch { .. })));
    }
}
