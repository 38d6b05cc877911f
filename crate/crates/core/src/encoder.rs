//! GREAT: attention over the edges of a complete digraph.
//!
//! Edge embeddings are stored as a `[n(n-1), d]` tensor with one row per
//! directed edge `(i, j)`, `i != j`, in row-major order. The out-edges of node
//! `i` therefore occupy the contiguous block of rows `i(n-1) .. (i+1)(n-1)`;
//! the in-edges of every node are brought into the same grouped layout with a
//! row gather, so both attention directions reduce to a grouped softmax and a
//! grouped sum.
//!
//! A layer is an attention sublayer followed by a feedforward sublayer, each
//! wrapped as `LayerNorm(e + sublayer(e))`. The last layer always uses the
//! node-based (NB) attention so that its temporary node features can be
//! returned as node embeddings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, ParameterStore, Tape, Var};
use crate::instance::{ProblemKind, RoutingInstance};
use crate::rng::SplitMix64;
use crate::Error;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Node-based: edge features are recombined from temporary node features.
    Nb,
    /// Node-free: edge features concatenate neighborhood summaries directly.
    Nf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreatConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub variant: Variant,
    /// Ties the outgoing and incoming attention weights and symmetrizes the
    /// edge output, so symmetric inputs stay symmetric at every layer.
    #[serde(default)]
    pub symmetric_mode: bool,
}

impl Default for GreatConfig {
    fn default() -> Self {
        Self { hidden_dim: 32, layers: 2, heads: 4, variant: Variant::Nb, symmetric_mode: false }
    }
}

impl GreatConfig {
    /// The full-size configuration (d = 128, 5 layers, 8 heads).
    pub fn full(variant: Variant) -> Self {
        Self { hidden_dim: 128, layers: 5, heads: 8, variant, symmetric_mode: false }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let (d, h) = (self.hidden_dim, self.heads);
        let need = match self.variant {
            Variant::Nb => 2 * h,
            Variant::Nf => 4 * h,
        };
        if self.layers == 0 || h == 0 || d == 0 || d % need != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {d} must be divisible by {need} ({} heads, {:?}) and layers must be positive",
                h, self.variant
            )));
        }
        Ok(())
    }

    fn layer_variant(&self, layer: usize) -> Variant {
        if layer + 1 == self.layers {
            Variant::Nb
        } else {
            self.variant
        }
    }
}

/// Width of the raw per-edge input features for a problem kind.
pub fn raw_feature_dim(kind: ProblemKind) -> usize {
    match kind {
        ProblemKind::Tsp => 1,
        ProblemKind::Cvrp => 2,
        ProblemKind::Op => 3,
    }
}

/// Row bookkeeping for the complete digraph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeIndex {
    pub n: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Row `i(n-1) + k` holds the `k`-th in-edge of node `i`.
    pub in_perm: Vec<usize>,
    /// Row of the reversed edge `(j, i)` for each row `(i, j)`.
    pub reverse: Vec<usize>,
}

impl EdgeIndex {
    pub fn new(n: usize) -> Self {
        let m = n.saturating_sub(1);
        let row = |i: usize, j: usize| i * m + if j < i { j } else { j - 1 };
        let mut src = Vec::with_capacity(n * m);
        let mut dst = Vec::with_capacity(n * m);
        let mut in_perm = Vec::with_capacity(n * m);
        let mut reverse = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                src.push(i);
                dst.push(j);
                in_perm.push(row(j, i));
                reverse.push(row(j, i));
            }
        }
        Self { n, src, dst, in_perm, reverse }
    }

    pub fn edges(&self) -> usize {
        self.src.len()
    }

    pub fn row(&self, i: usize, j: usize) -> usize {
        assert!(i != j);
        i * (self.n - 1) + if j < i { j } else { j - 1 }
    }
}

/// Output of [`encode`].
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    /// `[n(n-1), d]`
    pub edges: Var,
    /// `[n, d]`
    pub nodes: Var,
}

fn uniform(store: &mut ParameterStore, name: &str, shape: &[usize], rng: &mut SplitMix64) -> Result<(), Error> {
    Ok(store.insert_uniform(name, shape, rng)?)
}

fn direction_names(layer: usize, dir: &str) -> [String; 3] {
    ["value", "key", "query"].map(|w| format!("enc.{layer}.att.{dir}.{w}"))
}

fn incoming_dir(cfg: &GreatConfig) -> &'static str {
    if cfg.symmetric_mode {
        "out"
    } else {
        "in"
    }
}

/// Adds freshly initialized encoder parameters to `store`.
pub fn init_encoder_params(
    store: &mut ParameterStore,
    cfg: &GreatConfig,
    kind: ProblemKind,
    rng: &mut SplitMix64,
) -> Result<(), Error> {
    cfg.validate()?;
    let d = cfg.hidden_dim;
    uniform(store, "enc.embed.weight", &[raw_feature_dim(kind), d], rng)?;
    store.insert_const("enc.embed.bias", &[d], 0.0)?;
    for l in 0..cfg.layers {
        let value_cols = match cfg.layer_variant(l) {
            Variant::Nb => d / 2,
            Variant::Nf => d / 4,
        };
        let dirs: &[&str] = if cfg.symmetric_mode { &["out"] } else { &["out", "in"] };
        for dir in dirs {
            let [v, k, q] = direction_names(l, dir);
            uniform(store, &v, &[d, value_cols], rng)?;
            uniform(store, &k, &[d, d], rng)?;
            uniform(store, &q, &[d, d], rng)?;
        }
        if cfg.layer_variant(l) == Variant::Nb {
            uniform(store, &format!("enc.{l}.att.combine"), &[2 * d, d], rng)?;
        }
        uniform(store, &format!("enc.{l}.ff.w1"), &[d, 2 * d], rng)?;
        store.insert_const(&format!("enc.{l}.ff.b1"), &[2 * d], 0.0)?;
        uniform(store, &format!("enc.{l}.ff.w2"), &[2 * d, d], rng)?;
        store.insert_const(&format!("enc.{l}.ff.b2"), &[d], 0.0)?;
        for norm in ["norm1", "norm2"] {
            store.insert_const(&format!("enc.{l}.{norm}.gain"), &[d], 1.0)?;
            store.insert_const(&format!("enc.{l}.{norm}.bias"), &[d], 0.0)?;
        }
    }
    Ok(())
}

/// Raw per-edge features, row-major over edges.
pub fn raw_edge_features(inst: &RoutingInstance, index: &EdgeIndex) -> Result<Vec<f64>, Error> {
    inst.validate()?;
    let width = raw_feature_dim(inst.kind);
    let mut out = Vec::with_capacity(index.edges() * width);
    for (&i, &j) in index.src.iter().zip(&index.dst) {
        out.push(inst.d(i, j));
        match inst.kind {
            ProblemKind::Tsp => {}
            ProblemKind::Cvrp => out.push(inst.demand(j) as f64 / inst.capacity.unwrap() as f64),
            ProblemKind::Op => {
                out.push(inst.prize(j));
                out.push(inst.budget.unwrap());
            }
        }
    }
    Ok(out)
}

/// Layer-0 edge embeddings: a linear map of the raw edge features.
pub fn embed_raw_edges(tape: &mut Tape, store: &ParameterStore, inst: &RoutingInstance, index: &EdgeIndex) -> Result<Var, Error> {
    let raw = raw_edge_features(inst, index)?;
    let width = raw_feature_dim(inst.kind);
    let w = tape.param(store, "enc.embed.weight")?;
    if tape.shape(w)[0] != width {
        return Err(Error::Config(format!(
            "parameters expect {} raw features, {} instances provide {width}",
            tape.shape(w)[0],
            inst.kind
        )));
    }
    let x = tape.constant(&[index.edges(), width], raw)?;
    let b = tape.param(store, "enc.embed.bias")?;
    Ok(tape.linear(x, w, Some(b))?)
}

/// Attention-weighted sum over each node's grouped edges:
/// `x_i = Σ_j softmax_j((K e_ij)·(Q e_ij)/√d) V e_ij`, per head.
fn neighborhood_summary(
    tape: &mut Tape,
    store: &ParameterStore,
    names: &[String; 3],
    grouped: Var,
    heads: usize,
    n: usize,
    d: usize,
) -> Result<Var, AutodiffError> {
    let [wv, wk, wq] = [&names[0], &names[1], &names[2]].map(|name| tape.param(store, name));
    let (wv, wk, wq) = (wv?, wk?, wq?);
    let values = tape.matmul(grouped, wv)?;
    let keys = tape.matmul(grouped, wk)?;
    let queries = tape.matmul(grouped, wq)?;
    let scores = tape.head_dot(keys, queries, heads)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let alpha = tape.group_softmax(scores, n - 1)?;
    let weighted = tape.head_scale(values, alpha, heads)?;
    tape.group_sum(weighted, n - 1)
}

/// Out-edge and in-edge summaries concatenated per node.
fn node_summaries(tape: &mut Tape, store: &ParameterStore, cfg: &GreatConfig, layer: usize, e: Var, index: &EdgeIndex) -> Result<Var, AutodiffError> {
    let (n, d, h) = (index.n, cfg.hidden_dim, cfg.heads);
    let out_sum = neighborhood_summary(tape, store, &direction_names(layer, "out"), e, h, n, d)?;
    let incoming = tape.gather_rows(e, &index.in_perm)?;
    let in_sum = neighborhood_summary(tape, store, &direction_names(layer, incoming_dir(cfg)), incoming, h, n, d)?;
    tape.concat(&[out_sum, in_sum])
}

fn symmetrize(tape: &mut Tape, cfg: &GreatConfig, e: Var, index: &EdgeIndex) -> Result<Var, AutodiffError> {
    if !cfg.symmetric_mode {
        return Ok(e);
    }
    let rev = tape.gather_rows(e, &index.reverse)?;
    let both = tape.add(e, rev)?;
    tape.scale(both, 0.5)
}

/// Node-based attention sublayer. Returns the new edge features and the
/// temporary node features `[n, d]` they were combined from.
pub fn nb_attention_sublayer(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &GreatConfig,
    layer: usize,
    e: Var,
    index: &EdgeIndex,
) -> Result<(Var, Var), AutodiffError> {
    let x = node_summaries(tape, store, cfg, layer, e, index)?;
    let xs = tape.gather_rows(x, &index.src)?;
    let xd = tape.gather_rows(x, &index.dst)?;
    let pair = tape.concat(&[xs, xd])?;
    let w = tape.param(store, &format!("enc.{layer}.att.combine"))?;
    let out = tape.matmul(pair, w)?;
    Ok((symmetrize(tape, cfg, out, index)?, x))
}

/// Node-free attention sublayer: edge `(i, j)` becomes the concatenation of
/// the out- and in-neighborhood summaries of `i` and of `j`.
pub fn nf_attention_sublayer(
    tape: &mut Tape,
    store: &ParameterStore,
    cfg: &GreatConfig,
    layer: usize,
    e: Var,
    index: &EdgeIndex,
) -> Result<Var, AutodiffError> {
    let t = node_summaries(tape, store, cfg, layer, e, index)?;
    let ts = tape.gather_rows(t, &index.src)?;
    let td = tape.gather_rows(t, &index.dst)?;
    let out = tape.concat(&[ts, td])?;
    symmetrize(tape, cfg, out, index)
}

/// `W2 · ReLU(W1 · e + b1) + b2` with inner width `2d`.
pub fn ff_sublayer(tape: &mut Tape, store: &ParameterStore, layer: usize, e: Var) -> Result<Var, AutodiffError> {
    let p = |tape: &mut Tape, s: &str| tape.param(store, &format!("enc.{layer}.ff.{s}"));
    let (w1, b1, w2, b2) = (p(tape, "w1")?, p(tape, "b1")?, p(tape, "w2")?, p(tape, "b2")?);
    let h = tape.linear(e, w1, Some(b1))?;
    let h = tape.relu(h)?;
    tape.linear(h, w2, Some(b2))
}

/// `LayerNorm(input + sublayer_out)` with the named gain and bias.
pub fn residual_norm(tape: &mut Tape, store: &ParameterStore, norm: &str, input: Var, sublayer_out: Var) -> Result<Var, AutodiffError> {
    let sum = tape.add(input, sublayer_out)?;
    let gain = tape.param(store, &format!("{norm}.gain"))?;
    let bias = tape.param(store, &format!("{norm}.bias"))?;
    tape.layer_norm(sum, gain, bias, LAYER_NORM_EPS)
}

/// Full encoder forward pass.
pub fn encode(tape: &mut Tape, store: &ParameterStore, cfg: &GreatConfig, inst: &RoutingInstance) -> Result<Encoded, Error> {
    cfg.validate()?;
    let index = EdgeIndex::new(inst.n());
    let mut e = embed_raw_edges(tape, store, inst, &index)?;
    let mut nodes = None;
    for l in 0..cfg.layers {
        let att = match cfg.layer_variant(l) {
            Variant::Nb => {
                let (att, x) = nb_attention_sublayer(tape, store, cfg, l, e, &index)?;
                nodes = Some(x);
                att
            }
            Variant::Nf => nf_attention_sublayer(tape, store, cfg, l, e, &index)?,
        };
        e = residual_norm(tape, store, &format!("enc.{l}.norm1"), e, att)?;
        let ff = ff_sublayer(tape, store, l, e)?;
        e = residual_norm(tape, store, &format!("enc.{l}.norm2"), e, ff)?;
    }
    Ok(Encoded { edges: e, nodes: nodes.expect("last layer is node-based") })
}

/// Pairwise cosine similarity and Euclidean distance between node embeddings
/// (`n x n`, row-major).
pub fn node_similarity(embeddings: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let d = embeddings.len() / n;
    let row = |i: usize| &embeddings[i * d..(i + 1) * d];
    let norms: Vec<f64> = (0..n).map(|i| row(i).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut cosine = vec![0.0; n * n];
    let mut euclid = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = row(i).iter().zip(row(j)).map(|(a, b)| a * b).sum();
            cosine[i * n + j] = if i == j {
                1.0
            } else if norms[i] > 0.0 && norms[j] > 0.0 {
                dot / (norms[i] * norms[j])
            } else {
                0.0
            };
            if i != j {
                euclid[i * n + j] = row(i).iter().zip(row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            }
        }
    }
    (cosine, euclid)
}

/// Encodes `inst` and renders the node similarity matrices as CSV with
/// header `i,j,cosine,euclidean`.
pub fn dump_node_similarity(store: &ParameterStore, cfg: &GreatConfig, inst: &RoutingInstance) -> Result<String, Error> {
    let mut tape = Tape::new();
    let enc = encode(&mut tape, store, cfg, inst)?;
    let n = inst.n();
    let (cosine, euclid) = node_similarity(tape.value(enc.nodes), n);
    let mut csv = String::from("i,j,cosine,euclidean\n");
    for i in 0..n {
        for j in 0..n {
            writeln!(csv, "{i},{j},{:.17e},{:.17e}", cosine[i * n + j], euclid[i * n + j]).unwrap();
        }
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, FdOptions};
    use crate::instance::{attach_cvrp, gen_euclidean, gen_xasy};

    fn store_for(cfg: &GreatConfig, kind: ProblemKind, seed: u64) -> ParameterStore {
        let mut s = ParameterStore::new();
        init_encoder_params(&mut s, cfg, kind, &mut SplitMix64::new(seed)).unwrap();
        s
    }

    #[test]
    fn config_divisibility() {
        assert!(GreatConfig { hidden_dim: 32, heads: 4, variant: Variant::Nb, ..Default::default() }.validate().is_ok());
        assert!(GreatConfig { hidden_dim: 24, heads: 4, variant: Variant::Nf, ..Default::default() }.validate().is_err());
        assert!(GreatConfig { layers: 0, ..Default::default() }.validate().is_err());
        assert!(GreatConfig::full(Variant::Nf).validate().is_ok());
    }

    #[test]
    fn edge_index_layout() {
        let idx = EdgeIndex::new(4);
        assert_eq!(idx.edges(), 12);
        for r in 0..12 {
            assert_eq!(idx.row(idx.src[r], idx.dst[r]), r);
            let rev = idx.reverse[r];
            assert_eq!((idx.src[rev], idx.dst[rev]), (idx.dst[r], idx.src[r]));
        }
        // in-edges of node 2 are (0,2), (1,2), (3,2)
        let block: Vec<(usize, usize)> = idx.in_perm[6..9].iter().map(|&r| (idx.src[r], idx.dst[r])).collect();
        assert_eq!(block, vec![(0, 2), (1, 2), (3, 2)]);
    }

    #[test]
    fn embedding_shape_and_cvrp_demand_channel() {
        let cfg = GreatConfig::default();
        let inst = gen_xasy(5, 1).unwrap();
        let s = store_for(&cfg, ProblemKind::Tsp, 1);
        let mut t = Tape::new();
        let idx = EdgeIndex::new(5);
        let e = embed_raw_edges(&mut t, &s, &inst, &idx).unwrap();
        assert_eq!(t.shape(e), &[20, 32]);

        let cvrp = attach_cvrp(&inst, 2).unwrap();
        let raw = raw_edge_features(&cvrp, &idx).unwrap();
        let (a, b) = (idx.row(1, 3), idx.row(4, 3));
        assert_eq!(raw[2 * a + 1], raw[2 * b + 1]);
        assert_eq!(raw[2 * a + 1], cvrp.demand(3) as f64 / 50.0);
    }

    #[test]
    fn missing_fields_are_rejected() {
        let mut cvrp = attach_cvrp(&gen_xasy(4, 1).unwrap(), 2).unwrap();
        cvrp.demands = None;
        assert!(raw_edge_features(&cvrp, &EdgeIndex::new(4)).is_err());
    }

    #[test]
    fn layer0_locality() {
        let cfg = GreatConfig::default();
        let s = store_for(&cfg, ProblemKind::Tsp, 3);
        let a = gen_xasy(5, 4).unwrap();
        let mut d = a.dist.as_slice().to_vec();
        d[5 + 3] = 0.123; // d[1][3]
        let b = RoutingInstance::tsp(a.distribution, crate::instance::DistanceMatrix::from_rows(5, d).unwrap(), 0);
        let idx = EdgeIndex::new(5);
        let mut t = Tape::new();
        let ea = embed_raw_edges(&mut t, &s, &a, &idx).unwrap();
        let eb = embed_raw_edges(&mut t, &s, &b, &idx).unwrap();
        let changed = idx.row(1, 3);
        for r in 0..idx.edges() {
            let same = t.value(ea)[r * 32..(r + 1) * 32] == t.value(eb)[r * 32..(r + 1) * 32];
            assert_eq!(same, r != changed, "row {r}");
        }
    }

    #[test]
    fn singleton_neighborhoods_at_n2() {
        for variant in [Variant::Nb, Variant::Nf] {
            let cfg = GreatConfig { hidden_dim: 16, layers: 2, heads: 2, variant, symmetric_mode: false };
            let s = store_for(&cfg, ProblemKind::Tsp, 5);
            let inst = gen_xasy(2, 1).unwrap();
            let enc = {
                let mut t = Tape::new();
                let e = encode(&mut t, &s, &cfg, &inst).unwrap();
                (t.shape(e.edges).to_vec(), t.shape(e.nodes).to_vec())
            };
            assert_eq!(enc, (vec![2, 16], vec![2, 16]));
        }
        // With one neighbor every softmax weight is 1, so NF output is a pure
        // concatenation of value projections.
        let cfg = GreatConfig { hidden_dim: 16, layers: 2, heads: 2, variant: Variant::Nf, symmetric_mode: false };
        let s = store_for(&cfg, ProblemKind::Tsp, 6);
        let idx = EdgeIndex::new(2);
        let mut t = Tape::new();
        let e = t.constant(&[2, 16], (0..32).map(|k| (k as f64 * 0.37).sin()).collect()).unwrap();
        let out = nf_attention_sublayer(&mut t, &s, &cfg, 0, e, &idx).unwrap();
        let ev = t.value(e).to_vec();
        let proj = |name: &str, row: usize| -> Vec<f64> {
            let w = &s.get(name).unwrap().value;
            (0..4).map(|c| (0..16).map(|k| ev[row * 16 + k] * w[k * 4 + c]).sum()).collect()
        };
        // out-edge of node 0 is row 0; in-edge of node 0 is row 1
        let mut expected = proj("enc.0.att.out.value", 0);
        expected.extend(proj("enc.0.att.in.value", 1));
        expected.extend(proj("enc.0.att.out.value", 1));
        expected.extend(proj("enc.0.att.in.value", 0));
        for (got, want) in t.value(out)[..16].iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn ff_zero_and_identity() {
        let d = 4;
        let mut s = ParameterStore::new();
        s.insert_const("enc.0.ff.w1", &[d, 2 * d], 0.0).unwrap();
        s.insert_const("enc.0.ff.b1", &[2 * d], 0.0).unwrap();
        s.insert_const("enc.0.ff.w2", &[2 * d, d], 0.0).unwrap();
        s.insert_const("enc.0.ff.b2", &[d], 0.0).unwrap();
        let x: Vec<f64> = vec![0.5, 1.0, 0.0, 2.5, 3.0, 0.25, 1.5, 0.75];
        let mut t = Tape::new();
        let e = t.constant(&[2, d], x.clone()).unwrap();
        let y = ff_sublayer(&mut t, &s, 0, e).unwrap();
        assert!(t.value(y).iter().all(|&v| v == 0.0));

        // W1 = [I 0], W2 = [I; 0]: identity on nonnegative inputs
        let mut w1 = vec![0.0; d * 2 * d];
        let mut w2 = vec![0.0; 2 * d * d];
        for k in 0..d {
            w1[k * 2 * d + k] = 1.0;
            w2[k * d + k] = 1.0;
        }
        s.get_mut("enc.0.ff.w1").unwrap().value = w1;
        s.get_mut("enc.0.ff.w2").unwrap().value = w2;
        let mut t = Tape::new();
        let e = t.constant(&[2, d], x.clone()).unwrap();
        let y = ff_sublayer(&mut t, &s, 0, e).unwrap();
        assert_eq!(t.value(y), x.as_slice());
    }

    #[test]
    fn ff_gradient_matches_finite_differences() {
        let cfg = GreatConfig { hidden_dim: 8, layers: 1, heads: 1, variant: Variant::Nb, symmetric_mode: false };
        let mut s = store_for(&cfg, ProblemKind::Tsp, 7);
        let mut rng = SplitMix64::new(1);
        s.insert("x", &[3, 8], (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        for b in ["enc.0.ff.b1", "enc.0.ff.b2"] {
            s.get_mut(b).unwrap().value.iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
        }
        let r = finite_diff_check(
            &s,
            |t: &mut Tape, s: &ParameterStore| -> Result<Var, Error> {
                let x = t.param(s, "x")?;
                let y = ff_sublayer(t, s, 0, x)?;
                let w: Vec<f64> = (0..24).map(|k| ((k * 7) % 5) as f64 - 2.0).collect();
                Ok(t.weighted_sum(y, &w)?)
            },
            &FdOptions { tol: 1e-6, samples: 400, ..FdOptions::default() },
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn residual_norm_with_zero_sublayer_is_layer_norm() {
        let mut s = ParameterStore::new();
        s.insert_const("n.gain", &[3], 1.0).unwrap();
        s.insert_const("n.bias", &[3], 0.0).unwrap();
        let mut t = Tape::new();
        let x = t.constant(&[2, 3], vec![1.0, 2.0, 4.0, -1.0, 0.0, 3.0]).unwrap();
        let z = t.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let y = residual_norm(&mut t, &s, "n", x, z).unwrap();
        let (g, b) = (t.param(&s, "n.gain").unwrap(), t.param(&s, "n.bias").unwrap());
        let direct = t.layer_norm(x, g, b, LAYER_NORM_EPS).unwrap();
        assert_eq!(t.value(y), t.value(direct));
        for r in 0..2 {
            let row = &t.value(y)[r * 3..r * 3 + 3];
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_mode_ties_scores_and_keeps_edges_symmetric() {
        for variant in [Variant::Nb, Variant::Nf] {
            let cfg = GreatConfig { hidden_dim: 16, layers: 3, heads: 2, variant, symmetric_mode: true };
            let s = store_for(&cfg, ProblemKind::Tsp, 8);
            assert!(!s.contains("enc.0.att.in.value"));
            let inst = gen_euclidean(6, 2).unwrap();
            let idx = EdgeIndex::new(6);
            let mut t = Tape::new();
            let mut e = embed_raw_edges(&mut t, &s, &inst, &idx).unwrap();
            for l in 0..cfg.layers {
                let att = match cfg.layer_variant(l) {
                    Variant::Nb => nb_attention_sublayer(&mut t, &s, &cfg, l, e, &idx).unwrap().0,
                    Variant::Nf => nf_attention_sublayer(&mut t, &s, &cfg, l, e, &idx).unwrap(),
                };
                e = residual_norm(&mut t, &s, &format!("enc.{l}.norm1"), e, att).unwrap();
                let ff = ff_sublayer(&mut t, &s, l, e).unwrap();
                e = residual_norm(&mut t, &s, &format!("enc.{l}.norm2"), e, ff).unwrap();
                let v = t.value(e);
                for r in 0..idx.edges() {
                    let q = idx.reverse[r];
                    for k in 0..16 {
                        assert!((v[r * 16 + k] - v[q * 16 + k]).abs() < 1e-10, "layer {l} {variant:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn similarity_dump_properties() {
        let cfg = GreatConfig::default();
        let s = store_for(&cfg, ProblemKind::Tsp, 9);
        let inst = gen_xasy(5, 3).unwrap();
        let csv = dump_node_similarity(&s, &cfg, &inst).unwrap();
        assert_eq!(csv, dump_node_similarity(&s, &cfg, &inst).unwrap());
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("i,j,cosine,euclidean"));
        let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 25);
        for r in &rows {
            if r[0] == r[1] {
                assert_eq!(r[2], 1.0);
                assert_eq!(r[3], 0.0);
            }
            let mirror = rows.iter().find(|m| m[0] == r[1] && m[1] == r[0]).unwrap();
            assert!((mirror[2] - r[2]).abs() < 1e-15);
        }
    }
}
