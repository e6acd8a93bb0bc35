//! Graph attention network with exact hand-derived reverse-mode gradients.
//!
//! Multi-head GAT layers (LeakyReLU attention logits, softmax over each
//! node's in-neighborhood including a self-loop, ELU activation), a
//! permutation-invariant readout, and a one-hidden-layer MLP head producing
//! four class logits. The backward pass returns gradients for every
//! parameter and for the input node features; the latter feeds attribution.

mod checkpoint;
mod train;

pub use train::{
    loss, train, ClassWeightMode, EpochStats, OptimizerKind, TrainConfig, TrainHistory,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map(|v| v.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        Self { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// self (n x k) * other (k x m).
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// self^T (k x n -> n x k) * other (k x m).
    pub fn t_matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows);
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// self (n x k) * other^T (m x k -> k x m).
    pub fn matmul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols);
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut sum = 0.0;
                for (a, b) in arow.iter().zip(brow) {
                    sum += a * b;
                }
                out.set(i, j, sum);
            }
        }
        out
    }
}

/// A batch of one or more disjoint graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    /// Node feature matrix, N x F.
    pub features: Mat,
    /// Directed edges (src, dst) with self-loops, sorted by (dst, src).
    pub edges: Vec<(u32, u32)>,
    /// Graph id per node, for pooling.
    pub graph_of: Vec<u32>,
    pub num_graphs: usize,
    /// CSR offsets: edges[in_start[i]..in_start[i+1]] point at dst i.
    in_start: Vec<usize>,
}

impl GraphBatch {
    /// Single graph from per-node features and undirected edges; both edge
    /// directions and self-loops are added here.
    pub fn single(features: Vec<Vec<f64>>, undirected_edges: &[(u32, u32)]) -> Result<Self> {
        let n = features.len();
        if n == 0 {
            return Err(Error::invalid("graph batch needs at least one node"));
        }
        let mut edges = std::collections::BTreeSet::new();
        for i in 0..n as u32 {
            edges.insert((i, i));
        }
        for &(a, b) in undirected_edges {
            if a as usize >= n || b as usize >= n {
                return Err(Error::invalid(format!(
                    "edge ({a},{b}) exceeds node count {n}"
                )));
            }
            edges.insert((a, b));
            edges.insert((b, a));
        }
        Self::from_directed(Mat::from_rows(features), edges.into_iter().collect(), vec![0; n], 1)
    }

    fn from_directed(
        features: Mat,
        mut edges: Vec<(u32, u32)>,
        graph_of: Vec<u32>,
        num_graphs: usize,
    ) -> Result<Self> {
        let n = features.rows;
        edges.sort_by_key(|&(src, dst)| (dst, src));
        let mut in_start = vec![0usize; n + 1];
        for &(_, dst) in &edges {
            in_start[dst as usize + 1] += 1;
        }
        for i in 0..n {
            in_start[i + 1] += in_start[i];
        }
        Ok(Self {
            features,
            edges,
            graph_of,
            num_graphs,
            in_start,
        })
    }

    /// Disjoint union preserving input order; graph ids are renumbered.
    pub fn union(batches: &[&GraphBatch]) -> GraphBatch {
        let mut features = Vec::new();
        let mut edges = Vec::new();
        let mut graph_of = Vec::new();
        let mut node_off = 0u32;
        let mut graph_off = 0u32;
        for b in batches {
            for r in 0..b.features.rows {
                features.push(b.features.row(r).to_vec());
            }
            for &(s, d) in &b.edges {
                edges.push((s + node_off, d + node_off));
            }
            for &g in &b.graph_of {
                graph_of.push(g + graph_off);
            }
            node_off += b.features.rows as u32;
            graph_off += b.num_graphs as u32;
        }
        GraphBatch::from_directed(
            Mat::from_rows(features),
            edges,
            graph_of,
            graph_off as usize,
        )
        .expect("union of valid batches")
    }

    pub fn node_count(&self) -> usize {
        self.features.rows
    }

    fn in_edges(&self, node: usize) -> std::ops::Range<usize> {
        self.in_start[node]..self.in_start[node + 1]
    }
}

/// One multi-head attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    /// Concatenate head outputs; the final layer averages instead.
    pub concat: bool,
    pub w: Vec<Mat>,
    pub a_self: Vec<Vec<f64>>,
    pub a_neigh: Vec<Vec<f64>>,
}

/// One-hidden-layer classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

/// Graph-level pooling of node embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Mean,
    Sum,
    Max,
}

/// Number of output classes.
pub const CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GatModel {
    pub layers: Vec<GatLayer>,
    pub mlp: Mlp,
    pub readout: Readout,
    pub dropout: f64,
    pub input_dim: usize,
}

const LEAKY_SLOPE: f64 = 0.2;

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn elu_grad(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        pre.exp()
    }
}

impl GatModel {
    /// Glorot-initialized model; layer widths chain input -> hidden -> 4.
    pub fn new(
        input_dim: usize,
        hidden: usize,
        layers: usize,
        heads: usize,
        dropout: f64,
        readout: Readout,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(layers >= 1 && heads >= 1 && hidden >= 1);
        let glorot = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| -> Mat {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let mut m = Mat::zeros(rows, cols);
            for v in m.data.iter_mut() {
                *v = rng.gen_range(-limit..=limit);
            }
            m
        };
        let glorot_vec = |len: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            let limit = (6.0 / (len + 1) as f64).sqrt();
            (0..len).map(|_| rng.gen_range(-limit..=limit)).collect()
        };
        let mut gat_layers = Vec::with_capacity(layers);
        for li in 0..layers {
            let in_dim = if li == 0 { input_dim } else { hidden * heads };
            let concat = li + 1 < layers;
            let mut w = Vec::new();
            let mut a_self = Vec::new();
            let mut a_neigh = Vec::new();
            for _ in 0..heads {
                w.push(glorot(in_dim, hidden, rng));
                a_self.push(glorot_vec(hidden, rng));
                a_neigh.push(glorot_vec(hidden, rng));
            }
            gat_layers.push(GatLayer {
                in_dim,
                out_dim: hidden,
                heads,
                concat,
                w,
                a_self,
                a_neigh,
            });
        }
        let mlp = Mlp {
            w1: glorot(hidden, hidden, rng),
            b1: vec![0.0; hidden],
            w2: glorot(hidden, CLASSES, rng),
            b2: vec![0.0; CLASSES],
        };
        GatModel {
            layers: gat_layers,
            mlp,
            readout,
            dropout,
            input_dim,
        }
    }

    /// Zero-valued clone with identical shapes, used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.for_each_param_mut(|v| v.iter_mut().for_each(|x| *x = 0.0));
        g
    }

    /// Visit every parameter tensor in a fixed order.
    pub fn for_each_param(&self, mut f: impl FnMut(&Vec<f64>)) {
        for layer in &self.layers {
            for w in &layer.w {
                f(&w.data);
            }
            for a in &layer.a_self {
                f(a);
            }
            for a in &layer.a_neigh {
                f(a);
            }
        }
        f(&self.mlp.w1.data);
        f(&self.mlp.b1);
        f(&self.mlp.w2.data);
        f(&self.mlp.b2);
    }

    /// Mutable variant of [`GatModel::for_each_param`], same order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut Vec<f64>)) {
        for layer in &mut self.layers {
            for w in &mut layer.w {
                f(&mut w.data);
            }
            for a in &mut layer.a_self {
                f(a);
            }
            for a in &mut layer.a_neigh {
                f(a);
            }
        }
        f(&mut self.mlp.w1.data);
        f(&mut self.mlp.b1);
        f(&mut self.mlp.w2.data);
        f(&mut self.mlp.b2);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|v| n += v.len());
        n
    }
}

/// Dropout multipliers for one training-mode forward pass. Masks are fixed at
/// creation so a forward/backward pair sees identical noise.
#[derive(Debug, Clone)]
pub struct DropoutPlan {
    /// Per layer: multiplier per input element (0 or 1/(1-p)).
    pub input: Vec<Vec<f64>>,
    /// Per layer, per head: multiplier per edge.
    pub attention: Vec<Vec<Vec<f64>>>,
}

impl DropoutPlan {
    /// Sample masks for `batch` under `model.dropout`.
    pub fn sample(model: &GatModel, batch: &GraphBatch, rng: &mut impl Rng) -> Self {
        let p = model.dropout;
        let keep = 1.0 - p;
        let draw = |len: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    if p > 0.0 && rng.gen_range(0.0..1.0) < p {
                        0.0
                    } else {
                        1.0 / keep
                    }
                })
                .collect()
        };
        let n = batch.node_count();
        let e = batch.edges.len();
        let mut input = Vec::new();
        let mut attention = Vec::new();
        for layer in &model.layers {
            input.push(draw(n * layer.in_dim, rng));
            attention.push((0..layer.heads).map(|_| draw(e, rng)).collect());
        }
        Self { input, attention }
    }
}

struct HeadCache {
    z: Mat,
    raw: Vec<f64>,
    alpha: Vec<f64>,
    alpha_dropped: Vec<f64>,
    m: Mat,
}

struct LayerCache {
    input: Mat,
    heads: Vec<HeadCache>,
    mean_pre: Option<Mat>,
    output: Mat,
}

/// Intermediates cached by [`gat_forward`] for the exact backward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    pooled: Mat,
    graph_sizes: Vec<usize>,
    max_source: Option<Vec<Vec<usize>>>,
    hidden_pre: Mat,
    hidden: Mat,
    /// Per-graph class logits.
    pub logits: Mat,
}

/// Forward pass; `dropout` is Some only in training mode.
pub fn gat_forward(
    batch: &GraphBatch,
    model: &GatModel,
    dropout: Option<&DropoutPlan>,
) -> Result<ForwardCache> {
    if batch.features.cols != model.input_dim {
        return Err(Error::invalid(format!(
            "feature dim {} does not match model input dim {}",
            batch.features.cols, model.input_dim
        )));
    }
    let n = batch.node_count();
    let mut h = batch.features.clone();
    let mut layer_caches = Vec::with_capacity(model.layers.len());

    for (li, layer) in model.layers.iter().enumerate() {
        let mut input = h;
        if let Some(plan) = dropout {
            for (v, &m) in input.data.iter_mut().zip(&plan.input[li]) {
                *v *= m;
            }
        }
        let mut heads = Vec::with_capacity(layer.heads);
        for hi in 0..layer.heads {
            let z = input.matmul(&layer.w[hi]);
            let s: Vec<f64> = (0..n)
                .map(|i| z.row(i).iter().zip(&layer.a_self[hi]).map(|(a, b)| a * b).sum())
                .collect();
            let t: Vec<f64> = (0..n)
                .map(|j| z.row(j).iter().zip(&layer.a_neigh[hi]).map(|(a, b)| a * b).sum())
                .collect();
            let mut raw = Vec::with_capacity(batch.edges.len());
            for &(src, dst) in &batch.edges {
                raw.push(s[dst as usize] + t[src as usize]);
            }
            let e: Vec<f64> = raw
                .iter()
                .map(|&r| if r > 0.0 { r } else { LEAKY_SLOPE * r })
                .collect();
            // Softmax per destination over its in-neighborhood.
            let mut alpha = vec![0.0f64; e.len()];
            for i in 0..n {
                let range = batch.in_edges(i);
                if range.is_empty() {
                    continue;
                }
                let mx = e[range.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in range.clone() {
                    let v = (e[k] - mx).exp();
                    alpha[k] = v;
                    sum += v;
                }
                for k in range {
                    alpha[k] /= sum;
                }
            }
            let alpha_dropped: Vec<f64> = match dropout {
                Some(plan) => alpha
                    .iter()
                    .zip(&plan.attention[li][hi])
                    .map(|(&a, &m)| a * m)
                    .collect(),
                None => alpha.clone(),
            };
            let mut m = Mat::zeros(n, layer.out_dim);
            for (k, &(src, dst)) in batch.edges.iter().enumerate() {
                let a = alpha_dropped[k];
                if a == 0.0 {
                    continue;
                }
                let zsrc = z.row(src as usize);
                let mrow = m.row_mut(dst as usize);
                for (o, &v) in mrow.iter_mut().zip(zsrc) {
                    *o += a * v;
                }
            }
            heads.push(HeadCache {
                z,
                raw,
                alpha,
                alpha_dropped,
                m,
            });
        }

        let (output, mean_pre) = if layer.concat {
            let mut out = Mat::zeros(n, layer.out_dim * layer.heads);
            for (hi, hc) in heads.iter().enumerate() {
                for i in 0..n {
                    for c in 0..layer.out_dim {
                        out.set(i, hi * layer.out_dim + c, elu(hc.m.get(i, c)));
                    }
                }
            }
            (out, None)
        } else {
            let mut pre = Mat::zeros(n, layer.out_dim);
            for hc in &heads {
                for (o, &v) in pre.data.iter_mut().zip(&hc.m.data) {
                    *o += v;
                }
            }
            for v in pre.data.iter_mut() {
                *v /= layer.heads as f64;
            }
            let mut out = Mat::zeros(n, layer.out_dim);
            for (o, &v) in out.data.iter_mut().zip(&pre.data) {
                *o = elu(v);
            }
            (out, Some(pre))
        };
        h = output.clone();
        layer_caches.push(LayerCache {
            input,
            heads,
            mean_pre,
            output,
        });
    }

    // Readout.
    let feat_dim = h.cols;
    let g = batch.num_graphs;
    let mut pooled = Mat::zeros(g, feat_dim);
    let mut graph_sizes = vec![0usize; g];
    for &gid in &batch.graph_of {
        graph_sizes[gid as usize] += 1;
    }
    let mut max_source = None;
    match model.readout {
        Readout::Mean | Readout::Sum => {
            for i in 0..n {
                let gid = batch.graph_of[i] as usize;
                let row = h.row(i);
                let prow = pooled.row_mut(gid);
                for (o, &v) in prow.iter_mut().zip(row) {
                    *o += v;
                }
            }
            if model.readout == Readout::Mean {
                for gid in 0..g {
                    let c = graph_sizes[gid] as f64;
                    for v in pooled.row_mut(gid) {
                        *v /= c;
                    }
                }
            }
        }
        Readout::Max => {
            let mut src = vec![vec![usize::MAX; feat_dim]; g];
            for v in pooled.data.iter_mut() {
                *v = f64::NEG_INFINITY;
            }
            for i in 0..n {
                let gid = batch.graph_of[i] as usize;
                for c in 0..feat_dim {
                    let v = h.get(i, c);
                    if v > pooled.get(gid, c) {
                        pooled.set(gid, c, v);
                        src[gid][c] = i;
                    }
                }
            }
            max_source = Some(src);
        }
    }

    // MLP head.
    let mut hidden_pre = pooled.matmul(&model.mlp.w1);
    for r in 0..g {
        for (v, &b) in hidden_pre.row_mut(r).iter_mut().zip(&model.mlp.b1) {
            *v += b;
        }
    }
    let mut hidden = hidden_pre.clone();
    for v in hidden.data.iter_mut() {
        *v = v.max(0.0);
    }
    let mut logits = hidden.matmul(&model.mlp.w2);
    for r in 0..g {
        for (v, &b) in logits.row_mut(r).iter_mut().zip(&model.mlp.b2) {
            *v += b;
        }
    }

    Ok(ForwardCache {
        layers: layer_caches,
        pooled,
        graph_sizes,
        max_source,
        hidden_pre,
        hidden,
        logits,
    })
}

/// Exact reverse-mode gradients for every parameter plus the input features.
///
/// `dlogits` is the upstream gradient at the logits (G x 4); the forward must
/// have run with the same dropout plan (or none).
pub fn backward(
    batch: &GraphBatch,
    model: &GatModel,
    cache: &ForwardCache,
    dlogits: &Mat,
    dropout: Option<&DropoutPlan>,
) -> (GatModel, Mat) {
    let n = batch.node_count();
    let g = batch.num_graphs;
    let mut grads = model.zeros_like();

    // MLP head.
    let dw2 = cache.hidden.t_matmul(dlogits);
    grads.mlp.w2.data = dw2.data;
    for r in 0..g {
        for (gb, &v) in grads.mlp.b2.iter_mut().zip(dlogits.row(r)) {
            *gb += v;
        }
    }
    let mut dhidden = dlogits.matmul_t(&model.mlp.w2);
    for (dh, &pre) in dhidden.data.iter_mut().zip(&cache.hidden_pre.data) {
        if pre <= 0.0 {
            *dh = 0.0;
        }
    }
    let dw1 = cache.pooled.t_matmul(&dhidden);
    grads.mlp.w1.data = dw1.data;
    for r in 0..g {
        for (gb, &v) in grads.mlp.b1.iter_mut().zip(dhidden.row(r)) {
            *gb += v;
        }
    }
    let dpooled = dhidden.matmul_t(&model.mlp.w1);

    // Readout backward.
    let feat_dim = cache.layers.last().map(|l| l.output.cols).unwrap_or(0);
    let mut dh = Mat::zeros(n, feat_dim);
    match model.readout {
        Readout::Mean => {
            for i in 0..n {
                let gid = batch.graph_of[i] as usize;
                let c = cache.graph_sizes[gid] as f64;
                for (o, &v) in dh.row_mut(i).iter_mut().zip(dpooled.row(gid)) {
                    *o = v / c;
                }
            }
        }
        Readout::Sum => {
            for i in 0..n {
                let gid = batch.graph_of[i] as usize;
                for (o, &v) in dh.row_mut(i).iter_mut().zip(dpooled.row(gid)) {
                    *o = v;
                }
            }
        }
        Readout::Max => {
            let src = cache.max_source.as_ref().expect("cached for max readout");
            for gid in 0..g {
                for c in 0..feat_dim {
                    let i = src[gid][c];
                    if i != usize::MAX {
                        let v = dh.get(i, c) + dpooled.get(gid, c);
                        dh.set(i, c, v);
                    }
                }
            }
        }
    }

    // GAT layers, reversed.
    for (li, layer) in model.layers.iter().enumerate().rev() {
        let lc = &cache.layers[li];
        let mut dinput = Mat::zeros(n, layer.in_dim);
        for hi in 0..layer.heads {
            let hc = &lc.heads[hi];
            // Gradient at this head's pre-activation aggregate m.
            let mut dm = Mat::zeros(n, layer.out_dim);
            if layer.concat {
                for i in 0..n {
                    for c in 0..layer.out_dim {
                        let go = dh.get(i, hi * layer.out_dim + c);
                        dm.set(i, c, go * elu_grad(hc.m.get(i, c)));
                    }
                }
            } else {
                let pre = lc.mean_pre.as_ref().expect("cached for averaged layer");
                for i in 0..n {
                    for c in 0..layer.out_dim {
                        let go = dh.get(i, c) * elu_grad(pre.get(i, c));
                        dm.set(i, c, go / layer.heads as f64);
                    }
                }
            }

            let mut dz = Mat::zeros(n, layer.out_dim);
            let mut dalpha_dropped = vec![0.0f64; batch.edges.len()];
            for (k, &(src, dst)) in batch.edges.iter().enumerate() {
                let dmrow = dm.row(dst as usize);
                let zrow = hc.z.row(src as usize);
                let mut dot = 0.0;
                for (a, b) in dmrow.iter().zip(zrow) {
                    dot += a * b;
                }
                dalpha_dropped[k] = dot;
                let a = hc.alpha_dropped[k];
                if a != 0.0 {
                    let dzrow = dz.row_mut(src as usize);
                    for (o, &v) in dzrow.iter_mut().zip(dmrow) {
                        *o += a * v;
                    }
                }
            }
            let dalpha: Vec<f64> = match dropout {
                Some(plan) => dalpha_dropped
                    .iter()
                    .zip(&plan.attention[li][hi])
                    .map(|(&d, &m)| d * m)
                    .collect(),
                None => dalpha_dropped,
            };
            // Softmax backward within each destination group.
            let mut de = vec![0.0f64; batch.edges.len()];
            for i in 0..n {
                let range = batch.in_edges(i);
                let mut weighted = 0.0;
                for k in range.clone() {
                    weighted += hc.alpha[k] * dalpha[k];
                }
                for k in range {
                    de[k] = hc.alpha[k] * (dalpha[k] - weighted);
                }
            }
            // LeakyReLU backward into the raw attention logits.
            let mut ds = vec![0.0f64; n];
            let mut dt = vec![0.0f64; n];
            for (k, &(src, dst)) in batch.edges.iter().enumerate() {
                let draw = de[k] * if hc.raw[k] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                ds[dst as usize] += draw;
                dt[src as usize] += draw;
            }
            // s = z a_self, t = z a_neigh.
            for i in 0..n {
                let zrow = hc.z.row(i);
                for (ga, &zv) in grads.layers[li].a_self[hi].iter_mut().zip(zrow) {
                    *ga += ds[i] * zv;
                }
                for (ga, &zv) in grads.layers[li].a_neigh[hi].iter_mut().zip(zrow) {
                    *ga += dt[i] * zv;
                }
                let dzrow = dz.row_mut(i);
                for ((o, &asf), &anb) in dzrow
                    .iter_mut()
                    .zip(&layer.a_self[hi])
                    .zip(&layer.a_neigh[hi])
                {
                    *o += ds[i] * asf + dt[i] * anb;
                }
            }
            // z = input W.
            let dw = lc.input.t_matmul(&dz);
            for (o, &v) in grads.layers[li].w[hi].data.iter_mut().zip(&dw.data) {
                *o += v;
            }
            let dinp = dz.matmul_t(&layer.w[hi]);
            for (o, &v) in dinput.data.iter_mut().zip(&dinp.data) {
                *o += v;
            }
        }
        if let Some(plan) = dropout {
            for (v, &m) in dinput.data.iter_mut().zip(&plan.input[li]) {
                *v *= m;
            }
        }
        dh = dinput;
    }

    (grads, dh)
}

/// Class probabilities for one graph: softmax of the logits.
pub fn predict(model: &GatModel, graph: &GraphBatch) -> Result<Vec<f64>> {
    let cache = gat_forward(graph, model, None)?;
    Ok(softmax(cache.logits.row(0)))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tiny_model(rng_seed: u64, input_dim: usize, hidden: usize, layers: usize, heads: usize) -> GatModel {
        let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
        GatModel::new(input_dim, hidden, layers, heads, 0.0, Readout::Mean, &mut rng)
    }

    #[test]
    fn single_node_self_loop_attention_is_one() {
        let model = tiny_model(1, 3, 2, 1, 1);
        let batch = GraphBatch::single(vec![vec![0.3, -0.7, 1.1]], &[]).unwrap();
        let cache = gat_forward(&batch, &model, None).unwrap();
        assert_eq!(cache.layers[0].heads[0].alpha, vec![1.0]);
        // Output equals ELU(W h) for the lone node.
        let z = &cache.layers[0].heads[0].z;
        for c in 0..2 {
            assert_relative_eq!(
                cache.layers[0].output.get(0, c),
                elu(z.get(0, c)),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn identical_nodes_split_attention_evenly() {
        let model = tiny_model(2, 3, 2, 2, 2);
        let feats = vec![vec![0.5, -0.2, 0.9], vec![0.5, -0.2, 0.9]];
        let batch = GraphBatch::single(feats, &[(0, 1)]).unwrap();
        let cache = gat_forward(&batch, &model, None).unwrap();
        for hc in &cache.layers[0].heads {
            for &a in &hc.alpha {
                assert_relative_eq!(a, 0.5, epsilon = 1e-12);
            }
        }
        // Pooling each node individually gives identical logits.
        let single = GraphBatch::single(vec![vec![0.5, -0.2, 0.9]], &[]).unwrap();
        let c1 = gat_forward(&single, &model, None).unwrap();
        let mut two = GraphBatch::union(&[&single, &single]);
        let c2 = gat_forward(&two, &model, None).unwrap();
        for c in 0..CLASSES {
            assert_relative_eq!(c2.logits.get(0, c), c1.logits.get(0, c), epsilon = 1e-12);
            assert_relative_eq!(c2.logits.get(1, c), c1.logits.get(0, c), epsilon = 1e-12);
        }
        two.graph_of = vec![0, 0];
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let model = tiny_model(3, 4, 3, 2, 2);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let feats: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let batch = GraphBatch::single(feats, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]).unwrap();
        let cache = gat_forward(&batch, &model, None).unwrap();
        for lc in &cache.layers {
            for hc in &lc.heads {
                for i in 0..batch.node_count() {
                    let sum: f64 = batch.in_edges(i).map(|k| hc.alpha[k]).sum();
                    assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn permutation_invariance_of_graph_logits() {
        let model = tiny_model(4, 5, 4, 2, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let feats: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let edges = [(0u32, 1u32), (1, 2), (2, 3), (3, 4), (0, 4)];
        let batch = GraphBatch::single(feats.clone(), &edges).unwrap();
        let base = gat_forward(&batch, &model, None).unwrap();

        // Relabel nodes with the permutation i -> (i + 2) % 5.
        let perm = |i: u32| (i + 2) % 5;
        let mut pfeats = vec![vec![]; 5];
        for (i, f) in feats.into_iter().enumerate() {
            pfeats[perm(i as u32) as usize] = f;
        }
        let pedges: Vec<(u32, u32)> = edges.iter().map(|&(a, b)| (perm(a), perm(b))).collect();
        let pbatch = GraphBatch::single(pfeats, &pedges).unwrap();
        let permuted = gat_forward(&pbatch, &model, None).unwrap();
        for c in 0..CLASSES {
            assert_relative_eq!(
                base.logits.get(0, c),
                permuted.logits.get(0, c),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn duplicating_nodes_preserves_mean_pool() {
        let model = tiny_model(5, 3, 4, 2, 2);
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let feats: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let edges = [(0u32, 1u32), (1, 2), (2, 3)];
        let batch = GraphBatch::single(feats.clone(), &edges).unwrap();
        let base = gat_forward(&batch, &model, None).unwrap();

        // Disjoint duplicate inside one graph: every node twice, edges copied.
        let mut dfeats = feats.clone();
        dfeats.extend(feats);
        let mut dedges: Vec<(u32, u32)> = edges.to_vec();
        dedges.extend(edges.iter().map(|&(a, b)| (a + 4, b + 4)));
        let mut dup = GraphBatch::single(dfeats, &dedges).unwrap();
        dup.graph_of = vec![0; 8];
        dup.num_graphs = 1;
        let doubled = gat_forward(&dup, &model, None).unwrap();
        for c in 0..base.pooled.cols {
            assert_relative_eq!(
                base.pooled.get(0, c),
                doubled.pooled.get(0, c),
                epsilon = 1e-9
            );
        }
    }

    /// Hand-computed forward pass on a fixed 2-node model.
    ///
    /// Weights are chosen so every intermediate stays in the linear branch of
    /// its activation: W = [[1,0],[0,1],[1,1]], a_self = (1, 0),
    /// a_neigh = (0, 1), features h0 = (1, 2, 3), h1 = (2, 0, 1), edge both
    /// ways plus self-loops.
    ///
    /// z0 = (1+3, 2+3) = (4, 5); z1 = (2+1, 0+1) = (3, 1).
    /// raw(j->i) = z_i[0] + z_j[1]:
    ///   raw(0->0) = 4+5 = 9, raw(1->0) = 4+1 = 5,
    ///   raw(0->1) = 3+5 = 8, raw(1->1) = 3+1 = 4.
    /// alpha(.->0) = softmax(9, 5) = (e4/(1+e4), 1/(1+e4)) over (self, from 1)
    /// m0 = a00 z0 + a10 z1, m1 = a01 z0 + a11 z1, all positive -> ELU = id.
    /// Readout (mean of 2 nodes), MLP identity-ish: w1 = I, b1 = (0.5, 0.5),
    /// w2 rows map to 4 logits: logit_c = u[0]*W2[0][c] + u[1]*W2[1][c] + b2.
    #[test]
    fn golden_two_node_forward_matches_hand_computation() {
        let mut model = tiny_model(0, 3, 2, 1, 1);
        model.layers[0].w[0] = Mat::from_rows(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ]);
        model.layers[0].a_self[0] = vec![1.0, 0.0];
        model.layers[0].a_neigh[0] = vec![0.0, 1.0];
        model.mlp.w1 = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        model.mlp.b1 = vec![0.5, 0.5];
        model.mlp.w2 = Mat::from_rows(vec![
            vec![1.0, 0.0, -1.0, 2.0],
            vec![0.0, 1.0, 1.0, -1.0],
        ]);
        model.mlp.b2 = vec![0.1, -0.1, 0.0, 0.25];

        let batch =
            GraphBatch::single(vec![vec![1.0, 2.0, 3.0], vec![2.0, 0.0, 1.0]], &[(0, 1)]).unwrap();
        let cache = gat_forward(&batch, &model, None).unwrap();

        let e4 = 4.0f64.exp();
        let a00 = e4 / (1.0 + e4);
        let a10 = 1.0 / (1.0 + e4);
        let a01 = e4 / (1.0 + e4);
        let a11 = 1.0 / (1.0 + e4);
        let m0 = [a00 * 4.0 + a10 * 3.0, a00 * 5.0 + a10 * 1.0];
        let m1 = [a01 * 4.0 + a11 * 3.0, a01 * 5.0 + a11 * 1.0];
        let pooled = [(m0[0] + m1[0]) / 2.0, (m0[1] + m1[1]) / 2.0];
        let u = [pooled[0] + 0.5, pooled[1] + 0.5];
        let expect = [
            u[0] + 0.1,
            u[1] - 0.1,
            -u[0] + u[1],
            2.0 * u[0] - u[1] + 0.25,
        ];
        for c in 0..CLASSES {
            assert_relative_eq!(cache.logits.get(0, c), expect[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = tiny_model(6, 3, 2, 1, 1);
        let batch = GraphBatch::single(vec![vec![1.0, 2.0]], &[]).unwrap();
        assert!(gat_forward(&batch, &model, None).is_err());
    }

    /// Central finite differences on every parameter and input feature.
    fn finite_difference_check(seed: u64, dropout: f64) {
        finite_difference_check_with(seed, dropout, Readout::Mean);
    }

    fn finite_difference_check_with(seed: u64, dropout: f64, readout: Readout) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut model = GatModel::new(3, 2, 2, 2, dropout, readout, &mut rng);
        model.dropout = dropout;
        let feats: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let batch = GraphBatch::single(feats, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let labels = [1u8];
        let weights = [1.0; CLASSES];
        let plan = if dropout > 0.0 {
            Some(DropoutPlan::sample(&model, &batch, &mut rng))
        } else {
            None
        };

        let eval_loss = |m: &GatModel, b: &GraphBatch| -> f64 {
            let cache = gat_forward(b, m, plan.as_ref()).unwrap();
            train::loss(&cache.logits, &labels, &weights).unwrap().0
        };

        let cache = gat_forward(&batch, &model, plan.as_ref()).unwrap();
        let (_, dlogits) = train::loss(&cache.logits, &labels, &weights).unwrap();
        let (grads, dinput) = backward(&batch, &model, &cache, &dlogits, plan.as_ref());

        let eps = 1e-4;
        let close = |analytic: f64, fd: f64| {
            let denom = analytic.abs().max(fd.abs());
            denom < 1e-8 || (analytic - fd).abs() <= 1e-4 * denom
        };

        // Parameters.
        let mut tensor_sizes = Vec::new();
        model.for_each_param(|v| tensor_sizes.push(v.len()));
        let mut grad_vals = Vec::new();
        grads.for_each_param(|v| grad_vals.push(v.clone()));
        for (ti, &len) in tensor_sizes.iter().enumerate() {
            for ei in 0..len {
                let perturb = |delta: f64, m: &mut GatModel| {
                    let mut idx = 0;
                    m.for_each_param_mut(|v| {
                        if idx == ti {
                            v[ei] += delta;
                        }
                        idx += 1;
                    });
                };
                let mut mp = model.clone();
                perturb(eps, &mut mp);
                let lp = eval_loss(&mp, &batch);
                let mut mm = model.clone();
                perturb(-eps, &mut mm);
                let lm = eval_loss(&mm, &batch);
                let fd = (lp - lm) / (2.0 * eps);
                assert!(
                    close(grad_vals[ti][ei], fd),
                    "seed {seed} param tensor {ti} elem {ei}: analytic {} vs fd {fd}",
                    grad_vals[ti][ei]
                );
            }
        }

        // Input features.
        for i in 0..batch.node_count() {
            for c in 0..3 {
                let mut bp = batch.clone();
                bp.features.set(i, c, bp.features.get(i, c) + eps);
                let lp = eval_loss(&model, &bp);
                let mut bm = batch.clone();
                bm.features.set(i, c, bm.features.get(i, c) - eps);
                let lm = eval_loss(&model, &bm);
                let fd = (lp - lm) / (2.0 * eps);
                assert!(
                    close(dinput.get(i, c), fd),
                    "seed {seed} input ({i},{c}): analytic {} vs fd {fd}",
                    dinput.get(i, c)
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in [0, 1, 2] {
            finite_difference_check(seed, 0.0);
        }
    }

    #[test]
    fn gradients_match_finite_differences_with_fixed_dropout_masks() {
        finite_difference_check(3, 0.25);
    }

    #[test]
    fn gradients_match_finite_differences_for_sum_and_max_readout() {
        // Max readout routes gradients to argmax nodes; verify both switches.
        for seed in [4u64, 5] {
            finite_difference_check_with(seed, 0.0, Readout::Sum);
            finite_difference_check_with(seed, 0.0, Readout::Max);
        }
    }

    #[test]
    fn zeroed_last_layer_bias_gradient_is_softmax_minus_onehot() {
        let mut model = tiny_model(8, 3, 2, 1, 1);
        model.mlp.w2 = Mat::zeros(2, CLASSES);
        model.mlp.b2 = vec![0.0; CLASSES];
        let g0 = GraphBatch::single(vec![vec![0.2, -0.1, 0.5]], &[]).unwrap();
        let g1 = GraphBatch::single(vec![vec![-0.4, 0.9, 0.3]], &[]).unwrap();
        let batch = GraphBatch::union(&[&g0, &g1]);
        let cache = gat_forward(&batch, &model, None).unwrap();
        let labels = [2u8, 0];
        let (_, dlogits) = train::loss(&cache.logits, &labels, &[1.0; CLASSES]).unwrap();
        let (grads, _) = backward(&batch, &model, &cache, &dlogits, None);
        // With zero logits the softmax is uniform.
        for c in 0..CLASSES {
            let mut expect = 0.0;
            for &y in &labels {
                expect += 0.25 - if c == y as usize { 1.0 } else { 0.0 };
            }
            expect /= labels.len() as f64;
            assert_relative_eq!(grads.mlp.b2[c], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn disconnected_node_gradient_is_local() {
        // Two graphs in one batch; gradient of graph 0's loss w.r.t. graph 1's
        // features must vanish.
        let model = tiny_model(7, 2, 3, 2, 1);
        let g0 = GraphBatch::single(vec![vec![0.4, -0.3], vec![0.1, 0.8]], &[(0, 1)]).unwrap();
        let g1 = GraphBatch::single(vec![vec![-0.5, 0.2]], &[]).unwrap();
        let batch = GraphBatch::union(&[&g0, &g1]);
        let cache = gat_forward(&batch, &model, None).unwrap();
        let mut dlogits = Mat::zeros(2, CLASSES);
        dlogits.set(0, 1, 1.0); // only graph 0 contributes
        let (_, dinput) = backward(&batch, &model, &cache, &dlogits, None);
        for c in 0..2 {
            assert_eq!(dinput.get(2, c), 0.0);
        }
    }
}
