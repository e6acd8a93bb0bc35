//! Loss, optimizers, and the seeded training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{backward, gat_forward, DropoutPlan, GatModel, GraphBatch, Mat, Readout, CLASSES};
use crate::error::{Error, Result};

/// How per-class loss weights are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeightMode {
    None,
    /// Inverse class frequency over the training labels.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Adam with decoupled weight decay.
    AdamW,
    /// Plain gradient descent (tests and diagnostics).
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: u32,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub class_weights: ClassWeightMode,
    pub readout: Readout,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            epochs: 100,
            batch_size: 16,
            seed: 7,
            hidden_dim: 64,
            layers: 3,
            heads: 4,
            dropout: 0.2,
            class_weights: ClassWeightMode::None,
            readout: Readout::Mean,
            optimizer: OptimizerKind::AdamW,
        }
    }
}

/// Per-epoch losses and accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Weighted softmax cross-entropy, mean over the graphs in the batch.
///
/// Returns the scalar loss and its gradient at the logits.
pub fn loss(logits: &Mat, labels: &[u8], class_weights: &[f64; CLASSES]) -> Result<(f64, Mat)> {
    if logits.rows != labels.len() {
        return Err(Error::invalid("one label per graph required"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(Error::invalid(format!("label {bad} outside 0..4")));
    }
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    let mut dlogits = Mat::zeros(logits.rows, logits.cols);
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|&l| (l - mx).exp()).sum::<f64>().ln();
        let w = class_weights[label as usize];
        total += w * (lse - row[label as usize]);
        weight_sum += w;
        for c in 0..CLASSES {
            let p = (row[c] - lse).exp();
            let onehot = if c == label as usize { 1.0 } else { 0.0 };
            dlogits.set(r, c, w * (p - onehot));
        }
    }
    if weight_sum == 0.0 {
        return Err(Error::invalid("all class weights are zero for this batch"));
    }
    for v in dlogits.data.iter_mut() {
        *v /= weight_sum;
    }
    Ok((total / weight_sum, dlogits))
}

/// Inverse-frequency class weights; absent classes get weight 1.
pub fn class_weights(labels: &[u8], mode: ClassWeightMode) -> [f64; CLASSES] {
    match mode {
        ClassWeightMode::None => [1.0; CLASSES],
        ClassWeightMode::Balanced => {
            let mut counts = [0usize; CLASSES];
            for &l in labels {
                counts[l as usize] += 1;
            }
            let n = labels.len() as f64;
            let mut w = [1.0; CLASSES];
            for c in 0..CLASSES {
                if counts[c] > 0 {
                    w[c] = n / (CLASSES as f64 * counts[c] as f64);
                }
            }
            w
        }
    }
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(model: &mut GatModel, grads: &GatModel, cfg: &TrainConfig, adam: &mut AdamState) {
    let mut gvecs: Vec<Vec<f64>> = Vec::new();
    grads.for_each_param(|v| gvecs.push(v.clone()));
    match cfg.optimizer {
        OptimizerKind::AdamW => {
            adam.t += 1;
            let t = adam.t as f64;
            let bc1 = 1.0 - BETA1.powf(t);
            let bc2 = 1.0 - BETA2.powf(t);
            let mut idx = 0;
            model.for_each_param_mut(|param| {
                let g = &gvecs[idx];
                let m = &mut adam.m[idx];
                let v = &mut adam.v[idx];
                for i in 0..param.len() {
                    m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                    v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    param[i] -= cfg.learning_rate
                        * (mhat / (vhat.sqrt() + ADAM_EPS) + cfg.weight_decay * param[i]);
                }
                idx += 1;
            });
        }
        OptimizerKind::Sgd => {
            let mut idx = 0;
            model.for_each_param_mut(|param| {
                let g = &gvecs[idx];
                for i in 0..param.len() {
                    param[i] -= cfg.learning_rate * (g[i] + cfg.weight_decay * param[i]);
                }
                idx += 1;
            });
        }
    }
}

fn evaluate_split(
    model: &GatModel,
    data: &[(GraphBatch, u8)],
    weights: &[f64; CLASSES],
) -> Result<(f64, f64)> {
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for (graph, label) in data {
        let cache = gat_forward(graph, model, None)?;
        let (l, _) = loss(&cache.logits, &[*label], weights)?;
        total_loss += l;
        let row = cache.logits.row(0);
        let pred = (0..CLASSES)
            .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
            .unwrap();
        if pred == *label as usize {
            correct += 1;
        }
    }
    Ok((
        total_loss / data.len() as f64,
        correct as f64 / data.len() as f64,
    ))
}

/// Train a fresh model. Fully deterministic under a fixed seed: the
/// initialization, shuffle order, and dropout masks all come from one
/// seeded generator.
pub fn train(
    train_set: &[(GraphBatch, u8)],
    val_set: Option<&[(GraphBatch, u8)]>,
    cfg: &TrainConfig,
) -> Result<(GatModel, TrainHistory)> {
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if cfg.learning_rate < 0.0 || cfg.epochs < 1 {
        return Err(Error::invalid("learning rate must be >= 0 and epochs >= 1"));
    }
    let input_dim = train_set[0].0.features.cols;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut model = GatModel::new(
        input_dim,
        cfg.hidden_dim,
        cfg.layers,
        cfg.heads,
        cfg.dropout,
        cfg.readout,
        &mut rng,
    );
    let labels: Vec<u8> = train_set.iter().map(|(_, l)| *l).collect();
    let weights = class_weights(&labels, cfg.class_weights);

    let mut adam = AdamState {
        m: Vec::new(),
        v: Vec::new(),
        t: 0,
    };
    model.for_each_param(|v| {
        adam.m.push(vec![0.0; v.len()]);
        adam.v.push(vec![0.0; v.len()]);
    });

    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let graphs: Vec<&GraphBatch> = chunk.iter().map(|&i| &train_set[i].0).collect();
            let batch_labels: Vec<u8> = chunk.iter().map(|&i| train_set[i].1).collect();
            let batch = GraphBatch::union(&graphs);
            let plan = if cfg.dropout > 0.0 {
                Some(DropoutPlan::sample(&model, &batch, &mut rng))
            } else {
                None
            };
            let cache = gat_forward(&batch, &model, plan.as_ref())?;
            let (l, dlogits) = loss(&cache.logits, &batch_labels, &weights)?;
            if !l.is_finite() {
                return Err(Error::TrainDiverged(format!(
                    "non-finite loss {l} at epoch {epoch}"
                )));
            }
            for (r, &label) in batch_labels.iter().enumerate() {
                let row = cache.logits.row(r);
                let pred = (0..CLASSES)
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                    .unwrap();
                if pred == label as usize {
                    correct += 1;
                }
            }
            let (grads, _) = backward(&batch, &model, &cache, &dlogits, plan.as_ref());
            apply_update(&mut model, &grads, cfg, &mut adam);
            epoch_loss += l * chunk.len() as f64;
        }
        let (val_loss, val_accuracy) = match val_set {
            Some(v) => {
                let (l, a) = evaluate_split(&model, v, &weights)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        history.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss,
            val_accuracy,
        });
    }
    Ok((model, history))
}
