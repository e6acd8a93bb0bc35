//! Integrated Gradients over node features with a zeroed-feature baseline,
//! region importance scores, named-feature explanations with training-set
//! context, and heat overlay rendering.
//!
//! Attribution targets the pre-softmax logit of the chosen class. The
//! baseline keeps the graph connectivity and zeroes every node feature; the
//! path integral is approximated by a left Riemann sum with interpolation
//! points k/m for k = 1..=m.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{backward, gat_forward, GatModel, GraphBatch, Mat, CLASSES};
use crate::raster::RgbImage;
use crate::superpixel::{LabelMap, BACKGROUND};

/// Per-node, per-feature Integrated Gradients scores for one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    /// N x F scores, rows aligned with the graph's nodes.
    pub scores: Vec<Vec<f64>>,
    /// L1 row sums of `scores`.
    pub node_importance: Vec<f64>,
    pub target_class: usize,
    pub steps: u32,
    /// |sum of scores - (F(x) - F(baseline))|; recorded, never hidden.
    pub completeness_gap: f64,
    /// F(x) - F(baseline), the quantity the scores should sum to.
    pub output_delta: f64,
}

/// The interpolated input at position t along the straight path from the
/// zero-feature baseline; connectivity is untouched.
pub(crate) fn interpolant(batch: &GraphBatch, t: f64) -> GraphBatch {
    let mut scaled = batch.clone();
    for v in scaled.features.data.iter_mut() {
        *v *= t;
    }
    scaled
}

/// Integrated Gradients of the target-class logit w.r.t. every node feature.
pub fn integrated_gradients(
    model: &GatModel,
    graph: &GraphBatch,
    target_class: usize,
    steps: u32,
) -> Result<AttributionReport> {
    if steps == 0 {
        return Err(Error::invalid("integrated gradients needs at least 1 step"));
    }
    if target_class >= CLASSES {
        return Err(Error::invalid(format!(
            "target class {target_class} outside 0..{CLASSES}"
        )));
    }
    let n = graph.node_count();
    let f = graph.features.cols;
    let mut grad_sum = Mat::zeros(n, f);
    for k in 1..=steps {
        let t = k as f64 / steps as f64;
        let point = interpolant(graph, t);
        let cache = gat_forward(&point, model, None)?;
        let mut dlogits = Mat::zeros(graph.num_graphs, CLASSES);
        for g in 0..graph.num_graphs {
            dlogits.set(g, target_class, 1.0);
        }
        let (_, dinput) = backward(&point, model, &cache, &dlogits, None);
        for (acc, &v) in grad_sum.data.iter_mut().zip(&dinput.data) {
            *acc += v;
        }
    }

    let mut scores = vec![vec![0.0f64; f]; n];
    for i in 0..n {
        for c in 0..f {
            scores[i][c] = graph.features.get(i, c) * grad_sum.get(i, c) / steps as f64;
        }
    }

    let logit_sum = |cache: &crate::gnn::ForwardCache| -> f64 {
        (0..graph.num_graphs)
            .map(|g| cache.logits.get(g, target_class))
            .sum()
    };
    let at_x = gat_forward(graph, model, None)?;
    let at_baseline = gat_forward(&interpolant(graph, 0.0), model, None)?;
    let output_delta = logit_sum(&at_x) - logit_sum(&at_baseline);
    let total: f64 = scores.iter().flatten().sum();
    let completeness_gap = (total - output_delta).abs();

    let node_importance = region_importance(&scores);
    Ok(AttributionReport {
        scores,
        node_importance,
        target_class,
        steps,
        completeness_gap,
        output_delta,
    })
}

/// Per-node importance: the L1 sum of that node's attribution row.
pub fn region_importance(scores: &[Vec<f64>]) -> Vec<f64> {
    scores
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum())
        .collect()
}

/// Training-split statistics giving context to attributed feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Per feature: the 1st..99th percentile of the training values.
    pub percentiles: Vec<Vec<f64>>,
}

impl DatasetStats {
    /// Fit over pooled training-split rows (nodes x features).
    pub fn fit(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("dataset statistics need at least one row"));
        }
        let width = names.len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("row width must match the name list"));
        }
        let n = rows.len() as f64;
        let mut means = Vec::with_capacity(width);
        let mut stds = Vec::with_capacity(width);
        let mut percentiles = Vec::with_capacity(width);
        for j in 0..width {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means.push(mean);
            stds.push(var.sqrt());
            percentiles.push(
                (1..=99)
                    .map(|p| crate::features::texture::percentile(&col, p as f64))
                    .collect(),
            );
        }
        Ok(Self {
            names,
            means,
            stds,
            percentiles,
        })
    }

    /// Percentile rank (0..=100 in integer steps) of `value` for a feature.
    pub fn percentile_of(&self, feature: usize, value: f64) -> f64 {
        let table = &self.percentiles[feature];
        let below = table.iter().filter(|&&t| t <= value).count();
        below as f64 + if below == table.len() { 1.0 } else { 0.0 }
    }

    /// Z-score a full row in place; constant features stay untouched.
    pub fn standardize(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            if self.stds[j] > 0.0 {
                *v = (*v - self.means[j]) / self.stds[j];
            } else {
                *v -= self.means[j];
            }
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        use std::io::Write;
        writeln!(w).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// One row of the named-feature explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExplanation {
    pub name: String,
    /// Signed IG total over all nodes.
    pub attribution: f64,
    /// The feature's value at the most-attributed node.
    pub region_value: f64,
    /// Percentile of that value among training-split nodes.
    pub training_percentile: f64,
}

/// Rank features by absolute total attribution and annotate each with the
/// driving region's value and its training percentile.
///
/// `feature_values` holds the raw (unstandardized) active-feature rows the
/// stats were fit on. Requests beyond the feature count are truncated.
pub fn explain_features(
    report: &AttributionReport,
    feature_values: &[Vec<f64>],
    stats: &DatasetStats,
    k: usize,
) -> Vec<FeatureExplanation> {
    let f = stats.names.len();
    let k = if k > f {
        log::warn!("requested top-{k} of only {f} features; truncating");
        f
    } else {
        k
    };
    let mut totals: Vec<(usize, f64)> = (0..f)
        .map(|j| (j, report.scores.iter().map(|row| row[j]).sum::<f64>()))
        .collect();
    totals.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap()
            .then(a.0.cmp(&b.0))
    });
    totals
        .into_iter()
        .take(k)
        .map(|(j, total)| {
            let driver = (0..report.scores.len())
                .max_by(|&a, &b| {
                    report.scores[a][j]
                        .abs()
                        .partial_cmp(&report.scores[b][j].abs())
                        .unwrap()
                })
                .unwrap_or(0);
            let value = feature_values[driver][j];
            FeatureExplanation {
                name: stats.names[j].clone(),
                attribution: total,
                region_value: value,
                training_percentile: stats.percentile_of(j, value),
            }
        })
        .collect()
}

/// 256-entry colormap from yellow (low) to red (high).
pub fn red_yellow_colormap() -> [[u8; 3]; 256] {
    let mut map = [[0u8; 3]; 256];
    for (i, entry) in map.iter_mut().enumerate() {
        *entry = [255, 255 - i as u8, 0];
    }
    map
}

const OVERLAY_ALPHA: f64 = 0.45;

/// Tint each region of the flattened label map by its min-max normalized
/// importance, alpha-blended over the base image; background is untouched.
pub fn render_overlay(
    labels: &LabelMap,
    importance: &BTreeMap<u32, f64>,
    base: &RgbImage,
) -> Result<RgbImage> {
    if labels.width != base.width() || labels.height != base.height() {
        return Err(Error::invalid("label map and image dimensions differ"));
    }
    let lo = importance.values().cloned().fold(f64::INFINITY, f64::min);
    let hi = importance.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let map = red_yellow_colormap();
    let mut out = base.clone();
    for y in 0..labels.height {
        for x in 0..labels.width {
            let l = labels.get(x, y);
            if l == BACKGROUND {
                continue;
            }
            let imp = importance.get(&l).copied().unwrap_or(lo);
            let norm = if span > 0.0 { (imp - lo) / span } else { 0.0 };
            let tint = map[(norm * 255.0).round().clamp(0.0, 255.0) as usize];
            let p = base.pixel(x, y);
            let mut blended = [0u8; 3];
            for c in 0..3 {
                blended[c] = ((1.0 - OVERLAY_ALPHA) * p[c] as f64
                    + OVERLAY_ALPHA * tint[c] as f64)
                    .round() as u8;
            }
            out.set_pixel(x, y, blended);
        }
    }
    Ok(out)
}
