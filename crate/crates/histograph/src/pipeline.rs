//! Pipeline orchestration: staged per-slide processing with content-addressed
//! caching, feature pruning and training over the manifest splits, metric
//! reporting, the tau/xi sweep harness, and slide explanation.
//!
//! Every stage output lives in a directory named by a digest of the stage's
//! inputs and parameters, so a rerun with unchanged inputs is a cache hit and
//! a parameter sweep reuses all upstream artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{
    explain_features, integrated_gradients, render_overlay, DatasetStats, FeatureExplanation,
};
use crate::coarsen::{coarsen, flatten_labels, resolve_embeddings, EmbeddingSource};
use crate::config::{resolve, EmbeddingKind, RunConfig, Task};
use crate::error::{Error, Result};
use crate::eval::{
    self, auc_macro, balanced_accuracy, c_index, expected_risk, f1_macro, DatasetManifest,
    SlideRecord, Split,
};
use crate::features::{
    extract_node_features, prune_correlated, FeatureCatalog, NucleiMap,
};
use crate::gnn::{self, GatModel, GraphBatch};
use crate::raster::{downsample, RgbImage};
use crate::superpixel::{build_rag, slic, target_region_count, LabelMap, RegionGraph};
use crate::tissue::segment_tissue;

fn digest12(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(&hasher.finalize()[..6])
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex::encode(&hasher.finalize()[..6]))
}

fn json_write<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::format(path, e.to_string()))?;
    use std::io::Write;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn json_read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::format(path, e.to_string()))
}

/// One stage directory keyed by its input digest; `ok` marks completion.
fn stage_dir(slide_dir: &Path, stage: &str, digest: &str) -> PathBuf {
    slide_dir.join(format!("{stage}-{digest}"))
}

fn stage_ready(dir: &Path) -> bool {
    dir.join("ok").exists()
}

fn mark_ready(dir: &Path) -> Result<()> {
    std::fs::write(dir.join("ok"), b"ok\n").map_err(|e| Error::io(dir, e))
}

/// Per-slide feature matrix file: full catalog-order rows per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideFeatureFile {
    pub slide_id: String,
    pub feature_names: Vec<String>,
    pub node_ids: Vec<u32>,
    pub rows: Vec<Vec<f64>>,
}

/// Outcome of processing one slide through mask -> graph -> coarsen ->
/// features, with cache-hit bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideSummary {
    pub slide_id: String,
    pub initial_nodes: usize,
    pub coarse_nodes: usize,
    pub merges: usize,
    /// Invocation metadata: how many stages were cache hits this time.
    #[serde(skip)]
    pub cache_hits: usize,
    #[serde(skip)]
    pub stages: usize,
    /// Stage directories, relative to the slides root.
    pub mask_dir: PathBuf,
    pub graph_dir: PathBuf,
    pub coarsen_dir: PathBuf,
    pub features_dir: PathBuf,
}

/// Load the working image: decoded and optionally downsampled.
fn working_image(record: &SlideRecord, manifest_dir: &Path, cfg: &RunConfig) -> Result<RgbImage> {
    let img = RgbImage::load(&resolve(manifest_dir, &record.image))?;
    if cfg.superpixel.downsample_factor > 1 {
        downsample(&img, cfg.superpixel.downsample_factor)
    } else {
        Ok(img)
    }
}

fn nuclei_sidecar(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

/// Run the per-slide stages, reusing cached outputs when digests match.
pub fn process_slide(
    record: &SlideRecord,
    manifest_dir: &Path,
    slides_root: &Path,
    cfg: &RunConfig,
) -> Result<SlideSummary> {
    let slide_dir = slides_root.join(&record.slide_id);
    std::fs::create_dir_all(&slide_dir).map_err(|e| Error::io(&slide_dir, e))?;
    let image_path = resolve(manifest_dir, &record.image);
    let image_digest = file_digest(&image_path)?;
    let mut cache_hits = 0usize;

    // Stage: mask.
    let mask_params = serde_json::to_string(&(
        &cfg.mask.close_radius,
        &cfg.mask.open_radius,
        &cfg.mask.min_component_area,
        &cfg.superpixel.downsample_factor,
    ))
    .expect("params serialize");
    let mask_digest = digest12(&["mask:v1", &image_digest, &mask_params]);
    let mask_dir = stage_dir(&slide_dir, "mask", &mask_digest);
    if stage_ready(&mask_dir) {
        cache_hits += 1;
    } else {
        std::fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
        let img = working_image(record, manifest_dir, cfg)?;
        let mask = segment_tissue(&img, &cfg.mask.params())?;
        mask.save_png(&mask_dir.join("mask.png"))?;
        mark_ready(&mask_dir)?;
    }

    // Stage: graph (SLIC + adjacency + embeddings).
    let emb_digest = match cfg.coarsen.embeddings {
        EmbeddingKind::Builtin => "builtin".to_string(),
        EmbeddingKind::File => {
            let p = record.embedding.as_ref().ok_or_else(|| {
                Error::invalid(format!(
                    "slide {} has no embedding path but embeddings = file",
                    record.slide_id
                ))
            })?;
            file_digest(&resolve(manifest_dir, p))?
        }
    };
    let graph_params = serde_json::to_string(&(
        &cfg.superpixel.target_side,
        &cfg.superpixel.seg_mag,
        &cfg.superpixel.ref_mag,
        &cfg.superpixel.compactness,
        &cfg.superpixel.iterations,
        &emb_digest,
    ))
    .expect("params serialize");
    let graph_digest = digest12(&["graph:v1", &mask_digest, &graph_params]);
    let graph_dir = stage_dir(&slide_dir, "graph", &graph_digest);
    if stage_ready(&graph_dir) {
        cache_hits += 1;
    } else {
        std::fs::create_dir_all(&graph_dir).map_err(|e| Error::io(&graph_dir, e))?;
        let img = working_image(record, manifest_dir, cfg)?;
        let mask = crate::tissue::TissueMask::load(&mask_dir.join("mask.png"))?;
        let k = target_region_count(
            mask.area(),
            cfg.superpixel.seg_mag,
            cfg.superpixel.ref_mag,
            cfg.superpixel.target_side,
        )?;
        let k = (k as u64).min(mask.area()) as u32;
        let labels = slic(&img, &mask, k, &cfg.superpixel.slic_params())?;
        let mut graph = build_rag(&labels);
        let source = match cfg.coarsen.embeddings {
            EmbeddingKind::Builtin => EmbeddingSource::Builtin,
            EmbeddingKind::File => EmbeddingSource::File(resolve(
                manifest_dir,
                record.embedding.as_ref().expect("checked above"),
            )),
        };
        graph.embeddings = Some(resolve_embeddings(&source, &img, &labels, &graph)?);
        labels.save_png16(&graph_dir.join("labels.png"))?;
        graph.save_json(&graph_dir.join("graph.json"))?;
        mark_ready(&graph_dir)?;
    }

    // Stage: coarsen.
    let coarsen_digest = digest12(&[
        "coarsen:v1",
        &graph_digest,
        &format!("{:.17}", cfg.coarsen.tau),
    ]);
    let coarsen_dir = stage_dir(&slide_dir, "coarsen", &coarsen_digest);
    if stage_ready(&coarsen_dir) {
        cache_hits += 1;
    } else {
        std::fs::create_dir_all(&coarsen_dir).map_err(|e| Error::io(&coarsen_dir, e))?;
        let graph = RegionGraph::load_json(&graph_dir.join("graph.json"))?;
        let labels = LabelMap::load_png16(&graph_dir.join("labels.png"))?;
        let embeddings = graph
            .embeddings
            .clone()
            .ok_or_else(|| Error::invalid("graph file lacks embeddings"))?;
        let (coarse, trace) = coarsen(&graph, &embeddings, cfg.coarsen.tau)?;
        let flat = flatten_labels(&labels, &trace)?;
        coarse.save_json(&coarsen_dir.join("coarse_graph.json"))?;
        trace.save_json(&coarsen_dir.join("trace.json"))?;
        flat.save_png16(&coarsen_dir.join("coarse_labels.png"))?;
        mark_ready(&coarsen_dir)?;
    }

    // Stage: features.
    let nuclei_digest = match &record.nuclei {
        Some(p) => {
            let png = resolve(manifest_dir, p);
            format!(
                "{}:{}",
                file_digest(&png)?,
                file_digest(&nuclei_sidecar(&png))?
            )
        }
        None => "none".to_string(),
    };
    let feature_params = serde_json::to_string(&cfg.features).expect("params serialize");
    let features_digest = digest12(&[
        "features:v1",
        &coarsen_digest,
        &feature_params,
        &nuclei_digest,
    ]);
    let features_dir = stage_dir(&slide_dir, "features", &features_digest);
    if stage_ready(&features_dir) {
        cache_hits += 1;
    } else {
        std::fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;
        let img = working_image(record, manifest_dir, cfg)?;
        let coarse = RegionGraph::load_json(&coarsen_dir.join("coarse_graph.json"))?;
        let flat = LabelMap::load_png16(&coarsen_dir.join("coarse_labels.png"))?;
        let nuclei = match &record.nuclei {
            Some(p) => {
                let png = resolve(manifest_dir, p);
                let full = NucleiMap::load(&png, &nuclei_sidecar(&png))?;
                scale_nuclei(&full, cfg.superpixel.downsample_factor, flat.width, flat.height)
            }
            None => NucleiMap::empty(flat.width, flat.height),
        };
        let catalog = FeatureCatalog::new(cfg.features.catalog_params());
        let mut rows = Vec::with_capacity(coarse.nodes.len());
        for node in &coarse.nodes {
            rows.push(extract_node_features(&img, &flat, node, &nuclei, &catalog)?);
        }
        json_write(
            &features_dir.join("features.json"),
            &SlideFeatureFile {
                slide_id: record.slide_id.clone(),
                feature_names: catalog.names(),
                node_ids: coarse.nodes.iter().map(|n| n.id).collect(),
                rows,
            },
        )?;
        mark_ready(&features_dir)?;
    }

    let graph = RegionGraph::load_json(&graph_dir.join("graph.json"))?;
    let coarse = RegionGraph::load_json(&coarsen_dir.join("coarse_graph.json"))?;
    let rel = |d: &Path| d.strip_prefix(slides_root).unwrap_or(d).to_path_buf();
    Ok(SlideSummary {
        slide_id: record.slide_id.clone(),
        initial_nodes: graph.nodes.len(),
        coarse_nodes: coarse.nodes.len(),
        merges: graph.nodes.len() - coarse.nodes.len(),
        cache_hits,
        stages: 4,
        mask_dir: rel(&mask_dir),
        graph_dir: rel(&graph_dir),
        coarsen_dir: rel(&coarsen_dir),
        features_dir: rel(&features_dir),
    })
}

/// Map nuclei pixel coordinates onto the downsampled working resolution.
fn scale_nuclei(full: &NucleiMap, factor: u32, width: u32, height: u32) -> NucleiMap {
    if factor <= 1 {
        return full.clone();
    }
    let mut out = NucleiMap::empty(width, height);
    for inst in &full.instances {
        let mut pixels: Vec<(u32, u32)> = inst
            .pixels
            .iter()
            .map(|&(x, y)| ((x / factor).min(width - 1), (y / factor).min(height - 1)))
            .collect();
        pixels.sort_unstable();
        pixels.dedup();
        out.instances.push(crate::features::NucleusRecord {
            instance_id: inst.instance_id,
            type_code: inst.type_code,
            area: pixels.len() as u64,
            pixels,
        });
    }
    out
}

/// Final metric block over the test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub n_test: usize,
    pub auc: f64,
    pub f1_macro: f64,
    pub balanced_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_std: Option<f64>,
}

/// Machine-readable record of one pipeline invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub slides: Vec<SlideSummary>,
    pub failures: Vec<(String, String)>,
    /// Invocation metadata, not part of the run's deterministic products.
    #[serde(skip)]
    pub cache_hits: usize,
    #[serde(skip)]
    pub stages_run: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

/// How much of the run to execute after per-slide processing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Stages only; no model.
    Skip,
    /// Train one model from the config and evaluate it.
    Single,
    /// Random search over learning rate and weight decay.
    Search,
}

struct MlDataset {
    per_split: BTreeMap<Split, Vec<(GraphBatch, u8)>>,
    survival: BTreeMap<Split, (Vec<f64>, Vec<bool>)>,
    catalog: FeatureCatalog,
    stats: DatasetStats,
}

/// Pool training rows, prune, fit statistics, and assemble graph batches.
fn assemble_dataset(
    manifest: &DatasetManifest,
    summaries: &[SlideSummary],
    slides_root: &Path,
    cfg: &RunConfig,
) -> Result<MlDataset> {
    let by_id: BTreeMap<&str, &SlideSummary> = summaries
        .iter()
        .map(|s| (s.slide_id.as_str(), s))
        .collect();

    // Survival labels need the whole cohort's uncensored quantiles.
    let survival_labels: BTreeMap<String, u8> = if cfg.eval.task == Task::Survival {
        let with_time: Vec<&SlideRecord> = manifest
            .slides
            .iter()
            .filter(|s| s.time.is_some() && s.event.is_some())
            .collect();
        let times: Vec<f64> = with_time.iter().map(|s| s.time.unwrap()).collect();
        let events: Vec<bool> = with_time.iter().map(|s| s.event.unwrap()).collect();
        let bins = eval::discretize_survival(&times, &events, 4)?;
        with_time
            .iter()
            .zip(bins)
            .map(|(s, b)| (s.slide_id.clone(), b))
            .collect()
    } else {
        BTreeMap::new()
    };

    let label_of = |record: &SlideRecord| -> Option<u8> {
        match cfg.eval.task {
            Task::Staging => record.stage,
            Task::Survival => survival_labels.get(&record.slide_id).copied(),
        }
    };

    // Prune on pooled training rows.
    let mut train_rows = Vec::new();
    for record in manifest.split(Split::Train) {
        let Some(summary) = by_id.get(record.slide_id.as_str()) else {
            continue;
        };
        if label_of(record).is_none() {
            continue;
        }
        let file: SlideFeatureFile =
            json_read(&slides_root.join(&summary.features_dir).join("features.json"))?;
        train_rows.extend(file.rows);
    }
    let mut catalog = FeatureCatalog::new(cfg.features.catalog_params());
    catalog.active = prune_correlated(&train_rows, cfg.features.xi)?;
    let active_train: Vec<Vec<f64>> = train_rows
        .iter()
        .map(|r| catalog.select_active(r))
        .collect();
    let stats = DatasetStats::fit(catalog.active_names(), &active_train)?;

    let mut per_split: BTreeMap<Split, Vec<(GraphBatch, u8)>> = BTreeMap::new();
    let mut survival: BTreeMap<Split, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for record in &manifest.slides {
        let Some(summary) = by_id.get(record.slide_id.as_str()) else {
            continue;
        };
        let Some(label) = label_of(record) else {
            continue;
        };
        let batch = build_graph_batch(summary, slides_root, &catalog, &stats, cfg)?;
        per_split.entry(record.split).or_default().push((batch, label));
        if let (Some(t), Some(e)) = (record.time, record.event) {
            let entry = survival.entry(record.split).or_default();
            entry.0.push(t);
            entry.1.push(e);
        }
    }
    Ok(MlDataset {
        per_split,
        survival,
        catalog,
        stats,
    })
}

/// Graph batch for one slide: active (optionally standardized) features and
/// the coarsened adjacency.
fn build_graph_batch(
    summary: &SlideSummary,
    slides_root: &Path,
    catalog: &FeatureCatalog,
    stats: &DatasetStats,
    cfg: &RunConfig,
) -> Result<GraphBatch> {
    let file: SlideFeatureFile =
        json_read(&slides_root.join(&summary.features_dir).join("features.json"))?;
    let coarse = RegionGraph::load_json(
        &slides_root
            .join(&summary.coarsen_dir)
            .join("coarse_graph.json"),
    )?;
    let index_of: BTreeMap<u32, u32> = file
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i as u32))
        .collect();
    let mut feats = Vec::with_capacity(file.rows.len());
    for row in &file.rows {
        let mut active = catalog.select_active(row);
        if cfg.eval.standardize {
            stats.standardize(&mut active);
        }
        feats.push(active);
    }
    let edges: Vec<(u32, u32)> = coarse
        .edges
        .iter()
        .map(|&(a, b)| (index_of[&a], index_of[&b]))
        .collect();
    GraphBatch::single(feats, &edges)
}

fn metric_for_task(task: Task) -> impl Fn(&GatModel, &[(GraphBatch, u8)]) -> Result<f64> + Copy {
    move |model, data| {
        let (probs, preds, labels) = eval::predict_split(model, data)?;
        match task {
            Task::Staging => auc_macro(&probs, &labels),
            Task::Survival => {
                // Validation proxy when survival fields are elsewhere: AUC on
                // the discretized groups still orders models sensibly.
                let _ = preds;
                auc_macro(&probs, &labels)
            }
        }
    }
}

fn evaluate_model(
    model: &GatModel,
    test: &[(GraphBatch, u8)],
    survival: Option<&(Vec<f64>, Vec<bool>)>,
    task: Task,
) -> Result<MetricsReport> {
    let (probs, preds, labels) = eval::predict_split(model, test)?;
    let auc = auc_macro(&probs, &labels)?;
    let f1 = f1_macro(&preds, &labels)?;
    let ba = balanced_accuracy(&preds, &labels)?;
    let cidx = match (task, survival) {
        (Task::Survival, Some((times, events))) if times.len() == test.len() => {
            // Bins order by survival time (bin 3 = longest), so risk runs
            // opposite to the expected bin index.
            let risks: Vec<f64> = probs.iter().map(|p| -expected_risk(p)).collect();
            Some(c_index(&risks, times, events)?)
        }
        _ => None,
    };
    Ok(MetricsReport {
        task,
        n_test: test.len(),
        auc,
        f1_macro: f1,
        balanced_accuracy: ba,
        c_index: cidx,
        test_mean: None,
        test_std: None,
    })
}

/// Execute the pipeline: per-slide stages (optionally in parallel), then
/// pruning, training, and test evaluation according to `mode`.
///
/// `slides_root` overrides where per-slide stage caches live; by default they
/// sit inside the run directory.
pub fn run_pipeline(
    manifest_path: &Path,
    cfg: &RunConfig,
    out_dir: &Path,
    slides_root: Option<&Path>,
    mode: TrainMode,
) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    cfg.save_toml(&out_dir.join("config.toml"))?;
    let manifest = DatasetManifest::load_csv(manifest_path)?;
    let manifest_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let slides_root = slides_root
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("slides"));
    std::fs::create_dir_all(&slides_root).map_err(|e| Error::io(&slides_root, e))?;

    let process = |record: &SlideRecord| -> (String, Result<SlideSummary>) {
        (
            record.slide_id.clone(),
            process_slide(record, &manifest_dir, &slides_root, cfg),
        )
    };
    let outcomes: Vec<(String, Result<SlideSummary>)> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| manifest.slides.par_iter().map(process).collect())
    } else {
        manifest.slides.iter().map(process).collect()
    };

    let mut slides = Vec::new();
    let mut failures = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(s) => slides.push(s),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    let cache_hits = slides.iter().map(|s| s.cache_hits).sum();
    let stages_run = slides.iter().map(|s| s.stages).sum();

    let metrics = if mode != TrainMode::Skip && !slides.is_empty() {
        let data = assemble_dataset(&manifest, &slides, &slides_root, cfg)?;
        data.catalog.save_json(&out_dir.join("catalog.json"))?;
        data.stats.save_json(&out_dir.join("stats.json"))?;
        let train = data.per_split.get(&Split::Train).cloned().unwrap_or_default();
        let val = data.per_split.get(&Split::Val).cloned().unwrap_or_default();
        let test = data.per_split.get(&Split::Test).cloned().unwrap_or_default();
        if train.is_empty() || test.is_empty() {
            return Err(Error::invalid("training and test splits must be nonempty"));
        }
        let survival_test = data.survival.get(&Split::Test);
        let report = match mode {
            TrainMode::Single => {
                let val_opt = if val.is_empty() { None } else { Some(&val[..]) };
                let (model, history) = gnn::train(&train, val_opt, &cfg.train)?;
                model.save(&out_dir.join("model.ckpt"))?;
                json_write(&out_dir.join("history.json"), &history)?;
                evaluate_model(&model, &test, survival_test, cfg.eval.task)?
            }
            TrainMode::Search => {
                let metric = metric_for_task(cfg.eval.task);
                let outcome = eval::random_search(
                    &train,
                    &val,
                    &test,
                    &cfg.train,
                    &cfg.search,
                    cfg.seed,
                    metric,
                )?;
                // One JSON line per trial instance, plus an aligned summary.
                let mut jsonl = String::new();
                let mut table = format!(
                    "{:>5} {:>12} {:>12} {:>12} {:>10}\n",
                    "trial", "lr", "wd", "mean val", "best"
                );
                for t in &outcome.trials {
                    for (instance, &val_score) in t.val_scores.iter().enumerate() {
                        let record = serde_json::json!({
                            "trial": t.trial,
                            "instance": instance,
                            "learning_rate": t.learning_rate,
                            "weight_decay": t.weight_decay,
                            "val_score": val_score,
                            "test_score": t.test_scores.get(instance),
                        });
                        jsonl.push_str(&record.to_string());
                        jsonl.push('\n');
                    }
                    let mean = t.val_scores.iter().sum::<f64>() / t.val_scores.len() as f64;
                    let _ = writeln!(
                        table,
                        "{:>5} {:>12.4e} {:>12.4e} {:>12.2} {:>10}",
                        t.trial,
                        t.learning_rate,
                        t.weight_decay,
                        mean,
                        if t.trial == outcome.best_trial { "*" } else { "" }
                    );
                }
                std::fs::write(out_dir.join("trials.jsonl"), jsonl)
                    .map_err(|e| Error::io(out_dir, e))?;
                std::fs::write(out_dir.join("trials.txt"), &table)
                    .map_err(|e| Error::io(out_dir, e))?;
                print!("{table}");
                // Keep the winner's best-validation instance as the model.
                let best = &outcome.trials[outcome.best_trial as usize];
                let best_instance = (0..best.val_scores.len())
                    .max_by(|&a, &b| best.val_scores[a].partial_cmp(&best.val_scores[b]).unwrap())
                    .unwrap_or(0);
                for (i, m) in outcome.best_models.iter().enumerate() {
                    m.save(&out_dir.join(format!("model-{i}.ckpt")))?;
                }
                outcome.best_models[best_instance].save(&out_dir.join("model.ckpt"))?;
                let mut report = evaluate_model(
                    &outcome.best_models[best_instance],
                    &test,
                    survival_test,
                    cfg.eval.task,
                )?;
                report.test_mean = Some(outcome.test_mean);
                report.test_std = Some(outcome.test_std);
                report
            }
            TrainMode::Skip => unreachable!(),
        };
        json_write(&out_dir.join("metrics.json"), &report)?;
        Some(report)
    } else {
        None
    };

    let summary = RunSummary {
        slides,
        failures,
        cache_hits,
        stages_run,
        metrics,
    };
    json_write(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Which hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Tau,
    Xi,
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepParam::Tau => write!(f, "tau"),
            SweepParam::Xi => write!(f, "xi"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub auc: f64,
    pub f1_macro: f64,
    pub balanced_accuracy: f64,
    pub mean_nodes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Aligned text table, one row per swept value.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>8}  {:>7}  {:>7}  {:>9}  {:>10}",
            self.param.to_string(),
            "AUC",
            "F1_m",
            "Bal. Acc",
            "mean nodes"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>8.3}  {:>7.1}  {:>7.1}  {:>9.1}  {:>10.1}",
                r.value, r.auc, r.f1_macro, r.balanced_accuracy, r.mean_nodes
            );
        }
        s
    }
}

/// Run the downstream pipeline once per parameter value, reusing every cached
/// upstream stage that is legal for that parameter.
pub fn sweep(
    manifest_path: &Path,
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
    out_dir: &Path,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    for &v in values {
        match param {
            SweepParam::Tau => {
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!("tau value {v} outside [-1, 1]")));
                }
            }
            SweepParam::Xi => {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::invalid(format!("xi value {v} outside (0, 1]")));
                }
            }
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let slides_root = out_dir.join("slides");
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut run_cfg = cfg.clone();
        match param {
            SweepParam::Tau => run_cfg.coarsen.tau = v,
            SweepParam::Xi => run_cfg.features.xi = v,
        }
        let run_dir = out_dir.join(format!("{param}-{v}"));
        let summary = run_pipeline(
            manifest_path,
            &run_cfg,
            &run_dir,
            Some(&slides_root),
            TrainMode::Single,
        )?;
        let metrics = summary
            .metrics
            .as_ref()
            .ok_or_else(|| Error::invalid("sweep run produced no metrics"))?;
        let mean_nodes = summary
            .slides
            .iter()
            .map(|s| s.coarse_nodes as f64)
            .sum::<f64>()
            / summary.slides.len().max(1) as f64;
        rows.push(SweepRow {
            value: v,
            auc: metrics.auc,
            f1_macro: metrics.f1_macro,
            balanced_accuracy: metrics.balanced_accuracy,
            mean_nodes,
        });
    }
    let table = SweepTable { param, rows };
    json_write(&out_dir.join("sweep.json"), &table)?;
    std::fs::write(out_dir.join("sweep.txt"), table.render())
        .map_err(|e| Error::io(out_dir, e))?;
    Ok(table)
}

/// Explanation artifacts for one slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub slide_id: String,
    pub target_class: usize,
    pub steps: u32,
    pub predicted_probabilities: Vec<f64>,
    pub completeness_gap: f64,
    pub output_delta: f64,
    pub node_importance: Vec<(u32, f64)>,
    pub top_features: Vec<FeatureExplanation>,
}

/// Attribute one slide's prediction and render the region overlay.
///
/// Needs a completed run directory (model, catalog, stats) and the slide's
/// cached stage outputs; stages are recomputed transparently on cache miss.
pub fn explain_slide(
    run_dir: &Path,
    manifest_path: &Path,
    slide_id: &str,
    target_class: Option<usize>,
    steps: u32,
    top_k: usize,
) -> Result<ExplainReport> {
    let cfg = RunConfig::load_toml(&run_dir.join("config.toml"))?;
    let manifest = DatasetManifest::load_csv(manifest_path)?;
    let manifest_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let record = manifest
        .slides
        .iter()
        .find(|s| s.slide_id == slide_id)
        .ok_or_else(|| Error::invalid(format!("slide {slide_id} not in manifest")))?;
    let slides_root = run_dir.join("slides");
    let summary = process_slide(record, &manifest_dir, &slides_root, &cfg)?;

    let model = GatModel::load(&run_dir.join("model.ckpt"))?;
    let catalog = FeatureCatalog::load_json(&run_dir.join("catalog.json"))?;
    let stats = DatasetStats::load_json(&run_dir.join("stats.json"))?;
    let batch = build_graph_batch(&summary, &slides_root, &catalog, &stats, &cfg)?;
    let probs = gnn::predict(&model, &batch)?;
    let target = target_class.unwrap_or_else(|| {
        (0..probs.len())
            .max_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap())
            .unwrap()
    });
    let report = integrated_gradients(&model, &batch, target, steps)?;

    // Raw active rows for value/percentile context.
    let file: SlideFeatureFile = json_read(
        &slides_root
            .join(&summary.features_dir)
            .join("features.json"),
    )?;
    let raw_rows: Vec<Vec<f64>> = file.rows.iter().map(|r| catalog.select_active(r)).collect();
    let top = explain_features(&report, &raw_rows, &stats, top_k);

    // Overlay over the working image.
    let img = working_image(record, &manifest_dir, &cfg)?;
    let flat = LabelMap::load_png16(
        &slides_root
            .join(&summary.coarsen_dir)
            .join("coarse_labels.png"),
    )?;
    let importance: BTreeMap<u32, f64> = file
        .node_ids
        .iter()
        .zip(&report.node_importance)
        .map(|(&id, &imp)| (id, imp))
        .collect();
    let overlay = render_overlay(&flat, &importance, &img)?;
    let explain_dir = run_dir.join("explain").join(slide_id);
    std::fs::create_dir_all(&explain_dir).map_err(|e| Error::io(&explain_dir, e))?;
    overlay.save_png(&explain_dir.join("overlay.png"))?;

    let out = ExplainReport {
        slide_id: slide_id.to_string(),
        target_class: target,
        steps,
        predicted_probabilities: probs,
        completeness_gap: report.completeness_gap,
        output_delta: report.output_delta,
        node_importance: file
            .node_ids
            .iter()
            .zip(&report.node_importance)
            .map(|(&id, &imp)| (id, imp))
            .collect(),
        top_features: top,
    };
    json_write(&explain_dir.join("report.json"), &out)?;
    Ok(out)
}

/// Predict class probabilities for one slide using a completed run.
pub fn predict_slide(run_dir: &Path, manifest_path: &Path, slide_id: &str) -> Result<Vec<f64>> {
    let cfg = RunConfig::load_toml(&run_dir.join("config.toml"))?;
    let manifest = DatasetManifest::load_csv(manifest_path)?;
    let manifest_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let record = manifest
        .slides
        .iter()
        .find(|s| s.slide_id == slide_id)
        .ok_or_else(|| Error::invalid(format!("slide {slide_id} not in manifest")))?;
    let slides_root = run_dir.join("slides");
    let summary = process_slide(record, &manifest_dir, &slides_root, &cfg)?;
    let model = GatModel::load(&run_dir.join("model.ckpt"))?;
    let catalog = FeatureCatalog::load_json(&run_dir.join("catalog.json"))?;
    let stats = DatasetStats::load_json(&run_dir.join("stats.json"))?;
    let batch = build_graph_batch(&summary, &slides_root, &catalog, &stats, &cfg)?;
    gnn::predict(&model, &batch)
}

/// Evaluate a completed run's model over one manifest split.
pub fn evaluate_run(run_dir: &Path, manifest_path: &Path, split: Split) -> Result<MetricsReport> {
    let cfg = RunConfig::load_toml(&run_dir.join("config.toml"))?;
    let manifest = DatasetManifest::load_csv(manifest_path)?;
    let manifest_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let slides_root = run_dir.join("slides");
    let mut summaries = Vec::new();
    for record in &manifest.slides {
        summaries.push(process_slide(record, &manifest_dir, &slides_root, &cfg)?);
    }
    let data = assemble_dataset(&manifest, &summaries, &slides_root, &cfg)?;
    let model = GatModel::load(&run_dir.join("model.ckpt"))?;
    let set = data.per_split.get(&split).cloned().unwrap_or_default();
    if set.is_empty() {
        return Err(Error::invalid(format!("split {split} is empty")));
    }
    evaluate_model(&model, &set, data.survival.get(&split), cfg.eval.task)
}

impl MetricsReport {
    /// Aligned metric line for terminal output.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>10} {:>8} {:>8} {:>9} {:>8}",
            "task", "AUC", "F1_m", "Bal. Acc", "C-Index"
        );
        let task = match self.task {
            Task::Staging => "staging",
            Task::Survival => "survival",
        };
        let c = self
            .c_index
            .map(|v| format!("{v:>8.1}"))
            .unwrap_or_else(|| format!("{:>8}", "-"));
        let _ = writeln!(
            s,
            "{:>10} {:>8.1} {:>8.1} {:>9.1} {c}",
            task, self.auc, self.f1_macro, self.balanced_accuracy
        );
        s
    }
}
