//! Evaluation: macro one-vs-rest AUC, macro F1, balanced accuracy, the
//! concordance index, survival discretization into risk groups, the dataset
//! manifest with patient-level splits, the random-search protocol, and the
//! two-sample t-test.
//!
//! All metric functions return percentages in [0, 100].

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::gnn::{self, GatModel, GraphBatch, TrainConfig, TrainHistory, CLASSES};

/// Midrank-based one-vs-rest ROC AUC averaged over classes present in the
/// labels; classes lacking either positives or negatives are excluded with a
/// warning. Equivalent to pair counting with half credit for score ties.
pub fn auc_macro(probabilities: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
    let n = labels.len();
    if n < 2 || probabilities.len() != n {
        return Err(Error::invalid("need >= 2 samples with one row per label"));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for class in 0..CLASSES as u8 {
        let n_pos = labels.iter().filter(|&&l| l == class).count();
        if n_pos == 0 {
            continue;
        }
        let n_neg = n - n_pos;
        if n_neg == 0 {
            log::warn!("class {class} has no negatives; excluded from macro AUC");
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            probabilities[a][class as usize]
                .partial_cmp(&probabilities[b][class as usize])
                .unwrap()
        });
        // Midranks over tied scores.
        let mut ranks = vec![0.0f64; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n
                && probabilities[order[j + 1]][class as usize]
                    == probabilities[order[i]][class as usize]
            {
                j += 1;
            }
            let mid = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                ranks[order[k]] = mid;
            }
            i = j + 1;
        }
        let rank_sum: f64 = (0..n).filter(|&i| labels[i] == class).map(|i| ranks[i]).sum();
        let auc = (rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0)
            / (n_pos as f64 * n_neg as f64);
        sum += auc;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric(
            "no class has both positives and negatives".to_string(),
        ));
    }
    Ok(sum / used as f64 * 100.0)
}

/// Per-class F1 averaged over all four label classes; a class with zero
/// precision + recall contributes zero.
pub fn f1_macro(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    check_classes(predictions, labels)?;
    let mut sum = 0.0;
    for class in 0..CLASSES as u8 {
        let tp = count(predictions, labels, |p, l| p == class && l == class);
        let fp = count(predictions, labels, |p, l| p == class && l != class);
        let fal_n = count(predictions, labels, |p, l| p != class && l == class);
        let denom = 2 * tp + fp + fal_n;
        if denom > 0 {
            sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(sum / CLASSES as f64 * 100.0)
}

/// Mean per-class recall over the classes present in the labels.
pub fn balanced_accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    check_classes(predictions, labels)?;
    let mut sum = 0.0;
    let mut present = 0usize;
    for class in 0..CLASSES as u8 {
        let support = labels.iter().filter(|&&l| l == class).count();
        if support == 0 {
            continue;
        }
        let tp = count(predictions, labels, |p, l| p == class && l == class);
        sum += tp as f64 / support as f64;
        present += 1;
    }
    if present == 0 {
        return Err(Error::UndefinedMetric("labels are empty".to_string()));
    }
    Ok(sum / present as f64 * 100.0)
}

fn check_classes(predictions: &[u8], labels: &[u8]) -> Result<()> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::invalid("predictions and labels must align"));
    }
    if predictions.iter().chain(labels).any(|&v| v as usize >= CLASSES) {
        return Err(Error::invalid("class ids must lie in 0..4"));
    }
    Ok(())
}

fn count(predictions: &[u8], labels: &[u8], pred: impl Fn(u8, u8) -> bool) -> usize {
    predictions
        .iter()
        .zip(labels)
        .filter(|&(&p, &l)| pred(p, l))
        .count()
}

/// Harrell's concordance index as a percentage. Comparable pairs are those
/// where the earlier subject had an event; risk ties earn half credit.
pub fn c_index(risks: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    let n = risks.len();
    if n < 2 || times.len() != n || events.len() != n {
        return Err(Error::invalid("need >= 2 aligned samples"));
    }
    let mut credit = 0.0f64;
    let mut comparable = 0u64;
    for i in 0..n {
        if !events[i] {
            continue;
        }
        for j in 0..n {
            if times[i] < times[j] {
                comparable += 1;
                if risks[i] > risks[j] {
                    credit += 1.0;
                } else if risks[i] == risks[j] {
                    credit += 0.5;
                }
            }
        }
    }
    if comparable == 0 {
        return Err(Error::UndefinedMetric(
            "no comparable pairs for the concordance index".to_string(),
        ));
    }
    Ok(credit / comparable as f64 * 100.0)
}

/// Discretize survival into `bins` risk groups using the quantiles of the
/// uncensored event times as bin edges; every subject (censored or not) is
/// assigned by comparing its time against the edges.
pub fn discretize_survival(times: &[f64], events: &[bool], bins: usize) -> Result<Vec<u8>> {
    if bins < 2 || bins > CLASSES {
        return Err(Error::invalid("bins must lie in 2..=4"));
    }
    if times.len() != events.len() {
        return Err(Error::invalid("times and events must align"));
    }
    let mut uncensored: Vec<f64> = times
        .iter()
        .zip(events)
        .filter_map(|(&t, &e)| e.then_some(t))
        .collect();
    if uncensored.len() < bins {
        return Err(Error::invalid(format!(
            "need at least {bins} uncensored subjects, have {}",
            uncensored.len()
        )));
    }
    uncensored.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let edges: Vec<f64> = (1..bins)
        .map(|k| crate::features::texture::percentile(&uncensored, 100.0 * k as f64 / bins as f64))
        .collect();
    Ok(times
        .iter()
        .map(|&t| edges.iter().filter(|&&e| t > e).count() as u8)
        .collect())
}

/// Risk score from 4-class probabilities: the expected bin index.
pub fn expected_risk(probabilities: &[f64]) -> f64 {
    probabilities
        .iter()
        .enumerate()
        .map(|(c, &p)| c as f64 * p)
        .sum()
}

/// Two-sided equal-variance two-sample t-test; returns the p-value.
pub fn t_test(scores_a: &[f64], scores_b: &[f64]) -> Result<f64> {
    let (na, nb) = (scores_a.len(), scores_b.len());
    if na < 2 || nb < 2 {
        return Err(Error::invalid("each score set needs >= 2 values"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(scores_a), mean(scores_b));
    let ss = |v: &[f64], m: f64| v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>();
    let df = (na + nb - 2) as f64;
    let pooled = (ss(scores_a, ma) + ss(scores_b, mb)) / df;
    if pooled == 0.0 {
        return Err(Error::degenerate(
            "both score sets have zero variance".to_string(),
        ));
    }
    let t = (ma - mb) / (pooled * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Where a slide lives in the patient-level partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One manifest row. Paths are relative to the manifest's directory; the
/// nuclei type sidecar sits next to the instance PNG with a .csv extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub image: PathBuf,
    pub nuclei: Option<PathBuf>,
    pub embedding: Option<PathBuf>,
    /// Stage label I..IV encoded as 0..3.
    pub stage: Option<u8>,
    /// Survival time in days.
    pub time: Option<f64>,
    pub event: Option<bool>,
    pub split: Split,
}

/// The slide cohort: ids, paths, labels, and split tags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub slides: Vec<SlideRecord>,
}

fn parse_stage(s: &str) -> Result<Option<u8>> {
    Ok(match s.trim() {
        "" => None,
        "I" | "1" => Some(0),
        "II" | "2" => Some(1),
        "III" | "3" => Some(2),
        "IV" | "4" => Some(3),
        other => {
            return Err(Error::invalid(format!("unknown stage label {other:?}")));
        }
    })
}

fn stage_str(stage: Option<u8>) -> &'static str {
    match stage {
        Some(0) => "I",
        Some(1) => "II",
        Some(2) => "III",
        Some(3) => "IV",
        _ => "",
    }
}

impl DatasetManifest {
    /// Read the manifest CSV. Header:
    /// `slide_id,patient_id,image,nuclei,embedding,stage,time,event,split`.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut slides = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| Error::format(path, e.to_string()))?;
            let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
            let opt_path = |s: String| (!s.is_empty()).then(|| PathBuf::from(s));
            let split = match field(8).as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => {
                    return Err(Error::format(path, format!("unknown split {other:?}")));
                }
            };
            slides.push(SlideRecord {
                slide_id: field(0),
                patient_id: field(1),
                image: PathBuf::from(field(2)),
                nuclei: opt_path(field(3)),
                embedding: opt_path(field(4)),
                stage: parse_stage(&field(5))?,
                time: {
                    let t = field(6);
                    if t.is_empty() {
                        None
                    } else {
                        Some(t.parse().map_err(|_| Error::format(path, "bad time"))?)
                    }
                },
                event: match field(7).as_str() {
                    "" => None,
                    "0" => Some(false),
                    "1" => Some(true),
                    other => {
                        return Err(Error::format(path, format!("bad event flag {other:?}")));
                    }
                },
                split,
            });
        }
        let manifest = Self { slides };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_record([
            "slide_id",
            "patient_id",
            "image",
            "nuclei",
            "embedding",
            "stage",
            "time",
            "event",
            "split",
        ])
        .map_err(|e| Error::format(path, e.to_string()))?;
        for s in &self.slides {
            let path_str = |p: &Option<PathBuf>| {
                p.as_ref()
                    .map(|p| p.to_string_lossy().into_owned())
                    .unwrap_or_default()
            };
            w.write_record([
                s.slide_id.clone(),
                s.patient_id.clone(),
                s.image.to_string_lossy().into_owned(),
                path_str(&s.nuclei),
                path_str(&s.embedding),
                stage_str(s.stage).to_string(),
                s.time.map(|t| t.to_string()).unwrap_or_default(),
                s.event.map(|e| (e as u8).to_string()).unwrap_or_default(),
                s.split.to_string(),
            ])
            .map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// No patient id may appear in more than one split.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for s in &self.slides {
            match seen.get(s.patient_id.as_str()) {
                Some(&split) if split != s.split => {
                    return Err(Error::invalid(format!(
                        "patient {} appears in both {split} and {}",
                        s.patient_id, s.split
                    )));
                }
                _ => {
                    seen.insert(&s.patient_id, s.split);
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&SlideRecord> {
        self.slides.iter().filter(|s| s.split == split).collect()
    }
}

/// Random-search protocol: log-uniform ranges and the instance count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub trials: u32,
    pub instances: u32,
    pub lr_min: f64,
    pub lr_max: f64,
    pub wd_min: f64,
    pub wd_max: f64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            trials: 25,
            instances: 5,
            lr_min: 1e-5,
            lr_max: 1e-2,
            wd_min: 1e-6,
            wd_max: 1e-2,
        }
    }
}

/// One trial's sampled configuration and per-instance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u32,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub val_scores: Vec<f64>,
    /// Filled for the winning trial only.
    pub test_scores: Vec<f64>,
}

/// Random-search outcome: all trials, the winner, and its trained models.
#[derive(Debug)]
pub struct SearchOutcome {
    pub trials: Vec<TrialResult>,
    pub best_trial: u32,
    pub best_models: Vec<GatModel>,
    pub best_histories: Vec<TrainHistory>,
    pub test_mean: f64,
    pub test_std: f64,
}

/// Deterministic per-instance seed, independent of execution order.
pub fn instance_seed(base: u64, trial: u32, instance: u32) -> u64 {
    let mut h = (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^= (instance as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 31;
    base ^ h
}

fn sample_log_uniform(lo: f64, hi: f64, rng: &mut impl Rng) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

/// Log-uniform random search over learning rate and weight decay.
///
/// Per trial, `instances` models train with distinct derived seeds; the trial
/// with the best mean validation metric is re-evaluated on the test split.
/// `metric` maps a trained model and a labeled split to a score where larger
/// is better (macro AUC for staging, c-index for survival).
pub fn random_search<M>(
    train_set: &[(GraphBatch, u8)],
    val_set: &[(GraphBatch, u8)],
    test_set: &[(GraphBatch, u8)],
    base_cfg: &TrainConfig,
    space: &SearchSpace,
    seed: u64,
    metric: M,
) -> Result<SearchOutcome>
where
    M: Fn(&GatModel, &[(GraphBatch, u8)]) -> Result<f64>,
{
    if space.trials == 0 || space.instances == 0 {
        return Err(Error::invalid("trials and instances must be positive"));
    }
    if !(space.lr_min > 0.0 && space.lr_min <= space.lr_max)
        || !(space.wd_min > 0.0 && space.wd_min <= space.wd_max)
    {
        return Err(Error::invalid("search ranges must be positive and ordered"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let configs: Vec<(f64, f64)> = (0..space.trials)
        .map(|_| {
            (
                sample_log_uniform(space.lr_min, space.lr_max, &mut rng),
                sample_log_uniform(space.wd_min, space.wd_max, &mut rng),
            )
        })
        .collect();

    let mut trials = Vec::with_capacity(space.trials as usize);
    let mut all_models: Vec<Vec<GatModel>> = Vec::new();
    let mut all_histories: Vec<Vec<TrainHistory>> = Vec::new();
    for (trial, &(lr, wd)) in configs.iter().enumerate() {
        let mut val_scores = Vec::with_capacity(space.instances as usize);
        let mut models = Vec::new();
        let mut histories = Vec::new();
        for instance in 0..space.instances {
            let cfg = TrainConfig {
                learning_rate: lr,
                weight_decay: wd,
                seed: instance_seed(seed, trial as u32, instance),
                ..base_cfg.clone()
            };
            let (model, history) = gnn::train(train_set, Some(val_set), &cfg)?;
            val_scores.push(metric(&model, val_set)?);
            models.push(model);
            histories.push(history);
        }
        trials.push(TrialResult {
            trial: trial as u32,
            learning_rate: lr,
            weight_decay: wd,
            val_scores,
            test_scores: Vec::new(),
        });
        all_models.push(models);
        all_histories.push(histories);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let best_trial = (0..trials.len())
        .max_by(|&a, &b| {
            mean(&trials[a].val_scores)
                .partial_cmp(&mean(&trials[b].val_scores))
                .unwrap()
        })
        .expect("at least one trial");

    let best_models = all_models.swap_remove(best_trial);
    let best_histories = all_histories.swap_remove(best_trial);
    let test_scores: Vec<f64> = best_models
        .iter()
        .map(|m| metric(m, test_set))
        .collect::<Result<_>>()?;
    let m = mean(&test_scores);
    let var = test_scores.iter().map(|&s| (s - m) * (s - m)).sum::<f64>()
        / test_scores.len() as f64;
    trials[best_trial].test_scores = test_scores;
    Ok(SearchOutcome {
        best_trial: best_trial as u32,
        trials,
        best_models,
        best_histories,
        test_mean: m,
        test_std: var.sqrt(),
    })
}

/// Model evaluation over a labeled split, as (probabilities, predictions).
pub fn predict_split(
    model: &GatModel,
    data: &[(GraphBatch, u8)],
) -> Result<(Vec<Vec<f64>>, Vec<u8>, Vec<u8>)> {
    let mut probs = Vec::with_capacity(data.len());
    let mut preds = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for (graph, label) in data {
        let p = gnn::predict(model, graph)?;
        let pred = (0..CLASSES)
            .max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap())
            .unwrap() as u8;
        probs.push(p);
        preds.push(pred);
        labels.push(*label);
    }
    Ok((probs, preds, labels))
}

/// Patient ids present per split; used by hard validation tests.
pub fn patients_by_split(manifest: &DatasetManifest) -> BTreeMap<Split, BTreeSet<String>> {
    let mut map: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    for s in &manifest.slides {
        map.entry(s.split).or_default().insert(s.patient_id.clone());
    }
    map
}
