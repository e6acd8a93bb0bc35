//! The resolved run configuration: every tunable of the pipeline in one
//! TOML-serializable structure. Unknown keys are rejected and values
//! round-trip losslessly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::SearchSpace;
use crate::features::CatalogParams;
use crate::gnn::TrainConfig;
use crate::superpixel::SlicParams;
use crate::tissue::MaskParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub close_radius: u32,
    pub open_radius: u32,
    pub min_component_area: u64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        let p = MaskParams::default();
        Self {
            close_radius: p.close_radius,
            open_radius: p.open_radius,
            min_component_area: p.min_component_area,
        }
    }
}

impl MaskConfig {
    pub fn params(&self) -> MaskParams {
        MaskParams {
            close_radius: self.close_radius,
            open_radius: self.open_radius,
            min_component_area: self.min_component_area,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuperpixelConfig {
    /// Optional block-mean downsampling applied to the input image first.
    pub downsample_factor: u32,
    /// Target region side length in pixels at the reference magnification.
    pub target_side: u32,
    /// Magnification of the segmentation-scale image.
    pub seg_mag: f64,
    /// Reference magnification the target side is stated at.
    pub ref_mag: f64,
    pub compactness: f64,
    pub iterations: u32,
}

impl Default for SuperpixelConfig {
    fn default() -> Self {
        Self {
            downsample_factor: 1,
            target_side: 300,
            seg_mag: 0.625,
            ref_mag: 32.0,
            compactness: 10.0,
            iterations: 10,
        }
    }
}

impl SuperpixelConfig {
    pub fn slic_params(&self) -> SlicParams {
        SlicParams {
            compactness: self.compactness,
            iterations: self.iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Handcrafted histogram + co-occurrence embedding computed in-process.
    Builtin,
    /// Per-region vectors read from the manifest's embedding files.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoarsenConfig {
    /// Merge while the best adjacent pair's cosine similarity exceeds tau.
    pub tau: f64,
    pub embeddings: EmbeddingKind,
}

impl Default for CoarsenConfig {
    fn default() -> Self {
        Self {
            tau: 0.9,
            embeddings: EmbeddingKind::Builtin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Gray-level count for the texture matrices.
    pub levels: u32,
    /// Correlation-pruning threshold.
    pub xi: f64,
    pub include_lbp: bool,
    pub bright_cutoff: f64,
    pub dark_cutoff: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let p = CatalogParams::default();
        Self {
            levels: p.levels,
            xi: 0.99,
            include_lbp: p.include_lbp,
            bright_cutoff: p.bright_cutoff,
            dark_cutoff: p.dark_cutoff,
        }
    }
}

impl FeatureConfig {
    pub fn catalog_params(&self) -> CatalogParams {
        CatalogParams {
            levels: self.levels,
            include_lbp: self.include_lbp,
            bright_cutoff: self.bright_cutoff,
            dark_cutoff: self.dark_cutoff,
        }
    }
}

/// Which label a slide trains against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// 4-class stage classification.
    Staging,
    /// Survival discretized into four risk groups.
    Survival,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub task: Task,
    /// Z-score active features with training-split statistics before
    /// training and attribution.
    pub standardize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            task: Task::Staging,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributionConfig {
    /// Riemann steps for integrated gradients.
    pub steps: u32,
    /// Features named in the explanation report.
    pub top_k: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self { steps: 64, top_k: 10 }
    }
}

/// Every tunable of the pipeline plus the seed and worker count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub mask: MaskConfig,
    pub superpixel: SuperpixelConfig,
    pub coarsen: CoarsenConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub search: SearchSpace,
    pub attribution: AttributionConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save_toml(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Canonical JSON used for stage digests.
    pub fn digest_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Resolve a manifest-relative path.
pub fn resolve(base: &Path, p: &PathBuf) -> PathBuf {
    if p.is_absolute() {
        p.clone()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut cfg = RunConfig::default();
        cfg.seed = 1234567;
        cfg.coarsen.tau = 0.87654321;
        cfg.train.learning_rate = 3.7e-4;
        cfg.search.lr_min = 1e-5;
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "seed = 1\n[coarsen]\ntau = 0.5\nbogus = 3\n";
        assert!(toml::from_str::<RunConfig>(text).is_err());
        let text2 = "not_a_field = true\n";
        assert!(toml::from_str::<RunConfig>(text2).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let text = "[coarsen]\ntau = 0.5\n";
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.coarsen.tau, 0.5);
        assert_eq!(cfg.features.xi, 0.99);
        assert_eq!(cfg.superpixel.target_side, 300);
    }
}
