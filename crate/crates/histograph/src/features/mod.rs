//! The interpretable node feature catalog: texture (93) + morphological (18)
//! + nuclear (77) features per region, and correlation-based pruning.
//!
//! The catalog fixes name and order once; extraction, pruning, training, and
//! explanation all index into it.

pub mod morph;
pub mod nuclear;
pub mod texture;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{rgb_to_gray, RgbImage};
use crate::superpixel::{LabelMap, RegionNode};

pub use morph::{extract_morph, MorphCutoffs, MORPH_COUNT, MORPH_NAMES};
pub use nuclear::{extract_nuclear, NucleiMap, NucleusRecord, NUCLEAR_COUNT};
pub use texture::{extract_texture, RegionRaster, TEXTURE_COUNT};

/// Which of the three blocks a feature belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureGroup {
    Tex,
    Morph,
    Nuc,
}

/// One catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub group: FeatureGroup,
    /// Family within the group: firstorder, glcm, glrlm, glszm, gldm, ngtdm,
    /// lbp, morph, or the nuclear type group.
    pub family: String,
}

/// Extraction parameters shared by every catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogParams {
    /// Gray-level count for the texture matrix families.
    pub levels: u32,
    /// Append the 10-bin uniform LBP histogram to the texture block.
    pub include_lbp: bool,
    pub bright_cutoff: f64,
    pub dark_cutoff: f64,
}

impl Default for CatalogParams {
    fn default() -> Self {
        Self {
            levels: 32,
            include_lbp: false,
            bright_cutoff: 200.0,
            dark_cutoff: 50.0,
        }
    }
}

/// Ordered, named feature definitions plus the active set left by pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub entries: Vec<FeatureDef>,
    pub active: Vec<bool>,
    pub params: CatalogParams,
}

impl FeatureCatalog {
    pub fn new(params: CatalogParams) -> Self {
        let mut entries = Vec::new();
        let tex = |family: &str, name: &str| FeatureDef {
            name: format!("original_{family}_{name}"),
            group: FeatureGroup::Tex,
            family: family.to_string(),
        };
        for n in texture::FIRSTORDER_NAMES {
            entries.push(tex("firstorder", n));
        }
        for n in texture::GLCM_NAMES {
            entries.push(tex("glcm", n));
        }
        for n in texture::GLRLM_NAMES {
            entries.push(tex("glrlm", n));
        }
        for n in texture::GLSZM_NAMES {
            entries.push(tex("glszm", n));
        }
        for n in texture::GLDM_NAMES {
            entries.push(tex("gldm", n));
        }
        for n in texture::NGTDM_NAMES {
            entries.push(tex("ngtdm", n));
        }
        if params.include_lbp {
            for bin in 0..10 {
                entries.push(FeatureDef {
                    name: format!("original_lbp_{bin}"),
                    group: FeatureGroup::Tex,
                    family: "lbp".to_string(),
                });
            }
        }
        for n in MORPH_NAMES {
            entries.push(FeatureDef {
                name: n.to_string(),
                group: FeatureGroup::Morph,
                family: "morph".to_string(),
            });
        }
        for g in nuclear::NUCLEAR_GROUPS {
            for s in nuclear::NUCLEAR_STATS {
                entries.push(FeatureDef {
                    name: format!("{g}_{s}"),
                    group: FeatureGroup::Nuc,
                    family: g.to_string(),
                });
            }
        }
        let active = vec![true; entries.len()];
        Self {
            entries,
            active,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    /// Indices of active entries, in catalog order.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn active_names(&self) -> Vec<String> {
        self.active_indices()
            .into_iter()
            .map(|i| self.entries[i].name.clone())
            .collect()
    }

    /// Project a full row onto the active entries.
    pub fn select_active(&self, row: &[f64]) -> Vec<f64> {
        self.active_indices().into_iter().map(|i| row[i]).collect()
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        use std::io::Write;
        writeln!(w).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Collect a region's raster and RGB pixels from the flattened label map.
pub fn region_raster(img: &RgbImage, labels: &LabelMap, node: &RegionNode) -> (RegionRaster, Vec<[u8; 3]>) {
    let bbox = node.bbox;
    let bw = (bbox.x1 - bbox.x0 + 1) as usize;
    let bh = (bbox.y1 - bbox.y0 + 1) as usize;
    let mut mask = vec![false; bw * bh];
    let mut gray = vec![0.0f64; bw * bh];
    let mut pixels = Vec::new();
    for y in bbox.y0..=bbox.y1 {
        for x in bbox.x0..=bbox.x1 {
            if labels.get(x, y) == node.id {
                let li = (y - bbox.y0) as usize * bw + (x - bbox.x0) as usize;
                mask[li] = true;
                let p = img.pixel(x, y);
                gray[li] = rgb_to_gray(p);
                pixels.push(p);
            }
        }
    }
    (
        RegionRaster {
            width: bw,
            height: bh,
            mask,
            gray,
        },
        pixels,
    )
}

/// Full feature vector of one region, in catalog order.
pub fn extract_node_features(
    img: &RgbImage,
    labels: &LabelMap,
    node: &RegionNode,
    nuclei: &NucleiMap,
    catalog: &FeatureCatalog,
) -> Result<Vec<f64>> {
    let (raster, pixels) = region_raster(img, labels, node);
    let mut row = extract_texture(&raster, catalog.params.levels, catalog.params.include_lbp)?;
    row.extend(extract_morph(
        &pixels,
        &MorphCutoffs {
            bright: catalog.params.bright_cutoff,
            dark: catalog.params.dark_cutoff,
        },
    )?);
    row.extend(extract_nuclear(labels, node.id, node.pixel_count, nuclei));
    debug_assert_eq!(row.len(), catalog.len());
    Ok(row)
}

/// Pearson correlation of two columns; constant columns correlate as zero.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        // Cauchy-Schwarz bounds |rho| by 1; rounding must not push a linear
        // dependence past the xi = 1.0 keep-everything threshold.
        (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Deactivate the later member of every active pair whose absolute Pearson
/// correlation exceeds `xi`, scanning pairs in catalog order.
///
/// `rows` are full catalog-order feature vectors pooled over the training
/// split. Returns the active flag set.
pub fn prune_correlated(rows: &[Vec<f64>], xi: f64) -> Result<Vec<bool>> {
    if rows.len() < 2 {
        return Err(Error::invalid(
            "correlation pruning needs at least two samples",
        ));
    }
    if !(xi > 0.0 && xi <= 1.0) {
        return Err(Error::invalid("xi must lie in (0, 1]"));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::invalid("feature rows must share one length"));
    }
    let columns: Vec<Vec<f64>> = (0..width)
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect();
    let mut active = vec![true; width];
    for i in 0..width {
        if !active[i] {
            continue;
        }
        for j in (i + 1)..width {
            if !active[j] {
                continue;
            }
            if pearson(&columns[i], &columns[j]).abs() > xi {
                active[j] = false;
            }
        }
    }
    Ok(active)
}
