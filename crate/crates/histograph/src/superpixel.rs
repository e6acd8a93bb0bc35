//! SLIC over-segmentation of the tissue area and construction of the initial
//! region adjacency graph.
//!
//! SLIC here is localized k-means in combined CIELAB + position space:
//! seeds on a regular grid of spacing `S = sqrt(masked_area / K)`, assignment
//! minimizing `sqrt(d_lab^2 + (m/S)^2 d_xy^2)` within a 2S x 2S window, and a
//! final connectivity pass that guarantees 4-connected regions.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{convert_color, ColorSpace, RgbImage};
use crate::tissue::TissueMask;

/// Sentinel label for pixels outside the tissue mask.
pub const BACKGROUND: u32 = u32::MAX;

/// Per-pixel region labels; background pixels carry [`BACKGROUND`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    /// Number of distinct non-background labels.
    pub fn region_count(&self) -> usize {
        let set: BTreeSet<u32> = self
            .labels
            .iter()
            .copied()
            .filter(|&l| l != BACKGROUND)
            .collect();
        set.len()
    }

    /// Write as a 16-bit grayscale PNG with background = 65535.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let mut data = Vec::with_capacity(self.labels.len());
        for &l in &self.labels {
            if l == BACKGROUND {
                data.push(u16::MAX);
            } else if l >= u16::MAX as u32 {
                return Err(Error::invalid(format!(
                    "label {l} exceeds the 16-bit PNG range"
                )));
            } else {
                data.push(l as u16);
            }
        }
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width, self.height, data)
                .expect("dimensions match label count");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn load_png16(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma16();
        let labels = img
            .iter()
            .map(|&v| if v == u16::MAX { BACKGROUND } else { v as u32 })
            .collect();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            labels,
        })
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoundingBox {
    fn cover(&mut self, x: u32, y: u32) {
        self.x0 = self.x0.min(x);
        self.y0 = self.y0.min(y);
        self.x1 = self.x1.max(x);
        self.y1 = self.y1.max(y);
    }
}

/// One region node: its id, mass, extent, and the original region ids it
/// absorbed (initially just itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionNode {
    pub id: u32,
    pub pixel_count: u64,
    pub bbox: BoundingBox,
    pub members: Vec<u32>,
}

/// Region adjacency graph with optional per-node embeddings and features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGraph {
    pub nodes: Vec<RegionNode>,
    /// Undirected edges, stored once as (low id, high id), sorted.
    pub edges: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<NodeFeatureMatrix>,
}

/// Per-node feature rows aligned with the graph's node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl RegionGraph {
    pub fn node_index(&self, id: u32) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn total_pixels(&self) -> u64 {
        self.nodes.iter().map(|n| n.pixel_count).sum()
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

/// Number of regions targeting one region per `target_side`-square patch at
/// the reference magnification.
pub fn target_region_count(
    tissue_area: u64,
    seg_mag: f64,
    ref_mag: f64,
    target_side: u32,
) -> Result<u32> {
    if tissue_area == 0 || seg_mag <= 0.0 || ref_mag <= 0.0 || target_side == 0 {
        return Err(Error::invalid("all targeting arguments must be positive"));
    }
    let scale = ref_mag / seg_mag;
    let k = (tissue_area as f64 * scale * scale / (target_side as f64 * target_side as f64))
        .round() as i64;
    Ok(k.max(1) as u32)
}

/// SLIC tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    /// Compactness m: weight of the spatial term.
    pub compactness: f64,
    pub iterations: u32,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            compactness: 10.0,
            iterations: 10,
        }
    }
}

#[derive(Clone, Copy)]
struct Center {
    l: f64,
    a: f64,
    b: f64,
    x: f64,
    y: f64,
}

/// SLIC over the masked area. Deterministic for fixed inputs.
pub fn slic(img: &RgbImage, mask: &TissueMask, k: u32, params: &SlicParams) -> Result<LabelMap> {
    if mask.width != img.width() || mask.height != img.height() {
        return Err(Error::invalid("mask dimensions must match the image"));
    }
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let masked_area = mask.area();
    if masked_area == 0 {
        return Err(Error::invalid("mask has no foreground pixels"));
    }
    if k as u64 > masked_area {
        return Err(Error::invalid(format!(
            "k = {k} exceeds masked pixel count {masked_area}"
        )));
    }

    let (w, h) = (img.width() as i64, img.height() as i64);
    let planes = convert_color(img, ColorSpace::CieLab);
    let lab = |x: i64, y: i64| -> [f64; 3] {
        let i = (y * w + x) as usize;
        [planes[0].data[i], planes[1].data[i], planes[2].data[i]]
    };
    let masked = |x: i64, y: i64| mask.bits[(y * w + x) as usize];

    let spacing = (masked_area as f64 / k as f64).sqrt();

    // Lowest-gradient position in the 3x3 window around a seed.
    let gradient = |x: i64, y: i64| -> f64 {
        let xm = (x - 1).max(0);
        let xp = (x + 1).min(w - 1);
        let ym = (y - 1).max(0);
        let yp = (y + 1).min(h - 1);
        let gx: f64 = lab(xp, y)
            .iter()
            .zip(lab(xm, y).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let gy: f64 = lab(x, yp)
            .iter()
            .zip(lab(x, ym).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        gx + gy
    };

    let mut seeds: Vec<(i64, i64)> = Vec::new();
    let mut gy = spacing / 2.0;
    while gy < h as f64 {
        let mut gx = spacing / 2.0;
        while gx < w as f64 {
            let (sx, sy) = (gx.round() as i64, gy.round() as i64);
            if sx < w && sy < h && masked(sx, sy) {
                // Perturb to the lowest-gradient masked pixel in the 3x3 window.
                let mut best = (sx, sy);
                let mut best_g = gradient(sx, sy);
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (nx, ny) = (sx + dx, sy + dy);
                        if nx < 0 || nx >= w || ny < 0 || ny >= h || !masked(nx, ny) {
                            continue;
                        }
                        let g = gradient(nx, ny);
                        if g < best_g {
                            best_g = g;
                            best = (nx, ny);
                        }
                    }
                }
                if !seeds.contains(&best) {
                    seeds.push(best);
                }
            }
            gx += spacing;
        }
        gy += spacing;
    }
    if seeds.is_empty() {
        let first = mask.bits.iter().position(|&b| b).unwrap() as i64;
        seeds.push((first % w, first / w));
    }

    let mut centers: Vec<Center> = seeds
        .iter()
        .map(|&(x, y)| {
            let c = lab(x, y);
            Center {
                l: c[0],
                a: c[1],
                b: c[2],
                x: x as f64,
                y: y as f64,
            }
        })
        .collect();

    let spatial_w = (params.compactness / spacing) * (params.compactness / spacing);
    let win = spacing.ceil() as i64;
    let mut labels = vec![BACKGROUND; (w * h) as usize];
    let mut dist = vec![f64::INFINITY; (w * h) as usize];

    for _ in 0..params.iterations.max(1) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        labels.iter_mut().for_each(|l| *l = BACKGROUND);
        for (ci, c) in centers.iter().enumerate() {
            let (cx, cy) = (c.x.round() as i64, c.y.round() as i64);
            for y in (cy - win).max(0)..=(cy + win).min(h - 1) {
                for x in (cx - win).max(0)..=(cx + win).min(w - 1) {
                    if !masked(x, y) {
                        continue;
                    }
                    let p = lab(x, y);
                    let dl = p[0] - c.l;
                    let da = p[1] - c.a;
                    let db = p[2] - c.b;
                    let dx = x as f64 - c.x;
                    let dy = y as f64 - c.y;
                    let d = dl * dl + da * da + db * db + spatial_w * (dx * dx + dy * dy);
                    let idx = (y * w + x) as usize;
                    if d < dist[idx] {
                        dist[idx] = d;
                        labels[idx] = ci as u32;
                    }
                }
            }
        }
        // Masked pixels outside every window fall back to a full scan.
        for y in 0..h {
            for x in 0..w {
                let idx = (y * w + x) as usize;
                if !masked(x, y) || labels[idx] != BACKGROUND {
                    continue;
                }
                let p = lab(x, y);
                let mut best = f64::INFINITY;
                let mut best_c = 0u32;
                for (ci, c) in centers.iter().enumerate() {
                    let dl = p[0] - c.l;
                    let da = p[1] - c.a;
                    let db = p[2] - c.b;
                    let dx = x as f64 - c.x;
                    let dy = y as f64 - c.y;
                    let d = dl * dl + da * da + db * db + spatial_w * (dx * dx + dy * dy);
                    if d < best {
                        best = d;
                        best_c = ci as u32;
                    }
                }
                labels[idx] = best_c;
            }
        }
        // Centroid update from a full pass.
        let mut acc = vec![(0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0u64); centers.len()];
        for y in 0..h {
            for x in 0..w {
                let idx = (y * w + x) as usize;
                let l = labels[idx];
                if l == BACKGROUND {
                    continue;
                }
                let p = lab(x, y);
                let a = &mut acc[l as usize];
                a.0 += p[0];
                a.1 += p[1];
                a.2 += p[2];
                a.3 += x as f64;
                a.4 += y as f64;
                a.5 += 1;
            }
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a.5 > 0 {
                let n = a.5 as f64;
                *c = Center {
                    l: a.0 / n,
                    a: a.1 / n,
                    b: a.2 / n,
                    x: a.3 / n,
                    y: a.4 / n,
                };
            }
        }
    }

    let min_fragment = (spacing * spacing / 16.0).max(1.0);
    Ok(enforce_connectivity(
        &labels,
        img.width(),
        img.height(),
        min_fragment as u64,
    ))
}

/// Split labels into 4-connected components, absorb fragments into their
/// largest adjacent region, and relabel contiguously in scan order.
fn enforce_connectivity(labels: &[u32], width: u32, height: u32, min_fragment: u64) -> LabelMap {
    let (w, h) = (width as i64, height as i64);
    let n = labels.len();
    const NONE: usize = usize::MAX;
    let mut comp_of = vec![NONE; n];
    // Per component: (label, area, first pixel index)
    let mut comps: Vec<(u32, u64, usize)> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if labels[start] == BACKGROUND || comp_of[start] != NONE {
            continue;
        }
        let cid = comps.len();
        let lbl = labels[start];
        let mut area = 0u64;
        stack.push(start);
        comp_of[start] = cid;
        while let Some(idx) = stack.pop() {
            area += 1;
            let (x, y) = ((idx as i64) % w, (idx as i64) / w);
            for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || nx >= w || ny < 0 || ny >= h {
                    continue;
                }
                let nidx = (ny * w + nx) as usize;
                if labels[nidx] == lbl && comp_of[nidx] == NONE {
                    comp_of[nidx] = cid;
                    stack.push(nidx);
                }
            }
        }
        comps.push((lbl, area, start));
    }

    // Largest component per label is primary (ties: earliest in scan order).
    let mut primary_of_label: std::collections::BTreeMap<u32, usize> = Default::default();
    for (cid, &(lbl, area, first)) in comps.iter().enumerate() {
        match primary_of_label.get(&lbl) {
            Some(&best) => {
                let (_, barea, bfirst) = comps[best];
                if area > barea || (area == barea && first < bfirst) {
                    primary_of_label.insert(lbl, cid);
                }
            }
            None => {
                primary_of_label.insert(lbl, cid);
            }
        }
    }

    // Union-find over components with accumulated areas.
    let mut parent: Vec<usize> = (0..comps.len()).collect();
    let mut root_area: Vec<u64> = comps.iter().map(|c| c.1).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    let mut orphans: Vec<usize> = (0..comps.len())
        .filter(|&cid| {
            let (lbl, area, _) = comps[cid];
            primary_of_label[&lbl] != cid || area < min_fragment
        })
        .collect();
    orphans.sort_by_key(|&cid| comps[cid].2);

    for &cid in &orphans {
        let my_root = find(&mut parent, cid);
        // Adjacent roots, best by (area, then smallest id).
        let mut best: Option<(u64, usize)> = None;
        for idx in 0..n {
            if comp_of[idx] == NONE || find(&mut parent, comp_of[idx]) != my_root {
                continue;
            }
            let (x, y) = ((idx as i64) % w, (idx as i64) / w);
            for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || nx >= w || ny < 0 || ny >= h {
                    continue;
                }
                let nidx = (ny * w + nx) as usize;
                if comp_of[nidx] == NONE {
                    continue;
                }
                let r = find(&mut parent, comp_of[nidx]);
                if r == my_root {
                    continue;
                }
                let cand = (root_area[r], r);
                best = Some(match best {
                    Some((ba, br)) if ba > cand.0 || (ba == cand.0 && br <= r) => (ba, br),
                    _ => cand,
                });
            }
        }
        if let Some((_, target)) = best {
            let target = find(&mut parent, target);
            parent[my_root] = target;
            root_area[target] += root_area[my_root];
        }
    }

    // Contiguous ids in scan order of first root occurrence.
    let mut new_id: std::collections::BTreeMap<usize, u32> = Default::default();
    let mut out = vec![BACKGROUND; n];
    let mut next = 0u32;
    for idx in 0..n {
        if comp_of[idx] == NONE {
            continue;
        }
        let r = find(&mut parent, comp_of[idx]);
        let id = *new_id.entry(r).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        out[idx] = id;
    }
    LabelMap {
        width,
        height,
        labels: out,
    }
}

/// Region adjacency graph: an edge wherever two regions touch 4-connectedly.
pub fn build_rag(labels: &LabelMap) -> RegionGraph {
    let (w, h) = (labels.width as i64, labels.height as i64);
    let mut nodes: std::collections::BTreeMap<u32, RegionNode> = Default::default();
    let mut edges: BTreeSet<(u32, u32)> = Default::default();
    for y in 0..h {
        for x in 0..w {
            let l = labels.labels[(y * w + x) as usize];
            if l == BACKGROUND {
                continue;
            }
            let node = nodes.entry(l).or_insert(RegionNode {
                id: l,
                pixel_count: 0,
                bbox: BoundingBox {
                    x0: x as u32,
                    y0: y as u32,
                    x1: x as u32,
                    y1: y as u32,
                },
                members: vec![l],
            });
            node.pixel_count += 1;
            node.bbox.cover(x as u32, y as u32);
            for (dx, dy) in [(1i64, 0i64), (0, 1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= w || ny >= h {
                    continue;
                }
                let m = labels.labels[(ny * w + nx) as usize];
                if m != BACKGROUND && m != l {
                    edges.insert((l.min(m), l.max(m)));
                }
            }
        }
    }
    RegionGraph {
        nodes: nodes.into_values().collect(),
        edges: edges.into_iter().collect(),
        embeddings: None,
        features: None,
    }
}
