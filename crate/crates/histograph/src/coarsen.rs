//! Embedding-guided greedy agglomerative merging of adjacent regions.
//!
//! Adjacent node pairs are merged in order of decreasing cosine similarity
//! until no adjacent pair's similarity exceeds the threshold tau. The merge
//! sequence itself does not depend on tau: tau only sets the stopping point,
//! so traces for larger thresholds are prefixes of traces for smaller ones.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{quantize_values, rgb_to_lab, rgb_to_gray, RgbImage};
use crate::superpixel::{LabelMap, RegionGraph, RegionNode, BACKGROUND};

/// Dimension of the built-in handcrafted embedding: a 3x8-bin LAB histogram
/// plus 24 co-occurrence summary statistics.
pub const BUILTIN_EMBEDDING_DIM: usize = 48;

/// Where per-region embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    /// Binary file of per-region vectors keyed by region id.
    File(std::path::PathBuf),
    /// Handcrafted color-histogram + co-occurrence statistics, computed from
    /// the image itself. A desk-scale stand-in for a pretrained encoder.
    Builtin,
}

/// One merge event: nodes `a` and `b` replaced by `new_id`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub a: u32,
    pub b: u32,
    pub similarity: f64,
    pub new_id: u32,
}

/// Ordered record of all merges, for reproducibility and label flattening.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeTrace {
    pub steps: Vec<MergeStep>,
}

impl MergeTrace {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::format(path, e.to_string()))?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Cosine similarity of two nonzero vectors of equal dimension.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "embedding dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok(dot / (na * nb))
}

/// Max-heap entry; ties in similarity resolved toward the lexicographically
/// smallest (low id, high id) pair.
#[derive(Debug, PartialEq)]
struct Candidate {
    sim: f64,
    a: u32,
    b: u32,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .partial_cmp(&other.sim)
            .expect("similarities are finite")
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

struct NodeState {
    pixel_count: u64,
    members: Vec<u32>,
    embedding: Vec<f64>,
    neighbors: BTreeSet<u32>,
}

/// Greedily merge adjacent nodes while the best pair's similarity exceeds
/// `tau` (strict). Returns the coarsened graph and the merge trace.
///
/// Merged nodes get fresh ids; the merged embedding is the pixel-count
/// weighted mean of its two constituents, and the new node inherits the union
/// of its predecessors' edges with self-loops dropped.
pub fn coarsen(
    graph: &RegionGraph,
    embeddings: &[Vec<f64>],
    tau: f64,
) -> Result<(RegionGraph, MergeTrace)> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::invalid("tau must lie in [-1, 1]"));
    }
    if embeddings.len() != graph.nodes.len() {
        return Err(Error::invalid(format!(
            "{} embeddings for {} nodes",
            embeddings.len(),
            graph.nodes.len()
        )));
    }
    let dim = embeddings.first().map(|e| e.len()).unwrap_or(0);
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::invalid("embeddings must share one dimension"));
    }

    let mut alive: BTreeMap<u32, NodeState> = BTreeMap::new();
    for (node, emb) in graph.nodes.iter().zip(embeddings) {
        alive.insert(
            node.id,
            NodeState {
                pixel_count: node.pixel_count,
                members: node.members.clone(),
                embedding: emb.clone(),
                neighbors: BTreeSet::new(),
            },
        );
    }
    for &(a, b) in &graph.edges {
        alive
            .get_mut(&a)
            .ok_or_else(|| Error::invalid(format!("edge endpoint {a} not in node list")))?
            .neighbors
            .insert(b);
        alive
            .get_mut(&b)
            .ok_or_else(|| Error::invalid(format!("edge endpoint {b} not in node list")))?
            .neighbors
            .insert(a);
    }

    let mut heap = BinaryHeap::new();
    for &(a, b) in &graph.edges {
        let sim = cosine_similarity(&alive[&a].embedding, &alive[&b].embedding)?;
        heap.push(Candidate { sim, a, b });
    }

    let mut next_id = graph.nodes.iter().map(|n| n.id).max().map_or(0, |m| m + 1);
    let mut trace = MergeTrace::default();

    while let Some(cand) = heap.pop() {
        if !alive.contains_key(&cand.a) || !alive.contains_key(&cand.b) {
            continue; // stale entry referencing a merged-away node
        }
        if cand.sim <= tau {
            break;
        }
        let a = alive.remove(&cand.a).expect("checked alive");
        let b = alive.remove(&cand.b).expect("checked alive");
        let new_id = next_id;
        next_id += 1;

        let total = a.pixel_count + b.pixel_count;
        let wa = a.pixel_count as f64 / total as f64;
        let wb = b.pixel_count as f64 / total as f64;
        let embedding: Vec<f64> = a
            .embedding
            .iter()
            .zip(&b.embedding)
            .map(|(x, y)| wa * x + wb * y)
            .collect();
        let mut members = a.members;
        members.extend(b.members);
        members.sort_unstable();

        let mut neighbors: BTreeSet<u32> = a.neighbors.union(&b.neighbors).copied().collect();
        neighbors.remove(&cand.a);
        neighbors.remove(&cand.b);

        for &n in &neighbors {
            let state = alive.get_mut(&n).expect("neighbor is alive");
            state.neighbors.remove(&cand.a);
            state.neighbors.remove(&cand.b);
            state.neighbors.insert(new_id);
            let sim = cosine_similarity(&embedding, &state.embedding)?;
            heap.push(Candidate {
                sim,
                a: n.min(new_id),
                b: n.max(new_id),
            });
        }

        alive.insert(
            new_id,
            NodeState {
                pixel_count: total,
                members,
                embedding,
                neighbors,
            },
        );
        trace.steps.push(MergeStep {
            a: cand.a,
            b: cand.b,
            similarity: cand.sim,
            new_id,
        });
    }

    let id_to_bbox: BTreeMap<u32, crate::superpixel::BoundingBox> =
        graph.nodes.iter().map(|n| (n.id, n.bbox)).collect();
    let mut nodes = Vec::with_capacity(alive.len());
    let mut out_embeddings = Vec::with_capacity(alive.len());
    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::new();
    for (&id, state) in &alive {
        // Bounding box of a merged node covers all member regions.
        let mut bbox = id_to_bbox[&state.members[0]];
        for m in &state.members[1..] {
            let mb = id_to_bbox[m];
            bbox.x0 = bbox.x0.min(mb.x0);
            bbox.y0 = bbox.y0.min(mb.y0);
            bbox.x1 = bbox.x1.max(mb.x1);
            bbox.y1 = bbox.y1.max(mb.y1);
        }
        nodes.push(RegionNode {
            id,
            pixel_count: state.pixel_count,
            bbox,
            members: state.members.clone(),
        });
        out_embeddings.push(state.embedding.clone());
        for &n in &state.neighbors {
            edges.insert((id.min(n), id.max(n)));
        }
    }

    Ok((
        RegionGraph {
            nodes,
            edges: edges.into_iter().collect(),
            embeddings: Some(out_embeddings),
            features: None,
        },
        trace,
    ))
}

/// Relabel every pixel to its final super-node id by replaying the trace.
pub fn flatten_labels(original: &LabelMap, trace: &MergeTrace) -> Result<LabelMap> {
    let mut known: BTreeSet<u32> = original
        .labels
        .iter()
        .copied()
        .filter(|&l| l != BACKGROUND)
        .collect();
    let mut parent: BTreeMap<u32, u32> = BTreeMap::new();
    for step in &trace.steps {
        for id in [step.a, step.b] {
            if !known.contains(&id) {
                return Err(Error::CorruptTrace(format!(
                    "merge references unknown region id {id}"
                )));
            }
            if parent.contains_key(&id) {
                return Err(Error::CorruptTrace(format!(
                    "region id {id} merged more than once"
                )));
            }
            parent.insert(id, step.new_id);
        }
        known.insert(step.new_id);
    }

    let resolve = |mut id: u32| -> u32 {
        while let Some(&p) = parent.get(&id) {
            id = p;
        }
        id
    };
    let mut cache: BTreeMap<u32, u32> = BTreeMap::new();
    let labels = original
        .labels
        .iter()
        .map(|&l| {
            if l == BACKGROUND {
                BACKGROUND
            } else {
                *cache.entry(l).or_insert_with(|| resolve(l))
            }
        })
        .collect();
    Ok(LabelMap {
        width: original.width,
        height: original.height,
        labels,
    })
}

/// Fetch or compute an embedding for every node of the graph.
pub fn resolve_embeddings(
    source: &EmbeddingSource,
    img: &RgbImage,
    labels: &LabelMap,
    graph: &RegionGraph,
) -> Result<Vec<Vec<f64>>> {
    match source {
        EmbeddingSource::Builtin => graph
            .nodes
            .iter()
            .map(|node| builtin_embedding(img, labels, node))
            .collect(),
        EmbeddingSource::File(path) => {
            let table = read_embeddings(path)?;
            let dim = table
                .values()
                .next()
                .map(|v| v.len())
                .ok_or_else(|| Error::format(path, "embedding file is empty"))?;
            graph
                .nodes
                .iter()
                .map(|node| {
                    let v = table.get(&node.id).ok_or_else(|| {
                        Error::format(path, format!("no embedding for region id {}", node.id))
                    })?;
                    if v.len() != dim {
                        return Err(Error::format(path, "inconsistent embedding dimensions"));
                    }
                    if v.iter().any(|x| !x.is_finite()) || v.iter().all(|&x| x == 0.0) {
                        return Err(Error::format(
                            path,
                            format!("embedding for region {} is zero or non-finite", node.id),
                        ));
                    }
                    Ok(v.clone())
                })
                .collect()
        }
    }
}

const BUILTIN_GLCM_LEVELS: u32 = 16;

/// Handcrafted per-region embedding: 8-bin histograms of L, a, b plus
/// contrast / correlation / energy / homogeneity / entropy / dissimilarity of
/// the co-occurrence matrix at 4 unit offsets. L2-normalized.
pub fn builtin_embedding(img: &RgbImage, labels: &LabelMap, node: &RegionNode) -> Result<Vec<f64>> {
    let members: BTreeSet<u32> = node.members.iter().copied().collect();
    let bbox = node.bbox;
    let bw = (bbox.x1 - bbox.x0 + 1) as usize;
    let bh = (bbox.y1 - bbox.y0 + 1) as usize;
    let mut in_region = vec![false; bw * bh];
    let mut lab_vals: Vec<[f64; 3]> = Vec::new();
    let mut gray: Vec<f64> = Vec::new();
    for y in bbox.y0..=bbox.y1 {
        for x in bbox.x0..=bbox.x1 {
            if members.contains(&labels.get(x, y)) {
                let li = (y - bbox.y0) as usize * bw + (x - bbox.x0) as usize;
                in_region[li] = true;
                let p = img.pixel(x, y);
                lab_vals.push(rgb_to_lab(p));
                gray.push(rgb_to_gray(p));
            }
        }
    }
    if lab_vals.is_empty() {
        return Err(Error::invalid(format!("region {} has no pixels", node.id)));
    }

    let n = lab_vals.len() as f64;
    let mut features = Vec::with_capacity(BUILTIN_EMBEDDING_DIM);
    // Fixed-range LAB histograms: L in [0,100], a and b in [-128,128].
    let ranges = [(0.0f64, 100.0f64), (-128.0, 128.0), (-128.0, 128.0)];
    for (ch, &(lo, hi)) in ranges.iter().enumerate() {
        let mut hist = [0.0f64; 8];
        for v in &lab_vals {
            let t = ((v[ch] - lo) / (hi - lo) * 8.0).floor();
            hist[(t.max(0.0) as usize).min(7)] += 1.0;
        }
        for b in hist {
            features.push(b / n);
        }
    }

    // Co-occurrence summaries on the region quantized to its own range.
    let q = quantize_values(&gray, BUILTIN_GLCM_LEVELS)?;
    let mut local_q = vec![0u32; bw * bh];
    let mut qi = 0;
    for li in 0..bw * bh {
        if in_region[li] {
            local_q[li] = q[qi];
            qi += 1;
        }
    }
    for (dx, dy) in [(1i64, 0i64), (1, -1), (0, -1), (-1, -1)] {
        let ng = BUILTIN_GLCM_LEVELS as usize;
        let mut counts = vec![0.0f64; ng * ng];
        let mut total = 0.0f64;
        for y in 0..bh as i64 {
            for x in 0..bw as i64 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= bw as i64 || ny >= bh as i64 {
                    continue;
                }
                let (i0, i1) = ((y * bw as i64 + x) as usize, (ny * bw as i64 + nx) as usize);
                if in_region[i0] && in_region[i1] {
                    let (a, b) = (local_q[i0] as usize, local_q[i1] as usize);
                    counts[a * ng + b] += 1.0;
                    counts[b * ng + a] += 1.0;
                    total += 2.0;
                }
            }
        }
        if total == 0.0 {
            features.extend_from_slice(&[0.0; 6]);
            continue;
        }
        for c in counts.iter_mut() {
            *c /= total;
        }
        let mut contrast = 0.0;
        let mut energy = 0.0;
        let mut homogeneity = 0.0;
        let mut entropy = 0.0;
        let mut dissimilarity = 0.0;
        let mut mean = 0.0;
        for i in 0..ng {
            for j in 0..ng {
                let p = counts[i * ng + j];
                let d = i as f64 - j as f64;
                contrast += p * d * d;
                energy += p * p;
                homogeneity += p / (1.0 + d.abs());
                dissimilarity += p * d.abs();
                if p > 0.0 {
                    entropy -= p * p.log2();
                }
                mean += p * i as f64;
            }
        }
        let mut var = 0.0;
        for i in 0..ng {
            let pi: f64 = (0..ng).map(|j| counts[i * ng + j]).sum();
            var += pi * (i as f64 - mean) * (i as f64 - mean);
        }
        let correlation = if var > 0.0 {
            let mut cov = 0.0;
            for i in 0..ng {
                for j in 0..ng {
                    cov += counts[i * ng + j] * (i as f64 - mean) * (j as f64 - mean);
                }
            }
            cov / var
        } else {
            0.0
        };
        features.extend_from_slice(&[
            contrast,
            correlation,
            energy,
            homogeneity,
            entropy,
            dissimilarity,
        ]);
    }

    let norm: f64 = features.iter().map(|v| v * v).sum::<f64>().sqrt();
    debug_assert!(norm > 0.0, "histogram mass guarantees a nonzero vector");
    Ok(features.iter().map(|v| v / norm).collect())
}

/// Write per-region embeddings: `u32 count, u32 dim`, then `count` records of
/// `u32 region id` followed by `dim` little-endian f32 values.
pub fn write_embeddings(path: &Path, table: &BTreeMap<u32, Vec<f64>>) -> Result<()> {
    let dim = table.values().next().map(|v| v.len()).unwrap_or(0);
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&(table.len() as u32).to_le_bytes())?;
    put(&(dim as u32).to_le_bytes())?;
    for (id, vec) in table {
        if vec.len() != dim {
            return Err(Error::invalid("embedding rows must share one dimension"));
        }
        put(&id.to_le_bytes())?;
        for &v in vec {
            put(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read the layout written by [`write_embeddings`].
pub fn read_embeddings(path: &Path) -> Result<BTreeMap<u32, Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
        r.read_exact(&mut u32_buf).map_err(|e| Error::io(path, e))?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let count = read_u32(&mut r)?;
    let dim = read_u32(&mut r)? as usize;
    let mut table = BTreeMap::new();
    for _ in 0..count {
        let id = read_u32(&mut r)?;
        let mut vec = Vec::with_capacity(dim);
        let mut f32_buf = [0u8; 4];
        for _ in 0..dim {
            r.read_exact(&mut f32_buf).map_err(|e| Error::io(path, e))?;
            vec.push(f32::from_le_bytes(f32_buf) as f64);
        }
        table.insert(id, vec);
    }
    Ok(table)
}
