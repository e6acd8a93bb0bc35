//! Texture and intensity features over one region: first-order statistics on
//! raw gray values plus co-occurrence (GLCM), run-length (GLRLM), size-zone
//! (GLSZM), dependence (GLDM), and neighborhood tone difference (NGTDM)
//! families on the quantized region.
//!
//! Conventions, fixed so that oracles can reproduce every value:
//! - Quantized levels are 1-based (1..=Ng) inside every matrix family.
//! - GLCM is symmetric, distance 1, feature values averaged over the four
//!   offsets 0/45/90/135 degrees; offsets with no pixel pairs are skipped,
//!   and a region where no offset has pairs yields all-zero GLCM values.
//! - GLRLM is averaged over the same four directions.
//! - GLSZM zones are 8-connected; GLDM dependence counts equal-level
//!   8-neighbors plus the center pixel itself (alpha = 0).
//! - Entropies use log2 over strictly positive probabilities.
//! - first-order Entropy and Uniformity use the quantized histogram; all
//!   other first-order features use raw gray values.
//! - Degenerate moments (zero variance) define Skewness = Kurtosis = 0, and
//!   a single-level GLCM defines Correlation = Imc1 = 0 -> see code (MCC = 1).

use crate::error::{Error, Result};
use crate::raster::quantize_values;

/// A region as a bounding-box-local grid: membership mask plus gray values.
#[derive(Debug, Clone)]
pub struct RegionRaster {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub gray: Vec<f64>,
}

impl RegionRaster {
    /// Full-rectangle region from a grid of gray values (tests, fixtures).
    pub fn from_grid(width: usize, height: usize, gray: Vec<f64>) -> Self {
        assert_eq!(gray.len(), width * height);
        Self {
            width,
            height,
            mask: vec![true; width * height],
            gray,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn values(&self) -> Vec<f64> {
        self.mask
            .iter()
            .zip(&self.gray)
            .filter_map(|(&m, &g)| m.then_some(g))
            .collect()
    }

    /// 1-based quantized levels on the grid; 0 marks cells outside the region.
    fn quantized(&self, levels: u32) -> Result<Vec<u32>> {
        let vals = self.values();
        let q = quantize_values(&vals, levels)?;
        let mut grid = vec![0u32; self.width * self.height];
        let mut qi = 0;
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                grid[i] = q[qi] + 1;
                qi += 1;
            }
        }
        Ok(grid)
    }
}

/// Linear-interpolation percentile over a sorted slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

pub const FIRSTORDER_NAMES: [&str; 18] = [
    "10Percentile",
    "90Percentile",
    "Energy",
    "Entropy",
    "InterquartileRange",
    "Kurtosis",
    "Maximum",
    "MeanAbsoluteDeviation",
    "Mean",
    "Median",
    "Minimum",
    "Range",
    "RobustMeanAbsoluteDeviation",
    "RootMeanSquared",
    "Skewness",
    "TotalEnergy",
    "Uniformity",
    "Variance",
];

pub const GLCM_NAMES: [&str; 24] = [
    "Autocorrelation",
    "ClusterProminence",
    "ClusterShade",
    "ClusterTendency",
    "Contrast",
    "Correlation",
    "DifferenceAverage",
    "DifferenceEntropy",
    "DifferenceVariance",
    "Id",
    "Idm",
    "Idmn",
    "Idn",
    "Imc1",
    "Imc2",
    "InverseVariance",
    "JointAverage",
    "JointEnergy",
    "JointEntropy",
    "MCC",
    "MaximumProbability",
    "SumAverage",
    "SumEntropy",
    "SumSquares",
];

pub const GLRLM_NAMES: [&str; 16] = [
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "GrayLevelVariance",
    "HighGrayLevelRunEmphasis",
    "LongRunEmphasis",
    "LongRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis",
    "LowGrayLevelRunEmphasis",
    "RunEntropy",
    "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized",
    "RunPercentage",
    "RunVariance",
    "ShortRunEmphasis",
    "ShortRunHighGrayLevelEmphasis",
    "ShortRunLowGrayLevelEmphasis",
];

pub const GLSZM_NAMES: [&str; 16] = [
    "GrayLevelNonUniformity",
    "GrayLevelNonUniformityNormalized",
    "GrayLevelVariance",
    "HighGrayLevelZoneEmphasis",
    "LargeAreaEmphasis",
    "LargeAreaHighGrayLevelEmphasis",
    "LargeAreaLowGrayLevelEmphasis",
    "LowGrayLevelZoneEmphasis",
    "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized",
    "SmallAreaEmphasis",
    "SmallAreaHighGrayLevelEmphasis",
    "SmallAreaLowGrayLevelEmphasis",
    "ZoneEntropy",
    "ZonePercentage",
    "ZoneVariance",
];

pub const GLDM_NAMES: [&str; 14] = [
    "DependenceEntropy",
    "DependenceNonUniformity",
    "DependenceNonUniformityNormalized",
    "DependenceVariance",
    "GrayLevelNonUniformity",
    "GrayLevelVariance",
    "HighGrayLevelEmphasis",
    "LargeDependenceEmphasis",
    "LargeDependenceHighGrayLevelEmphasis",
    "LargeDependenceLowGrayLevelEmphasis",
    "LowGrayLevelEmphasis",
    "SmallDependenceEmphasis",
    "SmallDependenceHighGrayLevelEmphasis",
    "SmallDependenceLowGrayLevelEmphasis",
];

pub const NGTDM_NAMES: [&str; 5] = ["Busyness", "Coarseness", "Complexity", "Contrast", "Strength"];

/// Total texture feature count without the optional LBP histogram.
pub const TEXTURE_COUNT: usize = 18 + 24 + 16 + 16 + 14 + 5;

/// Offsets for 0, 45, 90, and 135 degrees at distance 1, as (dx, dy).
const OFFSETS: [(i64, i64); 4] = [(1, 0), (1, -1), (0, -1), (-1, -1)];

const EIGHT_NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// All 93 texture features in catalog order; 10 LBP bins appended on request.
pub fn extract_texture(region: &RegionRaster, levels: u32, include_lbp: bool) -> Result<Vec<f64>> {
    if region.pixel_count() == 0 {
        return Err(Error::invalid("texture extraction over an empty region"));
    }
    let q = region.quantized(levels)?;
    let mut out = Vec::with_capacity(TEXTURE_COUNT + if include_lbp { 10 } else { 0 });
    out.extend_from_slice(&firstorder(region, &q, levels));
    out.extend_from_slice(&glcm(region, &q, levels));
    out.extend_from_slice(&glrlm(region, &q, levels));
    out.extend_from_slice(&glszm(region, &q, levels));
    out.extend_from_slice(&gldm(region, &q, levels));
    out.extend_from_slice(&ngtdm(region, &q, levels));
    if include_lbp {
        out.extend_from_slice(&lbp_histogram(region));
    }
    Ok(out)
}

fn firstorder(region: &RegionRaster, q: &[u32], levels: u32) -> [f64; 18] {
    let mut vals = region.values();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let energy: f64 = vals.iter().map(|v| v * v).sum();
    let m2 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let m3 = vals.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    let m4 = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let p10 = percentile(&vals, 10.0);
    let p90 = percentile(&vals, 90.0);
    let robust: Vec<f64> = vals.iter().copied().filter(|&v| v >= p10 && v <= p90).collect();
    let rmean = robust.iter().sum::<f64>() / robust.len() as f64;
    let rmad = robust.iter().map(|v| (v - rmean).abs()).sum::<f64>() / robust.len() as f64;

    // Entropy / Uniformity over the quantized histogram.
    let mut hist = vec![0.0f64; levels as usize + 1];
    for &l in q.iter().filter(|&&l| l > 0) {
        hist[l as usize] += 1.0;
    }
    let mut entropy = 0.0;
    let mut uniformity = 0.0;
    for &c in &hist {
        if c > 0.0 {
            let p = c / n;
            entropy -= p * p.log2();
            uniformity += p * p;
        }
    }

    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) } else { 0.0 };

    [
        p10,
        p90,
        energy,
        entropy,
        percentile(&vals, 75.0) - percentile(&vals, 25.0),
        kurtosis,
        *vals.last().unwrap(),
        vals.iter().map(|v| (v - mean).abs()).sum::<f64>() / n,
        mean,
        percentile(&vals, 50.0),
        vals[0],
        vals.last().unwrap() - vals[0],
        rmad,
        (energy / n).sqrt(),
        skewness,
        energy, // TotalEnergy: unit pixel area
        uniformity,
        m2,
    ]
}

/// Normalized symmetric co-occurrence matrix for one offset, or None when the
/// offset produces no pixel pairs.
fn cooccurrence(region: &RegionRaster, q: &[u32], ng: usize, offset: (i64, i64)) -> Option<Vec<f64>> {
    let (w, h) = (region.width as i64, region.height as i64);
    let mut counts = vec![0.0f64; ng * ng];
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i0 = (y * w + x) as usize;
            if q[i0] == 0 {
                continue;
            }
            let (nx, ny) = (x + offset.0, y + offset.1);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            let i1 = (ny * w + nx) as usize;
            if q[i1] == 0 {
                continue;
            }
            let (a, b) = (q[i0] as usize - 1, q[i1] as usize - 1);
            counts[a * ng + b] += 1.0;
            counts[b * ng + a] += 1.0;
            total += 2.0;
        }
    }
    if total == 0.0 {
        return None;
    }
    for c in counts.iter_mut() {
        *c /= total;
    }
    Some(counts)
}

fn glcm(region: &RegionRaster, q: &[u32], levels: u32) -> [f64; 24] {
    let ng = levels as usize;
    let mut acc = [0.0f64; 24];
    let mut used = 0usize;
    for offset in OFFSETS {
        if let Some(p) = cooccurrence(region, q, ng, offset) {
            let f = glcm_features_from(&p, ng);
            for (a, v) in acc.iter_mut().zip(f) {
                *a += v;
            }
            used += 1;
        }
    }
    if used > 0 {
        for a in acc.iter_mut() {
            *a /= used as f64;
        }
    }
    acc
}

fn glcm_features_from(p: &[f64], ng: usize) -> [f64; 24] {
    // Levels are 1-based: level of index i is (i + 1).
    let lv = |i: usize| (i + 1) as f64;
    let mut px = vec![0.0f64; ng];
    let mut py = vec![0.0f64; ng];
    for i in 0..ng {
        for j in 0..ng {
            px[i] += p[i * ng + j];
            py[j] += p[i * ng + j];
        }
    }
    let mu_x: f64 = (0..ng).map(|i| lv(i) * px[i]).sum();
    let mu_y: f64 = (0..ng).map(|j| lv(j) * py[j]).sum();
    let sig_x: f64 = (0..ng).map(|i| (lv(i) - mu_x).powi(2) * px[i]).sum::<f64>().sqrt();
    let sig_y: f64 = (0..ng).map(|j| (lv(j) - mu_y).powi(2) * py[j]).sum::<f64>().sqrt();

    // Sum and difference marginals: k in 2..=2Ng and 0..=Ng-1 respectively.
    let mut p_sum = vec![0.0f64; 2 * ng + 1];
    let mut p_diff = vec![0.0f64; ng];
    for i in 0..ng {
        for j in 0..ng {
            p_sum[i + j + 2] += p[i * ng + j];
            p_diff[i.abs_diff(j)] += p[i * ng + j];
        }
    }

    let mut autocorrelation = 0.0;
    let mut cluster_prominence = 0.0;
    let mut cluster_shade = 0.0;
    let mut cluster_tendency = 0.0;
    let mut contrast = 0.0;
    let mut joint_energy = 0.0;
    let mut joint_entropy = 0.0;
    let mut max_prob = 0.0f64;
    let mut sum_squares = 0.0;
    let mut hxy1 = 0.0;
    let mut hxy2 = 0.0;
    for i in 0..ng {
        for j in 0..ng {
            let v = p[i * ng + j];
            let s = lv(i) + lv(j) - mu_x - mu_y;
            autocorrelation += v * lv(i) * lv(j);
            cluster_prominence += v * s.powi(4);
            cluster_shade += v * s.powi(3);
            cluster_tendency += v * s * s;
            contrast += v * (lv(i) - lv(j)).powi(2);
            joint_energy += v * v;
            if v > 0.0 {
                joint_entropy -= v * v.log2();
                hxy1 -= v * (px[i] * py[j]).log2();
            }
            let pp = px[i] * py[j];
            if pp > 0.0 {
                hxy2 -= pp * pp.log2();
            }
            max_prob = max_prob.max(v);
            sum_squares += v * (lv(i) - mu_x).powi(2);
        }
    }

    let correlation = if sig_x * sig_y > 0.0 {
        (autocorrelation - mu_x * mu_y) / (sig_x * sig_y)
    } else {
        1.0 // single gray level
    };

    let diff_avg: f64 = p_diff.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
    let mut diff_entropy = 0.0;
    let mut diff_var = 0.0;
    let mut id = 0.0;
    let mut idm = 0.0;
    let mut idmn = 0.0;
    let mut idn = 0.0;
    let mut inverse_variance = 0.0;
    for (k, &v) in p_diff.iter().enumerate() {
        let kf = k as f64;
        if v > 0.0 {
            diff_entropy -= v * v.log2();
        }
        diff_var += (kf - diff_avg) * (kf - diff_avg) * v;
        id += v / (1.0 + kf);
        idm += v / (1.0 + kf * kf);
        idmn += v / (1.0 + kf * kf / (ng as f64 * ng as f64));
        idn += v / (1.0 + kf / ng as f64);
        if k > 0 {
            inverse_variance += v / (kf * kf);
        }
    }

    let hx: f64 = px.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
    let hy: f64 = py.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
    let imc1 = if hx.max(hy) > 0.0 {
        (joint_entropy - hxy1) / hx.max(hy)
    } else {
        0.0
    };
    let imc2 = (1.0 - (-2.0 * (hxy2 - joint_entropy)).exp()).max(0.0).sqrt();

    let mut sum_avg = 0.0;
    let mut sum_entropy = 0.0;
    for (k, &v) in p_sum.iter().enumerate() {
        sum_avg += k as f64 * v;
        if v > 0.0 {
            sum_entropy -= v * v.log2();
        }
    }

    let mcc = mcc_value(p, &px, &py, ng);

    [
        autocorrelation,
        cluster_prominence,
        cluster_shade,
        cluster_tendency,
        contrast,
        correlation,
        diff_avg,
        diff_entropy,
        diff_var,
        id,
        idm,
        idmn,
        idn,
        imc1,
        imc2,
        inverse_variance,
        mu_x,
        joint_energy,
        joint_entropy,
        mcc,
        max_prob,
        sum_avg,
        sum_entropy,
        sum_squares,
    ]
}

/// Square root of the second-largest eigenvalue of the level-transition
/// matrix Q(i,j) = sum_k p(i,k) p(j,k) / (px(i) py(k)); 1 for a single level.
///
/// Q is similar to the symmetric PSD matrix A A^T with
/// A(i,k) = p(i,k) / sqrt(px(i) py(k)), so the spectrum comes from a
/// symmetric eigensolve, which always converges.
fn mcc_value(p: &[f64], px: &[f64], py: &[f64], ng: usize) -> f64 {
    let present: Vec<usize> = (0..ng).filter(|&i| px[i] > 0.0).collect();
    if present.len() <= 1 {
        return 1.0;
    }
    let m = present.len();
    let a = nalgebra::DMatrix::from_fn(m, m, |r, c| {
        let (i, k) = (present[r], present[c]);
        p[i * ng + k] / (px[i] * py[k]).sqrt()
    });
    let s = &a * a.transpose();
    let mut eig: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eig[1].max(0.0).sqrt()
}

/// Runs of equal levels along one direction; returns (level, length) counts.
fn run_lengths(region: &RegionRaster, q: &[u32], dir: (i64, i64)) -> Vec<(u32, usize)> {
    let (w, h) = (region.width as i64, region.height as i64);
    let at = |x: i64, y: i64| -> u32 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0
        } else {
            q[(y * w + x) as usize]
        }
    };
    let mut runs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = at(x, y);
            if l == 0 {
                continue;
            }
            // A run starts where the previous cell along the direction breaks.
            if at(x - dir.0, y - dir.1) == l {
                continue;
            }
            let mut len = 1usize;
            let (mut cx, mut cy) = (x + dir.0, y + dir.1);
            while at(cx, cy) == l {
                len += 1;
                cx += dir.0;
                cy += dir.1;
            }
            runs.push((l, len));
        }
    }
    runs
}

fn glrlm(region: &RegionRaster, q: &[u32], levels: u32) -> [f64; 16] {
    let np = region.pixel_count() as f64;
    let mut acc = [0.0f64; 16];
    for dir in OFFSETS {
        let runs = run_lengths(region, q, dir);
        let f = rl_features(&runs, levels, np);
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= OFFSETS.len() as f64;
    }
    acc
}

fn rl_features(runs: &[(u32, usize)], levels: u32, np: f64) -> [f64; 16] {
    let nr = runs.len() as f64;
    let max_len = runs.iter().map(|r| r.1).max().unwrap_or(1);
    let ng = levels as usize;
    let mut mat = vec![0.0f64; ng * max_len];
    for &(l, len) in runs {
        mat[(l as usize - 1) * max_len + (len - 1)] += 1.0;
    }
    let mut gln = 0.0;
    for i in 0..ng {
        let row: f64 = (0..max_len).map(|j| mat[i * max_len + j]).sum();
        gln += row * row;
    }
    let mut rln = 0.0;
    for j in 0..max_len {
        let col: f64 = (0..ng).map(|i| mat[i * max_len + j]).sum();
        rln += col * col;
    }
    let mut glv = 0.0;
    let mut rv = 0.0;
    let mut mu_g = 0.0;
    let mut mu_r = 0.0;
    for &(l, len) in runs {
        mu_g += l as f64 / nr;
        mu_r += len as f64 / nr;
    }
    let mut entropy = 0.0;
    for i in 0..ng {
        for j in 0..max_len {
            let p = mat[i * max_len + j] / nr;
            if p > 0.0 {
                entropy -= p * p.log2();
                glv += p * ((i + 1) as f64 - mu_g).powi(2);
                rv += p * ((j + 1) as f64 - mu_r).powi(2);
            }
        }
    }
    let sum_over = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
        runs.iter()
            .map(|&(l, len)| f(l as f64, len as f64))
            .sum::<f64>()
            / nr
    };
    [
        gln / nr,
        gln / (nr * nr),
        glv,
        sum_over(&|l, _| l * l),
        sum_over(&|_, r| r * r),
        sum_over(&|l, r| l * l * r * r),
        sum_over(&|l, r| r * r / (l * l)),
        sum_over(&|l, _| 1.0 / (l * l)),
        entropy,
        rln / nr,
        rln / (nr * nr),
        nr / np,
        rv,
        sum_over(&|_, r| 1.0 / (r * r)),
        sum_over(&|l, r| l * l / (r * r)),
        sum_over(&|l, r| 1.0 / (l * l * r * r)),
    ]
}

/// 8-connected zones of equal level; returns (level, size) per zone.
fn zones(region: &RegionRaster, q: &[u32]) -> Vec<(u32, usize)> {
    let (w, h) = (region.width as i64, region.height as i64);
    let mut seen = vec![false; q.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..q.len() {
        if q[start] == 0 || seen[start] {
            continue;
        }
        let level = q[start];
        let mut size = 0usize;
        stack.push(start);
        seen[start] = true;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for (dx, dy) in EIGHT_NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let ni = (ny * w + nx) as usize;
                if q[ni] == level && !seen[ni] {
                    seen[ni] = true;
                    stack.push(ni);
                }
            }
        }
        out.push((level, size));
    }
    out
}

fn glszm(region: &RegionRaster, q: &[u32], levels: u32) -> [f64; 16] {
    let np = region.pixel_count() as f64;
    let zs = zones(region, q);
    let nz = zs.len() as f64;
    let ng = levels as usize;
    let max_size = zs.iter().map(|z| z.1).max().unwrap_or(1);
    let mut mat = vec![0.0f64; ng * max_size];
    for &(l, s) in &zs {
        mat[(l as usize - 1) * max_size + (s - 1)] += 1.0;
    }
    let mut gln = 0.0;
    for i in 0..ng {
        let row: f64 = (0..max_size).map(|j| mat[i * max_size + j]).sum();
        gln += row * row;
    }
    let mut szn = 0.0;
    for j in 0..max_size {
        let col: f64 = (0..ng).map(|i| mat[i * max_size + j]).sum();
        szn += col * col;
    }
    let mu_g: f64 = zs.iter().map(|&(l, _)| l as f64).sum::<f64>() / nz;
    let mu_s: f64 = zs.iter().map(|&(_, s)| s as f64).sum::<f64>() / nz;
    let mut glv = 0.0;
    let mut zv = 0.0;
    let mut entropy = 0.0;
    for i in 0..ng {
        for j in 0..max_size {
            let p = mat[i * max_size + j] / nz;
            if p > 0.0 {
                entropy -= p * p.log2();
                glv += p * ((i + 1) as f64 - mu_g).powi(2);
                zv += p * ((j + 1) as f64 - mu_s).powi(2);
            }
        }
    }
    let sum_over = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
        zs.iter().map(|&(l, s)| f(l as f64, s as f64)).sum::<f64>() / nz
    };
    [
        gln / nz,
        gln / (nz * nz),
        glv,
        sum_over(&|l, _| l * l),
        sum_over(&|_, s| s * s),
        sum_over(&|l, s| l * l * s * s),
        sum_over(&|l, s| s * s / (l * l)),
        sum_over(&|l, _| 1.0 / (l * l)),
        szn / nz,
        szn / (nz * nz),
        sum_over(&|_, s| 1.0 / (s * s)),
        sum_over(&|l, s| l * l / (s * s)),
        sum_over(&|l, s| 1.0 / (l * l * s * s)),
        entropy,
        nz / np,
        zv,
    ]
}

/// Dependence per pixel: 1 + number of equal-level in-region 8-neighbors.
fn dependences(region: &RegionRaster, q: &[u32]) -> Vec<(u32, usize)> {
    let (w, h) = (region.width as i64, region.height as i64);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if q[i] == 0 {
                continue;
            }
            let mut dep = 1usize;
            for (dx, dy) in EIGHT_NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                if q[(ny * w + nx) as usize] == q[i] {
                    dep += 1;
                }
            }
            out.push((q[i], dep));
        }
    }
    out
}

fn gldm(region: &RegionRaster, q: &[u32], levels: u32) -> [f64; 14] {
    let deps = dependences(region, q);
    let nz = deps.len() as f64; // one entry per region pixel
    let ng = levels as usize;
    let max_dep = deps.iter().map(|d| d.1).max().unwrap_or(1);
    let mut mat = vec![0.0f64; ng * max_dep];
    for &(l, d) in &deps {
        mat[(l as usize - 1) * max_dep + (d - 1)] += 1.0;
    }
    let mut gln = 0.0;
    for i in 0..ng {
        let row: f64 = (0..max_dep).map(|j| mat[i * max_dep + j]).sum();
        gln += row * row;
    }
    let mut dn = 0.0;
    for j in 0..max_dep {
        let col: f64 = (0..ng).map(|i| mat[i * max_dep + j]).sum();
        dn += col * col;
    }
    let mu_g: f64 = deps.iter().map(|&(l, _)| l as f64).sum::<f64>() / nz;
    let mu_d: f64 = deps.iter().map(|&(_, d)| d as f64).sum::<f64>() / nz;
    let mut glv = 0.0;
    let mut dv = 0.0;
    let mut entropy = 0.0;
    for i in 0..ng {
        for j in 0..max_dep {
            let p = mat[i * max_dep + j] / nz;
            if p > 0.0 {
                entropy -= p * p.log2();
                glv += p * ((i + 1) as f64 - mu_g).powi(2);
                dv += p * ((j + 1) as f64 - mu_d).powi(2);
            }
        }
    }
    let sum_over = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
        deps.iter().map(|&(l, d)| f(l as f64, d as f64)).sum::<f64>() / nz
    };
    [
        entropy,
        dn / nz,
        dn / (nz * nz),
        dv,
        gln / nz,
        glv,
        sum_over(&|l, _| l * l),
        sum_over(&|_, d| d * d),
        sum_over(&|l, d| l * l * d * d),
        sum_over(&|l, d| d * d / (l * l)),
        sum_over(&|l, _| 1.0 / (l * l)),
        sum_over(&|_, d| 1.0 / (d * d)),
        sum_over(&|l, d| l * l / (d * d)),
        sum_over(&|l, d| 1.0 / (l * l * d * d)),
    ]
}

fn ngtdm(region: &RegionRaster, q: &[u32], levels: u32) -> [f64; 5] {
    let (w, h) = (region.width as i64, region.height as i64);
    let ng = levels as usize;
    let mut n = vec![0.0f64; ng + 1];
    let mut s = vec![0.0f64; ng + 1];
    let mut np = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if q[i] == 0 {
                continue;
            }
            np += 1.0;
            let mut sum = 0.0;
            let mut count = 0.0;
            for (dx, dy) in EIGHT_NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let l = q[(ny * w + nx) as usize];
                if l > 0 {
                    sum += l as f64;
                    count += 1.0;
                }
            }
            n[q[i] as usize] += 1.0;
            if count > 0.0 {
                s[q[i] as usize] += (q[i] as f64 - sum / count).abs();
            }
        }
    }
    let p: Vec<f64> = n.iter().map(|&c| c / np).collect();
    let present: Vec<usize> = (1..=ng).filter(|&i| n[i] > 0.0).collect();
    let ngp = present.len() as f64;
    let sum_ps: f64 = present.iter().map(|&i| p[i] * s[i]).sum();
    let sum_s: f64 = present.iter().map(|&i| s[i]).sum();

    let coarseness = if sum_ps > 0.0 { 1.0 / sum_ps } else { 1e6 };

    let contrast = if ngp > 1.0 {
        let mut pair = 0.0;
        for &i in &present {
            for &j in &present {
                pair += p[i] * p[j] * (i as f64 - j as f64).powi(2);
            }
        }
        pair / (ngp * (ngp - 1.0)) * (sum_s / np)
    } else {
        0.0
    };

    let mut busy_den = 0.0;
    let mut complexity = 0.0;
    let mut strength_num = 0.0;
    for &i in &present {
        for &j in &present {
            let (fi, fj) = (i as f64, j as f64);
            busy_den += (fi * p[i] - fj * p[j]).abs();
            complexity += (fi - fj).abs() * (p[i] * s[i] + p[j] * s[j]) / (p[i] + p[j]);
            strength_num += (p[i] + p[j]) * (fi - fj) * (fi - fj);
        }
    }
    let busyness = if busy_den > 0.0 { sum_ps / busy_den } else { 0.0 };
    let complexity = complexity / np;
    let strength = if sum_s > 0.0 { strength_num / sum_s } else { 0.0 };

    [busyness, coarseness, complexity, contrast, strength]
}

/// Uniform local binary pattern histogram, 8 neighbors at radius 1, over
/// pixels whose full 8-neighborhood lies inside the region. Bins 0..=8 count
/// uniform patterns by number of set bits; bin 9 pools non-uniform patterns.
pub fn lbp_histogram(region: &RegionRaster) -> [f64; 10] {
    let (w, h) = (region.width as i64, region.height as i64);
    let mut hist = [0.0f64; 10];
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let center = (y * w + x) as usize;
            if !region.mask[center] {
                continue;
            }
            let mut bits = [false; 8];
            let mut complete = true;
            for (k, (dx, dy)) in EIGHT_NEIGHBORS.iter().enumerate() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h || !region.mask[(ny * w + nx) as usize] {
                    complete = false;
                    break;
                }
                bits[k] = region.gray[(ny * w + nx) as usize] >= region.gray[center];
            }
            if !complete {
                continue;
            }
            let transitions = (0..8).filter(|&k| bits[k] != bits[(k + 1) % 8]).count();
            let ones = bits.iter().filter(|&&b| b).count();
            let bin = if transitions <= 2 { ones } else { 9 };
            hist[bin] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        for v in hist.iter_mut() {
            *v /= total;
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn name_index(name: &str) -> usize {
        let mut idx = 0;
        for (family, names) in [
            ("firstorder", &FIRSTORDER_NAMES[..]),
            ("glcm", &GLCM_NAMES[..]),
            ("glrlm", &GLRLM_NAMES[..]),
            ("glszm", &GLSZM_NAMES[..]),
            ("gldm", &GLDM_NAMES[..]),
            ("ngtdm", &NGTDM_NAMES[..]),
        ] {
            for n in names {
                if format!("{family}_{n}") == name {
                    return idx;
                }
                idx += 1;
            }
        }
        panic!("unknown feature {name}");
    }

    #[test]
    fn constant_region_degenerates() {
        let region = RegionRaster::from_grid(4, 4, vec![7.0; 16]);
        let f = extract_texture(&region, 32, false).unwrap();
        assert_eq!(f.len(), TEXTURE_COUNT);
        assert_eq!(f[name_index("firstorder_Variance")], 0.0);
        assert_eq!(f[name_index("firstorder_Entropy")], 0.0);
        assert_eq!(f[name_index("firstorder_Uniformity")], 1.0);
        assert_eq!(f[name_index("glcm_Contrast")], 0.0);
        assert_eq!(f[name_index("glcm_JointEnergy")], 1.0);
        assert_eq!(f[name_index("ngtdm_Contrast")], 0.0);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn two_by_two_stripes_horizontal_contrast() {
        // [[0,1],[0,1]] at Ng=2: the horizontal co-occurrence pairs only
        // levels (1,2)/(2,1), so directional contrast is exactly 1.
        let region = RegionRaster::from_grid(2, 2, vec![0.0, 1.0, 0.0, 1.0]);
        let q = region.quantized(2).unwrap();
        let p = cooccurrence(&region, &q, 2, (1, 0)).unwrap();
        let f = glcm_features_from(&p, 2);
        assert_relative_eq!(f[4], 1.0, epsilon = 1e-12); // Contrast
        assert_relative_eq!(p[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(p[2], 0.5, epsilon = 1e-12);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[3], 0.0);
    }

    /// Per-offset values frozen from an independent co-occurrence reference
    /// computation (scikit-image graycomatrix/graycoprops, 4 levels,
    /// distance 1, symmetric, normalized).
    #[test]
    fn directional_glcm_matches_external_reference() {
        let grid: [f64; 64] = [
            2., 0., 3., 1., 0., 3., 2., 2., //
            3., 1., 3., 1., 2., 2., 0., 0., //
            0., 2., 2., 3., 2., 0., 3., 3., //
            2., 2., 0., 0., 1., 1., 0., 3., //
            1., 2., 0., 1., 0., 2., 3., 0., //
            2., 0., 1., 0., 2., 1., 1., 1., //
            1., 1., 2., 3., 1., 0., 0., 0., //
            0., 0., 0., 2., 3., 3., 2., 2.,
        ];
        let region = RegionRaster::from_grid(8, 8, grid.to_vec());
        // Values 0..=3 at Ng = 4 quantize to themselves.
        let q = region.quantized(4).unwrap();
        let horizontal = cooccurrence(&region, &q, 4, (1, 0)).unwrap();
        let f = glcm_features_from(&horizontal, 4);
        assert_relative_eq!(f[4], 2.214_285_714_285_715, epsilon = 1e-12); // Contrast
        assert_relative_eq!(f[5], 0.095_597_811_930_190_18, epsilon = 1e-9); // Correlation
        assert_relative_eq!(f[17], 0.070_312_5, epsilon = 1e-12); // JointEnergy
        assert_relative_eq!(f[9], 0.584_821_428_571_428_6, epsilon = 1e-12); // Id
        assert_relative_eq!(f[10], 0.535_714_285_714_285_8, epsilon = 1e-12); // Idm
        assert_relative_eq!(f[6], 1.142_857_142_857_143, epsilon = 1e-12); // DifferenceAverage
        let vertical = cooccurrence(&region, &q, 4, (0, -1)).unwrap();
        let fv = glcm_features_from(&vertical, 4);
        assert_relative_eq!(fv[4], 2.910_714_285_714_286, epsilon = 1e-12);
    }

    /// Hand-traced 1x4 strip [0,0,1,1] at Ng = 2 (levels 1,1,2,2).
    ///
    /// Horizontal runs: (1, len 2), (2, len 2). The other three directions
    /// see four runs of length 1 each. Zones: two 8-connected zones of size
    /// 2. Dependences: every cell has exactly one equal-level neighbor, so
    /// all four cells carry dependence 2.
    #[test]
    fn strip_matrices_match_hand_trace() {
        let region = RegionRaster::from_grid(4, 1, vec![0.0, 0.0, 1.0, 1.0]);
        let f = extract_texture(&region, 2, false).unwrap();
        let idx = |name: &str| name_index(name);

        // GLRLM averaged over directions: horizontal (0.25, 4, 0.5, 1, 2.5)
        // and three single-cell directions (1, 1, 1, 2, 2.5).
        assert_relative_eq!(f[idx("glrlm_ShortRunEmphasis")], (0.25 + 3.0) / 4.0);
        assert_relative_eq!(f[idx("glrlm_LongRunEmphasis")], (4.0 + 3.0) / 4.0);
        assert_relative_eq!(f[idx("glrlm_RunPercentage")], (0.5 + 3.0) / 4.0);
        assert_relative_eq!(f[idx("glrlm_GrayLevelNonUniformity")], (1.0 + 6.0) / 4.0);
        assert_relative_eq!(f[idx("glrlm_HighGrayLevelRunEmphasis")], 2.5);

        // GLSZM: two zones of size 2.
        assert_relative_eq!(f[idx("glszm_SmallAreaEmphasis")], 0.25);
        assert_relative_eq!(f[idx("glszm_LargeAreaEmphasis")], 4.0);
        assert_relative_eq!(f[idx("glszm_ZonePercentage")], 0.5);

        // GLDM: four entries of dependence 2.
        assert_relative_eq!(f[idx("gldm_LargeDependenceEmphasis")], 4.0);
        assert_relative_eq!(f[idx("gldm_DependenceEntropy")], 1.0);

        // NGTDM: s = (0.5, 0.5), n = (2, 2), so coarseness = 2 and
        // contrast = (0.5 / 2) * (1 / 4) = 0.0625.
        assert_relative_eq!(f[idx("ngtdm_Coarseness")], 2.0);
        assert_relative_eq!(f[idx("ngtdm_Contrast")], 0.0625);
    }

    #[test]
    fn single_pixel_region_is_finite() {
        let region = RegionRaster::from_grid(1, 1, vec![42.0]);
        let f = extract_texture(&region, 32, true).unwrap();
        assert_eq!(f.len(), TEXTURE_COUNT + 10);
        assert!(f.iter().all(|v| v.is_finite()));
        // No co-occurrence pairs at all: GLCM slots are zero.
        assert_eq!(f[name_index("glcm_JointEnergy")], 0.0);
        // One run of length 1 in each direction.
        assert_relative_eq!(f[name_index("glrlm_RunPercentage")], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn translation_invariance() {
        // The same pixel pattern embedded at two positions of a larger grid.
        let pattern = [3.0, 9.0, 1.0, 4.0, 9.0, 2.0, 8.0, 8.0, 5.0];
        let build = |ox: usize, oy: usize| {
            let mut mask = vec![false; 8 * 8];
            let mut gray = vec![0.0; 8 * 8];
            for y in 0..3 {
                for x in 0..3 {
                    mask[(y + oy) * 8 + (x + ox)] = true;
                    gray[(y + oy) * 8 + (x + ox)] = pattern[y * 3 + x];
                }
            }
            RegionRaster {
                width: 8,
                height: 8,
                mask,
                gray,
            }
        };
        let a = extract_texture(&build(0, 0), 8, true).unwrap();
        let b = extract_texture(&build(4, 3), 8, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masked_region_ignores_outside_values() {
        let mut region = RegionRaster::from_grid(3, 3, vec![5.0; 9]);
        region.mask[4] = false;
        region.gray[4] = 1000.0;
        let f = extract_texture(&region, 4, false).unwrap();
        assert_eq!(f[name_index("firstorder_Maximum")], 5.0);
        assert_eq!(f[name_index("firstorder_Variance")], 0.0);
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(percentile(&v, 50.0), 2.5, epsilon = 1e-12);
        assert_relative_eq!(percentile(&v, 25.0), 1.75, epsilon = 1e-12);
        assert_relative_eq!(percentile(&v, 0.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(percentile(&v, 100.0), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_region_rejected() {
        let region = RegionRaster {
            width: 2,
            height: 2,
            mask: vec![false; 4],
            gray: vec![0.0; 4],
        };
        assert!(extract_texture(&region, 32, false).is_err());
    }

    #[test]
    fn lbp_flat_region_all_ones_bin() {
        // On a constant region every neighbor compares >= center: 8 ones,
        // zero transitions, so everything lands in bin 8.
        let region = RegionRaster::from_grid(4, 4, vec![3.0; 16]);
        let hist = lbp_histogram(&region);
        assert_relative_eq!(hist[8], 1.0, epsilon = 1e-12);
    }
}
