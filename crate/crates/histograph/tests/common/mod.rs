//! Independent brute-force oracles shared by the integration suites.
//!
//! Everything here recomputes expected values from first principles with
//! naive loops over pixel pairs, runs, and zones; none of it calls into the
//! implementation paths it checks.

use histograph::features::RegionRaster;

const OFFSETS: [(i64, i64); 4] = [(1, 0), (1, -1), (0, -1), (-1, -1)];
const NEIGHBORS8: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

/// Region cells as (x, y, gray) triples.
fn cells(region: &RegionRaster) -> Vec<(i64, i64, f64)> {
    let mut out = Vec::new();
    for y in 0..region.height {
        for x in 0..region.width {
            if region.mask[y * region.width + x] {
                out.push((x as i64, y as i64, region.gray[y * region.width + x]));
            }
        }
    }
    out
}

/// 1-based quantized level per cell, region min-max binning.
fn quantized_cells(region: &RegionRaster, ng: u32) -> Vec<(i64, i64, u32)> {
    let cs = cells(region);
    let min = cs.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let max = cs.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    cs.iter()
        .map(|&(x, y, v)| {
            let level = if max <= min {
                0
            } else {
                (((v - min) * ng as f64 / (max - min)) as u32).min(ng - 1)
            };
            (x, y, level + 1)
        })
        .collect()
}

fn level_at(cells: &[(i64, i64, u32)], x: i64, y: i64) -> u32 {
    cells
        .iter()
        .find(|&&(cx, cy, _)| cx == x && cy == y)
        .map(|&(_, _, l)| l)
        .unwrap_or(0)
}

fn sorted_values(region: &RegionRaster) -> Vec<f64> {
    let mut v: Vec<f64> = cells(region).iter().map(|c| c.2).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

fn pct(sorted: &[f64], p: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// All 93 texture features in catalog order, recomputed naively.
pub fn texture_oracle(region: &RegionRaster, ng: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(93);
    out.extend(firstorder_oracle(region, ng));
    out.extend(glcm_oracle(region, ng));
    out.extend(glrlm_oracle(region, ng));
    out.extend(glszm_oracle(region, ng));
    out.extend(gldm_oracle(region, ng));
    out.extend(ngtdm_oracle(region, ng));
    out
}

fn firstorder_oracle(region: &RegionRaster, ng: u32) -> Vec<f64> {
    let v = sorted_values(region);
    let n = v.len() as f64;
    let mean: f64 = v.iter().sum::<f64>() / n;
    let central = |k: i32| v.iter().map(|&x| (x - mean).powi(k)).sum::<f64>() / n;
    let energy: f64 = v.iter().map(|&x| x * x).sum();
    let p10 = pct(&v, 10.0);
    let p90 = pct(&v, 90.0);
    let robust: Vec<f64> = v.iter().copied().filter(|&x| x >= p10 && x <= p90).collect();
    let rmean = robust.iter().sum::<f64>() / robust.len() as f64;

    // Histogram over quantized levels.
    let q = quantized_cells(region, ng);
    let mut hist = std::collections::BTreeMap::new();
    for &(_, _, l) in &q {
        *hist.entry(l).or_insert(0.0f64) += 1.0;
    }
    let entropy: f64 = hist.values().map(|&c| -(c / n) * (c / n).log2()).sum();
    let uniformity: f64 = hist.values().map(|&c| (c / n) * (c / n)).sum();

    let m2 = central(2);
    vec![
        p10,
        p90,
        energy,
        entropy,
        pct(&v, 75.0) - pct(&v, 25.0),
        if m2 > 0.0 { central(4) / (m2 * m2) } else { 0.0 },
        *v.last().unwrap(),
        v.iter().map(|&x| (x - mean).abs()).sum::<f64>() / n,
        mean,
        pct(&v, 50.0),
        v[0],
        v.last().unwrap() - v[0],
        robust.iter().map(|&x| (x - rmean).abs()).sum::<f64>() / robust.len() as f64,
        (energy / n).sqrt(),
        if m2 > 0.0 { central(3) / m2.powf(1.5) } else { 0.0 },
        energy,
        uniformity,
        m2,
    ]
}

/// Per-offset normalized symmetric co-occurrence built by scanning all cell
/// pairs; None when the offset has no pairs.
fn cooccurrence_oracle(
    q: &[(i64, i64, u32)],
    offset: (i64, i64),
    ng: usize,
) -> Option<Vec<Vec<f64>>> {
    let mut counts = vec![vec![0.0f64; ng]; ng];
    let mut total = 0.0;
    for &(x0, y0, l0) in q {
        for &(x1, y1, l1) in q {
            if x1 - x0 == offset.0 && y1 - y0 == offset.1 {
                counts[l0 as usize - 1][l1 as usize - 1] += 1.0;
                counts[l1 as usize - 1][l0 as usize - 1] += 1.0;
                total += 2.0;
            }
        }
    }
    if total == 0.0 {
        return None;
    }
    for row in counts.iter_mut() {
        for c in row.iter_mut() {
            *c /= total;
        }
    }
    Some(counts)
}

fn glcm_oracle(region: &RegionRaster, ng: u32) -> Vec<f64> {
    let q = quantized_cells(region, ng);
    let ng = ng as usize;
    let mut acc = vec![0.0f64; 24];
    let mut used = 0;
    for offset in OFFSETS {
        let Some(p) = cooccurrence_oracle(&q, offset, ng) else {
            continue;
        };
        used += 1;
        let lv = |i: usize| (i + 1) as f64;
        let px: Vec<f64> = (0..ng).map(|i| p[i].iter().sum()).collect();
        let py: Vec<f64> = (0..ng).map(|j| (0..ng).map(|i| p[i][j]).sum()).collect();
        let mu_x: f64 = (0..ng).map(|i| lv(i) * px[i]).sum();
        let mu_y: f64 = (0..ng).map(|j| lv(j) * py[j]).sum();
        let sig_x = (0..ng)
            .map(|i| (lv(i) - mu_x).powi(2) * px[i])
            .sum::<f64>()
            .sqrt();
        let sig_y = (0..ng)
            .map(|j| (lv(j) - mu_y).powi(2) * py[j])
            .sum::<f64>()
            .sqrt();
        let sum2 = |f: &dyn Fn(usize, usize, f64) -> f64| -> f64 {
            let mut s = 0.0;
            for i in 0..ng {
                for j in 0..ng {
                    s += f(i, j, p[i][j]);
                }
            }
            s
        };
        let autocorr = sum2(&|i, j, v| v * lv(i) * lv(j));
        let joint_entropy = sum2(&|_, _, v| if v > 0.0 { -v * v.log2() } else { 0.0 });
        // Difference and sum marginals.
        let mut p_diff = vec![0.0f64; ng];
        let mut p_sum = vec![0.0f64; 2 * ng + 1];
        for i in 0..ng {
            for j in 0..ng {
                p_diff[i.abs_diff(j)] += p[i][j];
                p_sum[i + j + 2] += p[i][j];
            }
        }
        let da: f64 = p_diff.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
        let hx: f64 = px.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
        let hy: f64 = py.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
        let hxy1 = sum2(&|i, j, v| {
            if v > 0.0 {
                -v * (px[i] * py[j]).log2()
            } else {
                0.0
            }
        });
        let hxy2 = sum2(&|i, j, _| {
            let pp = px[i] * py[j];
            if pp > 0.0 {
                -pp * pp.log2()
            } else {
                0.0
            }
        });

        let f = [
            autocorr,
            sum2(&|i, j, v| v * (lv(i) + lv(j) - mu_x - mu_y).powi(4)),
            sum2(&|i, j, v| v * (lv(i) + lv(j) - mu_x - mu_y).powi(3)),
            sum2(&|i, j, v| v * (lv(i) + lv(j) - mu_x - mu_y).powi(2)),
            sum2(&|i, j, v| v * (lv(i) - lv(j)).powi(2)),
            if sig_x * sig_y > 0.0 {
                (autocorr - mu_x * mu_y) / (sig_x * sig_y)
            } else {
                1.0
            },
            da,
            p_diff
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| -v * v.log2())
                .sum(),
            p_diff
                .iter()
                .enumerate()
                .map(|(k, &v)| (k as f64 - da) * (k as f64 - da) * v)
                .sum(),
            p_diff
                .iter()
                .enumerate()
                .map(|(k, &v)| v / (1.0 + k as f64))
                .sum(),
            p_diff
                .iter()
                .enumerate()
                .map(|(k, &v)| v / (1.0 + (k * k) as f64))
                .sum(),
            p_diff
                .iter()
                .enumerate()
                .map(|(k, &v)| v / (1.0 + (k * k) as f64 / (ng * ng) as f64))
                .sum(),
            p_diff
                .iter()
                .enumerate()
                .map(|(k, &v)| v / (1.0 + k as f64 / ng as f64))
                .sum(),
            if hx.max(hy) > 0.0 {
                (joint_entropy - hxy1) / hx.max(hy)
            } else {
                0.0
            },
            (1.0 - (-2.0 * (hxy2 - joint_entropy)).exp()).max(0.0).sqrt(),
            p_diff
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &v)| v / (k * k) as f64)
                .sum(),
            mu_x,
            sum2(&|_, _, v| v * v),
            joint_entropy,
            mcc_oracle(&p, &px, &py, ng),
            p.iter().flatten().cloned().fold(0.0, f64::max),
            p_sum.iter().enumerate().map(|(k, &v)| k as f64 * v).sum(),
            p_sum
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| -v * v.log2())
                .sum(),
            sum2(&|i, _, v| v * (lv(i) - mu_x).powi(2)),
        ];
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    if used > 0 {
        for a in acc.iter_mut() {
            *a /= used as f64;
        }
    }
    acc
}

/// Second-largest eigenvalue of the symmetric similarity transform of Q via
/// a hand-written cyclic Jacobi sweep.
fn mcc_oracle(p: &[Vec<f64>], px: &[f64], py: &[f64], ng: usize) -> f64 {
    let present: Vec<usize> = (0..ng).filter(|&i| px[i] > 0.0).collect();
    if present.len() <= 1 {
        return 1.0;
    }
    let m = present.len();
    // S = A A^T with A(i,k) = p(i,k) / sqrt(px(i) py(k)).
    let a: Vec<Vec<f64>> = present
        .iter()
        .map(|&i| {
            present
                .iter()
                .map(|&k| p[i][k] / (px[i] * py[k]).sqrt())
                .collect()
        })
        .collect();
    let mut s = vec![vec![0.0f64; m]; m];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                s[i][j] += a[i][k] * a[j][k];
            }
        }
    }
    let eig = jacobi_eigenvalues(s);
    let mut eig = eig;
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eig[1].max(0.0).sqrt()
}

fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let scale: f64 = a
        .iter()
        .flatten()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Runs per direction as (level, length) pairs, found by walking lines.
fn runs_oracle(q: &[(i64, i64, u32)], dir: (i64, i64)) -> Vec<(u32, usize)> {
    let mut runs = Vec::new();
    for &(x, y, l) in q {
        // Start of a run: predecessor differs or is absent.
        if level_at(q, x - dir.0, y - dir.1) == l {
            continue;
        }
        let mut len = 1;
        let (mut cx, mut cy) = (x + dir.0, y + dir.1);
        while level_at(q, cx, cy) == l {
            len += 1;
            cx += dir.0;
            cy += dir.1;
        }
        runs.push((l, len));
    }
    runs
}

fn sixteen_rl_features(items: &[(u32, usize)], np: f64) -> Vec<f64> {
    let nr = items.len() as f64;
    let mut by_level: std::collections::BTreeMap<u32, f64> = Default::default();
    let mut by_len: std::collections::BTreeMap<usize, f64> = Default::default();
    let mut by_pair: std::collections::BTreeMap<(u32, usize), f64> = Default::default();
    for &(l, r) in items {
        *by_level.entry(l).or_default() += 1.0;
        *by_len.entry(r).or_default() += 1.0;
        *by_pair.entry((l, r)).or_default() += 1.0;
    }
    let gln: f64 = by_level.values().map(|&c| c * c).sum();
    let rln: f64 = by_len.values().map(|&c| c * c).sum();
    let mu_g: f64 = items.iter().map(|&(l, _)| l as f64).sum::<f64>() / nr;
    let mu_r: f64 = items.iter().map(|&(_, r)| r as f64).sum::<f64>() / nr;
    let glv: f64 = items
        .iter()
        .map(|&(l, _)| (l as f64 - mu_g) * (l as f64 - mu_g))
        .sum::<f64>()
        / nr;
    let rv: f64 = items
        .iter()
        .map(|&(_, r)| (r as f64 - mu_r) * (r as f64 - mu_r))
        .sum::<f64>()
        / nr;
    let entropy: f64 = by_pair
        .values()
        .map(|&c| {
            let p = c / nr;
            -p * p.log2()
        })
        .sum();
    let mean_of = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
        items.iter().map(|&(l, r)| f(l as f64, r as f64)).sum::<f64>() / nr
    };
    vec![
        gln / nr,
        gln / (nr * nr),
        glv,
        mean_of(&|l, _| l * l),
        mean_of(&|_, r| r * r),
        mean_of(&|l, r| l * l * r * r),
        mean_of(&|l, r| r * r / (l * l)),
        mean_of(&|l, _| 1.0 / (l * l)),
        entropy,
        rln / nr,
        rln / (nr * nr),
        nr / np,
        rv,
        mean_of(&|_, r| 1.0 / (r * r)),
        mean_of(&|l, r| l * l / (r * r)),
        mean_of(&|l, r| 1.0 / (l * l * r * r)),
    ]
}

fn glrlm_oracle(region: &RegionRaster, ng: u32) -> Vec<f64> {
    let q = quantized_cells(region, ng);
    let np = q.len() as f64;
    let mut acc = vec![0.0f64; 16];
    for dir in OFFSETS {
        let f = sixteen_rl_features(&runs_oracle(&q, dir), np);
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= OFFSETS.len() as f64;
    }
    acc
}

/// 8-connected equal-level zones by repeated closure growth.
fn zones_oracle(q: &[(i64, i64, u32)]) -> Vec<(u32, usize)> {
    let mut assigned = vec![false; q.len()];
    let mut zones = Vec::new();
    for start in 0..q.len() {
        if assigned[start] {
            continue;
        }
        let level = q[start].2;
        let mut members = vec![start];
        assigned[start] = true;
        loop {
            let mut grew = false;
            for idx in 0..q.len() {
                if assigned[idx] || q[idx].2 != level {
                    continue;
                }
                let touches = members.iter().any(|&m| {
                    NEIGHBORS8
                        .iter()
                        .any(|&(dx, dy)| q[m].0 + dx == q[idx].0 && q[m].1 + dy == q[idx].1)
                });
                if touches {
                    members.push(idx);
                    assigned[idx] = true;
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
        zones.push((level, members.len()));
    }
    zones
}

fn glszm_oracle(region: &RegionRaster, ng: u32) -> Vec<f64> {
    let q = quantized_cells(region, ng);
    let np = q.len() as f64;
    let zs = zones_oracle(&q);
    let f = sixteen_rl_features(&zs, np);
    // Reorder: the zone table shares the run-length shapes but the catalog
    // interleaves them differently.
    vec![
        f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[9], f[10], f[13], f[14], f[15], f[8],
        f[11], f[12],
    ]
}

fn gldm_oracle(region: &RegionRaster, ng: u32) -> Vec<f64> {
    let q = quantized_cells(region, ng);
    let np = q.len() as f64;
    let deps: Vec<(u32, usize)> = q
        .iter()
        .map(|&(x, y, l)| {
            let mut d = 1;
            for (dx, dy) in NEIGHBORS8 {
                if level_at(&q, x + dx, y + dy) == l {
                    d += 1;
                }
            }
            (l, d)
        })
        .collect();
    let f = sixteen_rl_features(&deps, np);
    // Map the shared shapes onto the dependence-family order.
    vec![
        f[8],          // DependenceEntropy
        f[9],          // DependenceNonUniformity
        f[10],         // DependenceNonUniformityNormalized
        f[12],         // DependenceVariance
        f[0],          // GrayLevelNonUniformity
        f[2],          // GrayLevelVariance
        f[3],          // HighGrayLevelEmphasis
        f[4],          // LargeDependenceEmphasis
        f[5],          // LargeDependenceHighGrayLevelEmphasis
        f[6],          // LargeDependenceLowGrayLevelEmphasis
        f[7],          // LowGrayLevelEmphasis
        f[13],         // SmallDependenceEmphasis
        f[14],         // SmallDependenceHighGrayLevelEmphasis
        f[15],         // SmallDependenceLowGrayLevelEmphasis
    ]
}

fn ngtdm_oracle(region: &RegionRaster, ng: u32) -> Vec<f64> {
    let q = quantized_cells(region, ng);
    let np = q.len() as f64;
    let ng = ng as usize;
    let mut n = vec![0.0f64; ng + 1];
    let mut s = vec![0.0f64; ng + 1];
    for &(x, y, l) in &q {
        let mut sum = 0.0;
        let mut count = 0.0;
        for (dx, dy) in NEIGHBORS8 {
            let nl = level_at(&q, x + dx, y + dy);
            if nl > 0 {
                sum += nl as f64;
                count += 1.0;
            }
        }
        n[l as usize] += 1.0;
        if count > 0.0 {
            s[l as usize] += (l as f64 - sum / count).abs();
        }
    }
    let present: Vec<usize> = (1..=ng).filter(|&i| n[i] > 0.0).collect();
    let ngp = present.len() as f64;
    let p: Vec<f64> = n.iter().map(|&c| c / np).collect();
    let sum_ps: f64 = present.iter().map(|&i| p[i] * s[i]).sum();
    let sum_s: f64 = present.iter().map(|&i| s[i]).sum();
    let coarseness = if sum_ps > 0.0 { 1.0 / sum_ps } else { 1e6 };
    let contrast = if ngp > 1.0 {
        let mut pair = 0.0;
        for &i in &present {
            for &j in &present {
                pair += p[i] * p[j] * (i as f64 - j as f64) * (i as f64 - j as f64);
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
    vec![
        if busy_den > 0.0 { sum_ps / busy_den } else { 0.0 },
        coarseness,
        complexity / np,
        contrast,
        if sum_s > 0.0 { strength_num / sum_s } else { 0.0 },
    ]
}

/// Relative comparison with an absolute floor for near-zero values.
pub fn close_rel(a: f64, b: f64, rel: f64) -> bool {
    let diff = (a - b).abs();
    diff <= rel || diff <= rel * a.abs().max(b.abs())
}
