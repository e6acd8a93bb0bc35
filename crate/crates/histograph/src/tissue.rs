//! Foreground tissue detection: Otsu threshold on the saturation channel
//! followed by morphological cleanup and small-component removal.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{convert_color, ColorSpace, RgbImage};

/// Binary foreground mask aligned with a source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl TissueMask {
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    /// Write as an 8-bit PNG with foreground = 255.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let data: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let buf: image::GrayImage = image::ImageBuffer::from_raw(self.width, self.height, data)
            .expect("dimensions match bit count");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            bits: img.into_raw().into_iter().map(|v| v > 127).collect(),
        })
    }
}

/// Morphology and cleanup parameters for [`segment_tissue`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskParams {
    pub close_radius: u32,
    pub open_radius: u32,
    pub min_component_area: u64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            close_radius: 4,
            open_radius: 2,
            min_component_area: 64,
        }
    }
}

/// Otsu's threshold over a 256-bin histogram: the level t maximizing
/// between-class variance of the split `{<= t} / {> t}`, smallest t on ties.
pub fn otsu_threshold(histogram: &[u64; 256]) -> Result<u8> {
    let nonempty = histogram.iter().filter(|&&c| c > 0).count();
    if nonempty < 2 {
        return Err(Error::degenerate(
            "otsu threshold needs at least two distinct levels",
        ));
    }
    let total: u64 = histogram.iter().sum();
    let total_sum: f64 = histogram
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();

    let mut best_t = 0u8;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for t in 0..255usize {
        w0 += histogram[t];
        sum0 += t as f64 * histogram[t] as f64;
        if w0 == 0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0 {
            break;
        }
        let mean0 = sum0 / w0 as f64;
        let mean1 = (total_sum - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (mean0 - mean1) * (mean0 - mean1);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

/// Disk structuring element offsets for a given radius.
fn disk_offsets(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    let mut offs = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offs.push((dx, dy));
            }
        }
    }
    offs
}

fn dilate(bits: &[bool], width: u32, height: u32, offs: &[(i64, i64)]) -> Vec<bool> {
    let (w, h) = (width as i64, height as i64);
    let mut out = vec![false; bits.len()];
    for y in 0..h {
        for x in 0..w {
            if !bits[(y * w + x) as usize] {
                continue;
            }
            for &(dx, dy) in offs {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && nx < w && ny >= 0 && ny < h {
                    out[(ny * w + nx) as usize] = true;
                }
            }
        }
    }
    out
}

fn erode(bits: &[bool], width: u32, height: u32, offs: &[(i64, i64)]) -> Vec<bool> {
    let (w, h) = (width as i64, height as i64);
    let mut out = vec![false; bits.len()];
    for y in 0..h {
        for x in 0..w {
            let keep = offs.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx >= 0 && nx < w && ny >= 0 && ny < h && bits[(ny * w + nx) as usize]
            });
            out[(y * w + x) as usize] = keep;
        }
    }
    out
}

/// Binary closing: dilation then erosion with a disk of the given radius.
pub fn binary_close(bits: &mut Vec<bool>, width: u32, height: u32, radius: u32) {
    if radius == 0 {
        return;
    }
    let offs = disk_offsets(radius);
    *bits = erode(&dilate(bits, width, height, &offs), width, height, &offs);
}

/// Binary opening: erosion then dilation with a disk of the given radius.
pub fn binary_open(bits: &mut Vec<bool>, width: u32, height: u32, radius: u32) {
    if radius == 0 {
        return;
    }
    let offs = disk_offsets(radius);
    *bits = dilate(&erode(bits, width, height, &offs), width, height, &offs);
}

/// Remove 8-connected foreground components with fewer than `min_area` pixels.
pub fn remove_small_components(bits: &mut [bool], width: u32, height: u32, min_area: u64) {
    if min_area <= 1 {
        return;
    }
    let (w, h) = (width as i64, height as i64);
    let mut seen = vec![false; bits.len()];
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        component.clear();
        stack.push(start);
        seen[start] = true;
        while let Some(idx) = stack.pop() {
            component.push(idx);
            let (x, y) = ((idx as i64) % w, (idx as i64) / w);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || nx >= w || ny < 0 || ny >= h {
                        continue;
                    }
                    let nidx = (ny * w + nx) as usize;
                    if bits[nidx] && !seen[nidx] {
                        seen[nidx] = true;
                        stack.push(nidx);
                    }
                }
            }
        }
        if (component.len() as u64) < min_area {
            for &idx in &component {
                bits[idx] = false;
            }
        }
    }
}

/// Saturation-channel Otsu mask with morphological cleanup.
pub fn segment_tissue(img: &RgbImage, params: &MaskParams) -> Result<TissueMask> {
    let planes = convert_color(img, ColorSpace::Hsv);
    let sat = &planes[1];
    // Scale S in [0,1] to byte levels for the histogram.
    let levels: Vec<u8> = sat
        .data
        .iter()
        .map(|&s| (s * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let mut hist = [0u64; 256];
    for &l in &levels {
        hist[l as usize] += 1;
    }
    let t = otsu_threshold(&hist).map_err(|_| {
        Error::NoTissueFound("saturation channel is single-valued".to_string())
    })?;
    let mut bits: Vec<bool> = levels.iter().map(|&l| l > t).collect();
    binary_close(&mut bits, img.width(), img.height(), params.close_radius);
    binary_open(&mut bits, img.width(), img.height(), params.open_radius);
    remove_small_components(&mut bits, img.width(), img.height(), params.min_component_area);
    if !bits.iter().any(|&b| b) {
        return Err(Error::NoTissueFound(
            "mask is empty after morphological cleanup".to_string(),
        ));
    }
    Ok(TissueMask {
        width: img.width(),
        height: img.height(),
        bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive scan of all 256 thresholds, recomputing class statistics per t.
    fn otsu_exhaustive(hist: &[u64; 256]) -> u8 {
        let mut best_t = 0u8;
        let mut best = f64::NEG_INFINITY;
        for t in 0..=255usize {
            let w0: u64 = hist[..=t].iter().sum();
            let w1: u64 = hist[t + 1..].iter().sum();
            if w0 == 0 || w1 == 0 {
                continue;
            }
            let m0: f64 = hist[..=t]
                .iter()
                .enumerate()
                .map(|(v, &c)| v as f64 * c as f64)
                .sum::<f64>()
                / w0 as f64;
            let m1: f64 = hist[t + 1..]
                .iter()
                .enumerate()
                .map(|(v, &c)| (v + t + 1) as f64 * c as f64)
                .sum::<f64>()
                / w1 as f64;
            let var = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
            if var > best {
                best = var;
                best_t = t as u8;
            }
        }
        best_t
    }

    fn disk_image(w: u32, h: u32, cx: f64, cy: f64, r: f64, fg: [u8; 3], bg: [u8; 3]) -> RgbImage {
        let mut img = RgbImage::filled(w, h, bg);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    img.set_pixel(x, y, fg);
                }
            }
        }
        img
    }

    #[test]
    fn bimodal_two_point_histogram() {
        let mut hist = [0u64; 256];
        hist[10] = 100;
        hist[200] = 100;
        assert_eq!(otsu_threshold(&hist).unwrap(), 10);
    }

    #[test]
    fn adjacent_levels() {
        let mut hist = [0u64; 256];
        hist[40] = 50;
        hist[41] = 50;
        assert_eq!(otsu_threshold(&hist).unwrap(), 40);
        assert_eq!(otsu_exhaustive(&hist), 40);
    }

    #[test]
    fn uniform_tails() {
        let mut hist = [0u64; 256];
        for v in 0..10 {
            hist[v] = 5;
        }
        for v in 246..256 {
            hist[v] = 5;
        }
        assert_eq!(otsu_threshold(&hist).unwrap(), 9);
        assert_eq!(otsu_exhaustive(&hist), 9);
    }

    #[test]
    fn single_valued_histogram_rejected() {
        let mut hist = [0u64; 256];
        hist[99] = 1000;
        assert!(otsu_threshold(&hist).is_err());
    }

    #[test]
    fn matches_exhaustive_scan_on_random_histograms() {
        let mut state = 7u64;
        for _ in 0..50 {
            let mut hist = [0u64; 256];
            for slot in hist.iter_mut() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if state >> 60 < 4 {
                    *slot = (state >> 40) % 100;
                }
            }
            if hist.iter().filter(|&&c| c > 0).count() < 2 {
                continue;
            }
            assert_eq!(otsu_threshold(&hist).unwrap(), otsu_exhaustive(&hist));
        }
    }

    #[test]
    fn pink_disk_on_white_is_masked() {
        let img = disk_image(64, 64, 32.0, 32.0, 20.0, [220, 120, 160], [255, 255, 255]);
        let mask = segment_tissue(&img, &MaskParams::default()).unwrap();
        // Interior well inside the disk must be foreground, far outside background.
        assert!(mask.get(32, 32));
        assert!(!mask.get(2, 2));
        // Boundary band tolerance: area within the +/- close_radius annulus.
        let area = mask.area() as f64;
        let expect = std::f64::consts::PI * 20.0 * 20.0;
        assert!((area - expect).abs() < expect * 0.25, "area {area} vs {expect}");
    }

    #[test]
    fn fully_white_image_has_no_tissue() {
        let img = RgbImage::filled(32, 32, [255, 255, 255]);
        assert!(matches!(
            segment_tissue(&img, &MaskParams::default()),
            Err(Error::NoTissueFound(_))
        ));
    }

    #[test]
    fn speck_below_min_area_removed() {
        let mut img = disk_image(64, 64, 24.0, 24.0, 14.0, [220, 120, 160], [255, 255, 255]);
        // 3-pixel speck far from the disk
        for (x, y) in [(55, 55), (56, 55), (55, 56)] {
            img.set_pixel(x, y, [220, 120, 160]);
        }
        let params = MaskParams {
            close_radius: 0,
            open_radius: 0,
            min_component_area: 10,
        };
        let mask = segment_tissue(&img, &params).unwrap();
        assert!(!mask.get(55, 55));
        assert!(mask.get(24, 24));
    }

    #[test]
    fn mask_invariant_to_hue_rotation() {
        let img = disk_image(48, 48, 24.0, 24.0, 15.0, [200, 90, 140], [250, 250, 250]);
        // Rotating hue by permuting channels leaves saturation untouched.
        let rotated_data: Vec<u8> = img
            .data()
            .chunks_exact(3)
            .flat_map(|p| [p[1], p[2], p[0]])
            .collect();
        let rotated = RgbImage::new(48, 48, rotated_data).unwrap();
        let a = segment_tissue(&img, &MaskParams::default()).unwrap();
        let b = segment_tissue(&rotated, &MaskParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn min_area_monotone_shrinkage() {
        let img = disk_image(64, 64, 20.0, 20.0, 10.0, [210, 100, 150], [255, 255, 255]);
        let small = segment_tissue(
            &img,
            &MaskParams {
                min_component_area: 4,
                ..MaskParams::default()
            },
        )
        .unwrap();
        let large = segment_tissue(
            &img,
            &MaskParams {
                min_component_area: 200,
                ..MaskParams::default()
            },
        )
        .unwrap();
        for (s, l) in small.bits.iter().zip(&large.bits) {
            if *l {
                assert!(*s, "larger min_area must not add foreground");
            }
        }
    }
}
