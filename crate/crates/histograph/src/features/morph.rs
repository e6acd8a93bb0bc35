//! Morphological and color features: channel means and medians across RGB,
//! HSV, and LAB, gray-level bright/dark fractions and percentiles, and size.

use crate::error::{Error, Result};
use crate::features::texture::percentile;
use crate::raster::{rgb_to_gray, rgb_to_hsv, rgb_to_lab};

pub const MORPH_NAMES: [&str; 18] = [
    "mean_r",
    "mean_g",
    "mean_b",
    "mean_h",
    "mean_s",
    "mean_v",
    "mean_l",
    "mean_a",
    "mean_(la)b",
    "median_r",
    "median_g",
    "median_b",
    "ratio_bright",
    "ratio_dark",
    "10_dark",
    "10_bright",
    "mean",
    "size",
];

pub const MORPH_COUNT: usize = MORPH_NAMES.len();

/// Gray-level cutoffs for the bright/dark pixel fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorphCutoffs {
    pub bright: f64,
    pub dark: f64,
}

impl Default for MorphCutoffs {
    fn default() -> Self {
        Self {
            bright: 200.0,
            dark: 50.0,
        }
    }
}

/// The 18 morphological and color features over a region's RGB pixels.
pub fn extract_morph(pixels: &[[u8; 3]], cutoffs: &MorphCutoffs) -> Result<Vec<f64>> {
    if pixels.is_empty() {
        return Err(Error::invalid("morph extraction over an empty region"));
    }
    let n = pixels.len() as f64;
    let mut sum_rgb = [0.0f64; 3];
    let mut sum_hsv = [0.0f64; 3];
    let mut sum_lab = [0.0f64; 3];
    let mut gray = Vec::with_capacity(pixels.len());
    let mut channels: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut bright = 0.0;
    let mut dark = 0.0;
    for &p in pixels {
        for c in 0..3 {
            sum_rgb[c] += p[c] as f64;
            channels[c].push(p[c] as f64);
        }
        let hsv = rgb_to_hsv(p);
        let lab = rgb_to_lab(p);
        for c in 0..3 {
            sum_hsv[c] += hsv[c];
            sum_lab[c] += lab[c];
        }
        let g = rgb_to_gray(p);
        if g > cutoffs.bright {
            bright += 1.0;
        }
        if g < cutoffs.dark {
            dark += 1.0;
        }
        gray.push(g);
    }
    gray.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for ch in channels.iter_mut() {
        ch.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    let gray_mean = gray.iter().sum::<f64>() / n;

    Ok(vec![
        sum_rgb[0] / n,
        sum_rgb[1] / n,
        sum_rgb[2] / n,
        sum_hsv[0] / n,
        sum_hsv[1] / n,
        sum_hsv[2] / n,
        sum_lab[0] / n,
        sum_lab[1] / n,
        sum_lab[2] / n,
        percentile(&channels[0], 50.0),
        percentile(&channels[1], 50.0),
        percentile(&channels[2], 50.0),
        bright / n,
        dark / n,
        percentile(&gray, 10.0),
        percentile(&gray, 90.0),
        gray_mean,
        n,
    ])
}
