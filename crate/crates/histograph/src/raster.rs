//! Raster containers, color-space conversions, downsampling, and gray-level
//! quantization.
//!
//! Color conventions used throughout the crate:
//! - HSV: H in [0, 360), S and V in [0, 1].
//! - CIELAB: sRGB companding, D65 white point, L in [0, 100].
//! - GRAY: 0.299 R + 0.587 G + 0.114 B, values in [0, 255].

use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} samples for {width}x{height} RGB, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Constant-color image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data).expect("positive dims")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Decode an 8-bit RGB PNG or TIFF from disk.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        Self::new(rgb.width(), rgb.height(), rgb.into_raw())
    }

    /// Encode as PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width, self.height, self.data.clone())
                .expect("dimensions validated at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Quantized gray-level raster with `levels` discrete values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    /// One level per pixel, each in `[0, levels - 1]`.
    pub data: Vec<u32>,
    pub levels: u32,
}

/// One floating-point plane of a converted image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn value(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }
}

/// Target color space for [`convert_color`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    Hsv,
    CieLab,
    Gray,
}

/// Per-pixel HSV: H in [0, 360), S and V in [0, 1].
pub fn rgb_to_hsv(rgb: [u8; 3]) -> [f64; 3] {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let h = if h >= 360.0 { h - 360.0 } else { h };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

/// Inverse of [`rgb_to_hsv`]; used by tests and synthetic fixtures.
pub fn hsv_to_rgb(hsv: [f64; 3]) -> [u8; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to8 = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [to8(r1), to8(g1), to8(b1)]
}

// D65 reference white in XYZ: the sRGB matrix applied to (1,1,1), so that
// pure white lands exactly on L = 100, a = b = 0.
const WHITE_X: f64 = 0.412_456_4 + 0.357_576_1 + 0.180_437_5;
const WHITE_Y: f64 = 0.212_672_9 + 0.715_152_2 + 0.072_175_0;
const WHITE_Z: f64 = 0.019_333_9 + 0.119_192_0 + 0.950_304_1;

fn srgb_linearize(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Per-pixel CIELAB under D65: L in [0, 100].
pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let r = srgb_linearize(rgb[0]);
    let g = srgb_linearize(rgb[1]);
    let b = srgb_linearize(rgb[2]);
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let fx = lab_f(x / WHITE_X);
    let fy = lab_f(y / WHITE_Y);
    let fz = lab_f(z / WHITE_Z);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Per-pixel luma in [0, 255].
pub fn rgb_to_gray(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

/// Convert an image into per-pixel channel planes (3 for HSV/CIELAB, 1 for GRAY).
pub fn convert_color(img: &RgbImage, target: ColorSpace) -> Vec<Plane> {
    let n = img.width as usize * img.height as usize;
    let mk = |data: Vec<f64>| Plane {
        width: img.width,
        height: img.height,
        data,
    };
    match target {
        ColorSpace::Gray => {
            let mut g = Vec::with_capacity(n);
            for p in img.data.chunks_exact(3) {
                g.push(rgb_to_gray([p[0], p[1], p[2]]));
            }
            vec![mk(g)]
        }
        ColorSpace::Hsv | ColorSpace::CieLab => {
            let mut c0 = Vec::with_capacity(n);
            let mut c1 = Vec::with_capacity(n);
            let mut c2 = Vec::with_capacity(n);
            for p in img.data.chunks_exact(3) {
                let v = match target {
                    ColorSpace::Hsv => rgb_to_hsv([p[0], p[1], p[2]]),
                    _ => rgb_to_lab([p[0], p[1], p[2]]),
                };
                c0.push(v[0]);
                c1.push(v[1]);
                c2.push(v[2]);
            }
            vec![mk(c0), mk(c1), mk(c2)]
        }
    }
}

/// Block-mean downsampling; output dims are `ceil(dim / factor)` and edge
/// blocks are truncated. Means round half away from zero.
pub fn downsample(img: &RgbImage, factor: u32) -> Result<RgbImage> {
    if factor == 0 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let ow = img.width.div_ceil(factor);
    let oh = img.height.div_ceil(factor);
    let mut out = Vec::with_capacity(ow as usize * oh as usize * 3);
    for oy in 0..oh {
        for ox in 0..ow {
            let x0 = ox * factor;
            let y0 = oy * factor;
            let x1 = (x0 + factor).min(img.width);
            let y1 = (y0 + factor).min(img.height);
            let mut sum = [0u64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = img.pixel(x, y);
                    for c in 0..3 {
                        sum[c] += p[c] as u64;
                    }
                }
            }
            let count = ((x1 - x0) * (y1 - y0)) as f64;
            for s in sum {
                out.push((s as f64 / count).round() as u8);
            }
        }
    }
    RgbImage::new(ow, oh, out)
}

/// Quantize a value set to `levels` bins spanning its own min-max range.
///
/// A constant set maps entirely to level 0. The bin width is
/// `(max - min) / levels` with the maximum clamped into the last bin.
pub fn quantize_values(values: &[f64], levels: u32) -> Result<Vec<u32>> {
    if values.is_empty() {
        return Err(Error::invalid("cannot quantize an empty pixel set"));
    }
    if levels < 2 {
        return Err(Error::invalid("quantization needs at least 2 levels"));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Ok(vec![0; values.len()]);
    }
    let scale = levels as f64 / (max - min);
    Ok(values
        .iter()
        .map(|&v| (((v - min) * scale) as u32).min(levels - 1))
        .collect())
}

/// Quantize a full plane into a [`GrayImage`].
pub fn quantize(plane: &Plane, levels: u32) -> Result<GrayImage> {
    let data = quantize_values(&plane.data, levels)?;
    Ok(GrayImage {
        width: plane.width,
        height: plane.height,
        data,
        levels,
    })
}
