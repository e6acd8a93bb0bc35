//! Synthetic benchmark fixtures: small tissue-like images in two classes
//! separated by texture frequency and planted nuclei density, with instance
//! maps, survival fields, and a patient-level split manifest.
//!
//! Class 0 ("stage I") tissue is smooth with sparse connective nuclei;
//! class 1 ("stage II") carries high-frequency texture and dense neoplastic
//! nuclei. Both signals survive the full pipeline, so a trained classifier
//! separates the held-out split almost perfectly.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::eval::{DatasetManifest, SlideRecord, Split};
use crate::features::nuclear::{NucleiMap, NucleusRecord};
use crate::raster::RgbImage;

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub slides: usize,
    pub seed: u64,
    pub size: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            slides: 200,
            seed: 7,
            size: 96,
        }
    }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Generate one slide image plus its nuclei map.
fn generate_slide(class: u8, size: u32, rng: &mut ChaCha20Rng) -> (RgbImage, NucleiMap) {
    let s = size as f64;
    let (cx, cy) = (
        s / 2.0 + rng.gen_range(-4.0..4.0),
        s / 2.0 + rng.gen_range(-4.0..4.0),
    );
    let (rx, ry) = (
        s * rng.gen_range(0.32..0.40),
        s * rng.gen_range(0.32..0.40),
    );
    let inside = |x: u32, y: u32| -> bool {
        let dx = (x as f64 - cx) / rx;
        let dy = (y as f64 - cy) / ry;
        dx * dx + dy * dy <= 1.0
    };

    let mut img = RgbImage::filled(size, size, [255, 255, 255]);
    // Slightly noisy near-white background, still unsaturated.
    for y in 0..size {
        for x in 0..size {
            let n = rng.gen_range(-4.0..4.0);
            img.set_pixel(x, y, [clamp_u8(250.0 + n), clamp_u8(250.0 + n), clamp_u8(250.0 + n)]);
        }
    }

    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let wavelength = rng.gen_range(26.0..36.0);
    let base = [
        205.0 + rng.gen_range(-6.0..6.0),
        128.0 + rng.gen_range(-6.0..6.0),
        165.0 + rng.gen_range(-6.0..6.0),
    ];
    for y in 0..size {
        for x in 0..size {
            if !inside(x, y) {
                continue;
            }
            let texture = if class == 0 {
                // Smooth low-frequency wave.
                let phase = (x as f64 * theta.cos() + y as f64 * theta.sin())
                    / wavelength
                    * std::f64::consts::TAU;
                14.0 * phase.sin()
            } else {
                // High-frequency checker plus per-pixel noise.
                let checker = if (x + y) % 2 == 0 { 16.0 } else { -16.0 };
                checker + rng.gen_range(-14.0..14.0)
            };
            img.set_pixel(
                x,
                y,
                [
                    clamp_u8(base[0] + texture),
                    clamp_u8(base[1] + texture * 0.7),
                    clamp_u8(base[2] + texture * 0.85),
                ],
            );
        }
    }

    // Planted nuclei: sparse connective for class 0, dense neoplastic for
    // class 1, drawn dark so they also shape the texture statistics.
    let count = if class == 0 {
        rng.gen_range(8..14)
    } else {
        rng.gen_range(38..52)
    };
    let mut grid = vec![0u16; (size * size) as usize];
    for inst in 1..=count {
        let (nx, ny) = loop {
            let x = rng.gen_range(0..size);
            let y = rng.gen_range(0..size);
            if inside(x, y) {
                break (x, y);
            }
        };
        let radius: i64 = if class == 0 {
            rng.gen_range(1..=2)
        } else {
            rng.gen_range(1..=3)
        };
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx * dx + dy * dy > radius * radius {
                    continue;
                }
                let (px, py) = (nx as i64 + dx, ny as i64 + dy);
                if px < 0 || py < 0 || px >= size as i64 || py >= size as i64 {
                    continue;
                }
                let (px, py) = (px as u32, py as u32);
                if !inside(px, py) {
                    continue;
                }
                grid[(py * size + px) as usize] = inst as u16;
                img.set_pixel(px, py, [88, 52, 118]);
            }
        }
    }
    // Rebuild instance pixel lists from the drawn grid so overlaps resolve
    // the same way the files will.
    let mut instances: Vec<NucleusRecord> = Vec::new();
    let mut pixels_of: std::collections::BTreeMap<u16, Vec<(u32, u32)>> = Default::default();
    for y in 0..size {
        for x in 0..size {
            let id = grid[(y * size + x) as usize];
            if id != 0 {
                pixels_of.entry(id).or_default().push((x, y));
            }
        }
    }
    for (id, pixels) in pixels_of {
        let type_code = if class == 0 {
            // Mostly connective with occasional inflammatory cells.
            if id % 5 == 0 {
                2
            } else {
                3
            }
        } else {
            // Mostly neoplastic with occasional dead nuclei.
            if id % 7 == 0 {
                4
            } else {
                1
            }
        };
        instances.push(NucleusRecord {
            instance_id: id as u32,
            type_code,
            area: pixels.len() as u64,
            pixels,
        });
    }
    (
        img,
        NucleiMap {
            width: size,
            height: size,
            instances,
        },
    )
}

/// Write `params.slides` fixtures plus `manifest.csv` under `out_dir`.
///
/// Returns the manifest path. Patient-level splits are 60/20/20 per class,
/// so every split carries both classes.
pub fn generate(out_dir: &Path, params: &SynthParams) -> Result<PathBuf> {
    if params.slides < 10 {
        return Err(Error::invalid("need at least 10 slides for a usable split"));
    }
    std::fs::create_dir_all(out_dir.join("images")).map_err(|e| Error::io(out_dir, e))?;
    std::fs::create_dir_all(out_dir.join("nuclei")).map_err(|e| Error::io(out_dir, e))?;

    let mut slides = Vec::with_capacity(params.slides);
    for i in 0..params.slides {
        let class = (i % 2) as u8;
        let mut rng = ChaCha20Rng::seed_from_u64(
            params.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let (img, nuclei) = generate_slide(class, params.size, &mut rng);
        let slide_id = format!("synth{i:04}");
        let image_rel = PathBuf::from(format!("images/{slide_id}.png"));
        let nuclei_rel = PathBuf::from(format!("nuclei/{slide_id}.png"));
        img.save_png(&out_dir.join(&image_rel))?;
        nuclei.save(
            &out_dir.join(&nuclei_rel),
            &out_dir.join(format!("nuclei/{slide_id}.csv")),
        )?;

        let time = if class == 0 {
            rng.gen_range(600.0..1000.0f64).round()
        } else {
            rng.gen_range(50.0..400.0f64).round()
        };
        let event = rng.gen_range(0.0..1.0) < 0.85;
        // Per-class round-robin keeps splits stratified: 60/20/20.
        let in_class_rank = i / 2;
        let split = match in_class_rank % 5 {
            0 | 1 | 2 => Split::Train,
            3 => Split::Val,
            _ => Split::Test,
        };
        slides.push(SlideRecord {
            slide_id: slide_id.clone(),
            patient_id: format!("patient{i:04}"),
            image: image_rel,
            nuclei: Some(nuclei_rel),
            embedding: None,
            stage: Some(class),
            time: Some(time),
            event: Some(event),
            split,
        });
    }
    let manifest = DatasetManifest { slides };
    let path = out_dir.join("manifest.csv");
    manifest.save_csv(&path)?;
    Ok(path)
}
