//! Nuclear composition features from a precomputed nuclei instance map.
//!
//! The map is consumed, never produced, by this crate: a 16-bit instance PNG
//! (0 = no nucleus) plus a sidecar CSV mapping instance id to a type code.
//!
//! Type codes: 0 = no-label, 1 = neoplastic, 2 = inflammatory,
//! 3 = connective / soft tissue, 4 = dead, 5 = non-neoplastic epithelial.
//!
//! A nucleus belongs to a region when the strict majority of its pixels lies
//! inside; nuclei without a majority region are not counted anywhere.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::texture::percentile;
use crate::superpixel::LabelMap;

/// Group order of the nuclear feature block.
pub const NUCLEAR_GROUPS: [&str; 7] = [
    "all", "nolabe", "neopla", "inflam", "connec", "necros", "no-neo",
];

/// Per-group statistics, in order.
pub const NUCLEAR_STATS: [&str; 11] = [
    "count",
    "mean_area",
    "std_area",
    "5p_area",
    "25p_area",
    "50p_area",
    "75p_area",
    "95p_area",
    "min_area",
    "max_area",
    "density",
];

pub const NUCLEAR_COUNT: usize = NUCLEAR_GROUPS.len() * NUCLEAR_STATS.len();

/// One nucleus instance: its type, total area, and pixel positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NucleusRecord {
    pub instance_id: u32,
    pub type_code: u8,
    pub area: u64,
    pub pixels: Vec<(u32, u32)>,
}

/// All nuclei of one slide.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NucleiMap {
    pub width: u32,
    pub height: u32,
    /// Sorted by instance id.
    pub instances: Vec<NucleusRecord>,
}

impl NucleiMap {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            instances: Vec::new(),
        }
    }

    /// Load from a 16-bit instance-label PNG and its type sidecar CSV
    /// (`instance_id,type_code` header).
    pub fn load(png_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let img = image::open(png_path)
            .map_err(|source| Error::Image {
                path: png_path.to_path_buf(),
                source,
            })?
            .to_luma16();
        let mut by_id: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
        for (x, y, p) in img.enumerate_pixels() {
            if p.0[0] != 0 {
                by_id.entry(p.0[0] as u32).or_default().push((x, y));
            }
        }
        let mut types: BTreeMap<u32, u8> = BTreeMap::new();
        let mut reader = csv::Reader::from_path(sidecar_path)
            .map_err(|e| Error::format(sidecar_path, e.to_string()))?;
        for record in reader.records() {
            let record = record.map_err(|e| Error::format(sidecar_path, e.to_string()))?;
            let id: u32 = record
                .get(0)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::format(sidecar_path, "bad instance id"))?;
            let code: u8 = record
                .get(1)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::format(sidecar_path, "bad type code"))?;
            if code > 5 {
                return Err(Error::format(
                    sidecar_path,
                    format!("type code {code} outside 0..=5"),
                ));
            }
            types.insert(id, code);
        }
        let instances = by_id
            .into_iter()
            .map(|(instance_id, pixels)| {
                let type_code = *types.get(&instance_id).ok_or_else(|| {
                    Error::format(
                        sidecar_path,
                        format!("instance {instance_id} missing from sidecar"),
                    )
                })?;
                Ok(NucleusRecord {
                    instance_id,
                    type_code,
                    area: pixels.len() as u64,
                    pixels,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width: img.width(),
            height: img.height(),
            instances,
        })
    }

    /// Write the instance PNG and type sidecar consumed by [`NucleiMap::load`].
    pub fn save(&self, png_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut data = vec![0u16; self.width as usize * self.height as usize];
        for inst in &self.instances {
            if inst.instance_id == 0 || inst.instance_id >= u16::MAX as u32 {
                return Err(Error::invalid("instance ids must lie in 1..65535"));
            }
            for &(x, y) in &inst.pixels {
                data[y as usize * self.width as usize + x as usize] = inst.instance_id as u16;
            }
        }
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width, self.height, data)
                .expect("dimensions match data");
        buf.save_with_format(png_path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: png_path.to_path_buf(),
                source,
            })?;
        let mut w = csv::Writer::from_path(sidecar_path)
            .map_err(|e| Error::format(sidecar_path, e.to_string()))?;
        w.write_record(["instance_id", "type_code"])
            .map_err(|e| Error::format(sidecar_path, e.to_string()))?;
        for inst in &self.instances {
            w.write_record([inst.instance_id.to_string(), inst.type_code.to_string()])
                .map_err(|e| Error::format(sidecar_path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(sidecar_path, e))?;
        Ok(())
    }
}

/// True when the strict majority of the instance's pixels carries `region_id`.
fn majority_inside(inst: &NucleusRecord, labels: &LabelMap, region_id: u32) -> bool {
    let inside = inst
        .pixels
        .iter()
        .filter(|&&(x, y)| {
            x < labels.width && y < labels.height && labels.get(x, y) == region_id
        })
        .count();
    inside * 2 > inst.pixels.len()
}

/// The 77 nuclear features of one region: per type group, count and area
/// statistics plus density. Groups with no nuclei are zero-filled.
pub fn extract_nuclear(
    labels: &LabelMap,
    region_id: u32,
    region_area: u64,
    nuclei: &NucleiMap,
) -> Vec<f64> {
    let assigned: Vec<&NucleusRecord> = nuclei
        .instances
        .iter()
        .filter(|inst| majority_inside(inst, labels, region_id))
        .collect();

    let mut out = Vec::with_capacity(NUCLEAR_COUNT);
    for (gi, _) in NUCLEAR_GROUPS.iter().enumerate() {
        let mut areas: Vec<f64> = assigned
            .iter()
            .filter(|inst| gi == 0 || inst.type_code as usize == gi - 1)
            .map(|inst| inst.area as f64)
            .collect();
        areas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.extend_from_slice(&group_stats(&areas, region_area));
    }
    out
}

fn group_stats(areas: &[f64], region_area: u64) -> [f64; 11] {
    if areas.is_empty() {
        return [0.0; 11];
    }
    let n = areas.len() as f64;
    let mean = areas.iter().sum::<f64>() / n;
    let var = areas.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    [
        n,
        mean,
        var.sqrt(),
        percentile(areas, 5.0),
        percentile(areas, 25.0),
        percentile(areas, 50.0),
        percentile(areas, 75.0),
        percentile(areas, 95.0),
        areas[0],
        *areas.last().unwrap(),
        n / region_area as f64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn labels_two_halves() -> LabelMap {
        // 10x10, left half region 0, right half region 1.
        let mut labels = Vec::new();
        for _ in 0..10 {
            for x in 0..10u32 {
                labels.push(if x < 5 { 0 } else { 1 });
            }
        }
        LabelMap {
            width: 10,
            height: 10,
            labels,
        }
    }

    fn nucleus(id: u32, code: u8, pixels: Vec<(u32, u32)>) -> NucleusRecord {
        NucleusRecord {
            instance_id: id,
            type_code: code,
            area: pixels.len() as u64,
            pixels,
        }
    }

    #[test]
    fn no_nuclei_gives_all_zeros() {
        let labels = labels_two_halves();
        let f = extract_nuclear(&labels, 0, 50, &NucleiMap::empty(10, 10));
        assert_eq!(f, vec![0.0; NUCLEAR_COUNT]);
    }

    #[test]
    fn two_neoplastic_nuclei_statistics() {
        let labels = labels_two_halves();
        let mut map = NucleiMap::empty(10, 10);
        // Areas 10 and 30, all pixels in region 0 (neoplastic = code 1).
        map.instances.push(nucleus(
            1,
            1,
            (0..10).map(|i| (i % 5, i / 5)).collect(),
        ));
        map.instances.push(nucleus(
            2,
            1,
            (0..30).map(|i| (i % 5, 4 + i / 5)).collect(),
        ));
        let f = extract_nuclear(&labels, 0, 50, &map);
        let neopla = &f[2 * 11..3 * 11];
        assert_eq!(neopla[0], 2.0); // count
        assert_relative_eq!(neopla[1], 20.0); // mean
        assert_relative_eq!(neopla[2], 10.0); // population std
        assert_eq!(neopla[8], 10.0); // min
        assert_eq!(neopla[9], 30.0); // max
        assert_relative_eq!(neopla[10], 2.0 / 50.0); // density
        // "all" group identical
        assert_eq!(&f[0..11], neopla);
        // other groups zero
        assert_eq!(&f[11..22], &[0.0; 11]);
    }

    #[test]
    fn straddling_nucleus_counts_once_by_majority() {
        let labels = labels_two_halves();
        let mut map = NucleiMap::empty(10, 10);
        // 6 pixels in region 0, 4 in region 1.
        let pixels: Vec<(u32, u32)> = vec![
            (2, 2), (3, 2), (4, 2), (2, 3), (3, 3), (4, 3), // region 0
            (5, 2), (6, 2), (5, 3), (6, 3), // region 1
        ];
        map.instances.push(nucleus(1, 4, pixels));
        let in_zero = extract_nuclear(&labels, 0, 50, &map);
        let in_one = extract_nuclear(&labels, 1, 50, &map);
        assert_eq!(in_zero[0], 1.0);
        assert_eq!(in_one[0], 0.0);
    }

    #[test]
    fn all_group_count_is_sum_of_types() {
        let labels = labels_two_halves();
        let mut map = NucleiMap::empty(10, 10);
        let mut next = 1u32;
        for code in 0..6u8 {
            for k in 0..(code as u32 + 1) {
                map.instances.push(nucleus(
                    next,
                    code,
                    vec![((next + k) % 5, (next * 7 + k) % 10)],
                ));
                next += 1;
            }
        }
        let f = extract_nuclear(&labels, 0, 50, &map);
        let total: f64 = (1..7).map(|g| f[g * 11]).sum();
        assert_eq!(f[0], total);
    }

    #[test]
    fn png_and_sidecar_round_trip() {
        let mut map = NucleiMap::empty(8, 8);
        map.instances.push(nucleus(1, 1, vec![(1, 1), (2, 1)]));
        map.instances.push(nucleus(5, 4, vec![(6, 6)]));
        let dir = std::env::temp_dir().join("histograph-test-nuclei");
        std::fs::create_dir_all(&dir).unwrap();
        let png = dir.join("inst.png");
        let csv = dir.join("types.csv");
        map.save(&png, &csv).unwrap();
        let back = NucleiMap::load(&png, &csv).unwrap();
        assert_eq!(back, map);
    }
}
