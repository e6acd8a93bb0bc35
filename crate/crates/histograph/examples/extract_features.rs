//! The interpretable node feature catalog: 93 texture + 18 morphology + 77
//! nuclei statistics per region, and correlation pruning over a cohort.
//!
//! ```sh
//! cargo run -p histograph --example extract_features
//! ```

use histograph::features::{
    extract_node_features, prune_correlated, CatalogParams, FeatureCatalog, NucleiMap,
    NucleusRecord,
};
use histograph::raster::RgbImage;
use histograph::superpixel::{build_rag, LabelMap};

fn main() -> histograph::Result<()> {
    let catalog = FeatureCatalog::new(CatalogParams::default());
    println!(
        "catalog: {} entries ({} texture, 18 morphology, 77 nuclear)",
        catalog.len(),
        93
    );

    // One 24x24 region with a dotted texture and two planted nuclei.
    let mut img = RgbImage::filled(24, 24, [200, 120, 150]);
    for y in (0..24u32).step_by(3) {
        for x in (0..24u32).step_by(3) {
            img.set_pixel(x, y, [120, 60, 90]);
        }
    }
    let labels = LabelMap {
        width: 24,
        height: 24,
        labels: vec![0; 24 * 24],
    };
    let graph = build_rag(&labels);
    let mut nuclei = NucleiMap::empty(24, 24);
    nuclei.instances.push(NucleusRecord {
        instance_id: 1,
        type_code: 1, // neoplastic
        area: 4,
        pixels: vec![(5, 5), (6, 5), (5, 6), (6, 6)],
    });
    nuclei.instances.push(NucleusRecord {
        instance_id: 2,
        type_code: 3, // connective
        area: 2,
        pixels: vec![(15, 14), (15, 15)],
    });

    let row = extract_node_features(&img, &labels, &graph.nodes[0], &nuclei, &catalog)?;
    println!("\nselected values for the region:");
    for name in [
        "original_firstorder_Mean",
        "original_glcm_Contrast",
        "original_ngtdm_Busyness",
        "mean_r",
        "ratio_dark",
        "size",
        "all_count",
        "neopla_count",
        "neopla_density",
    ] {
        let idx = catalog.entries.iter().position(|e| e.name == name).unwrap();
        println!("  {name:<34} = {:.4}", row[idx]);
    }

    // Pruning over a synthetic cohort: perfectly duplicated columns drop at
    // any xi < 1 and everything survives at xi = 1.0.
    let mut state = 5u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|_| {
            let mut r: Vec<f64> = (0..catalog.len()).map(|_| next()).collect();
            r[20] = 2.0 * r[4] + 3.0;
            r
        })
        .collect();
    let keep_all = prune_correlated(&rows, 1.0)?;
    let pruned = prune_correlated(&rows, 0.99)?;
    println!(
        "\npruning: xi=1.0 keeps {} / {}; xi=0.99 keeps {}",
        keep_all.iter().filter(|&&a| a).count(),
        catalog.len(),
        pruned.iter().filter(|&&a| a).count(),
    );
    Ok(())
}
