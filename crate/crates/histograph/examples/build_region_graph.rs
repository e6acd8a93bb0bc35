//! Superpixel segmentation and the region adjacency graph.
//!
//! ```sh
//! cargo run -p histograph --example build_region_graph
//! ```

use histograph::raster::RgbImage;
use histograph::superpixel::{build_rag, slic, target_region_count, SlicParams};
use histograph::tissue::{segment_tissue, MaskParams};

fn main() -> histograph::Result<()> {
    // Two color regions under one mask; SLIC boundaries follow the color edge.
    let mut img = RgbImage::filled(80, 60, [205, 125, 160]);
    for y in 0..60u32 {
        for x in 40..80u32 {
            img.set_pixel(x, y, [140, 170, 120]);
        }
    }
    let mask = segment_tissue(&img, &MaskParams::default())?;

    // The magnification-aware targeting rule maps tissue area to a region count; at
    // desk scale both magnifications are 1 and we target 20 px regions.
    let k = target_region_count(mask.area(), 1.0, 1.0, 20)?;
    println!("tissue area {} px -> K = {k}", mask.area());

    let labels = slic(&img, &mask, k, &SlicParams::default())?;
    let graph = build_rag(&labels);
    println!(
        "label map has {} regions; graph has {} nodes / {} edges",
        labels.region_count(),
        graph.nodes.len(),
        graph.edges.len()
    );
    for node in graph.nodes.iter().take(4) {
        println!(
            "  region {:>2}: {:>4} px, bbox ({}, {})..({}, {})",
            node.id, node.pixel_count, node.bbox.x0, node.bbox.y0, node.bbox.x1, node.bbox.y1
        );
    }

    let dir = std::env::temp_dir();
    labels.save_png16(&dir.join("histograph-example-labels.png"))?;
    graph.save_json(&dir.join("histograph-example-graph.json"))?;
    println!("artifacts written to {}", dir.display());
    Ok(())
}
