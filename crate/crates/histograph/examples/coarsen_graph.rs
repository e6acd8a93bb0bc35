//! Embedding-guided greedy coarsening: adjacent regions merge while their
//! cosine similarity exceeds tau, and the trace replays onto the label map.
//!
//! ```sh
//! cargo run -p histograph --example coarsen_graph
//! ```

use histograph::coarsen::{coarsen, flatten_labels, resolve_embeddings, EmbeddingSource};
use histograph::raster::RgbImage;
use histograph::superpixel::{build_rag, slic, SlicParams};
use histograph::tissue::{segment_tissue, MaskParams};

fn main() -> histograph::Result<()> {
    // Left half homogeneous, right half a patchwork of distinct tones: the
    // homogeneous side collapses into few nodes while the heterogeneous side
    // keeps its granularity.
    let mut img = RgbImage::filled(80, 60, [205, 125, 160]);
    let palette = [
        [90u8, 160, 110],
        [70, 110, 190],
        [200, 170, 80],
        [160, 80, 80],
        [120, 190, 180],
        [180, 120, 200],
    ];
    for y in 0..60u32 {
        for x in 40..80u32 {
            let tile = ((x - 40) / 14 + (y / 15) * 3) as usize;
            img.set_pixel(x, y, palette[tile % palette.len()]);
        }
    }
    let mask = segment_tissue(&img, &MaskParams::default())?;
    let labels = slic(&img, &mask, 24, &SlicParams::default())?;
    let graph = build_rag(&labels);
    let embeddings = resolve_embeddings(&EmbeddingSource::Builtin, &img, &labels, &graph)?;

    for tau in [0.8, 0.9, 0.95] {
        let (coarse, trace) = coarsen(&graph, &embeddings, tau)?;
        println!(
            "tau = {tau}: {} -> {} nodes ({} merges)",
            graph.nodes.len(),
            coarse.nodes.len(),
            trace.steps.len()
        );
    }

    let (coarse, trace) = coarsen(&graph, &embeddings, 0.9)?;
    println!("\nfirst merges at tau = 0.9 (most similar pairs first):");
    for step in trace.steps.iter().take(5) {
        println!(
            "  {} + {} -> {} (similarity {:.4})",
            step.a, step.b, step.new_id, step.similarity
        );
    }
    let flat = flatten_labels(&labels, &trace)?;
    println!(
        "flattened label map carries {} distinct super-node ids",
        flat.region_count()
    );
    println!("pixel totals conserved: {}", coarse.total_pixels() == mask.area());
    Ok(())
}
