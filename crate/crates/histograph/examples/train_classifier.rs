//! Full pipeline on the synthetic benchmark: masking, graphs, coarsening,
//! features, pruning, GAT training, and held-out metrics.
//!
//! ```sh
//! cargo run -p histograph --example train_classifier
//! ```

use histograph::config::RunConfig;
use histograph::pipeline::{run_pipeline, TrainMode};
use histograph::synth::{self, SynthParams};

fn main() -> histograph::Result<()> {
    let root = std::env::temp_dir().join("histograph-example-train");
    let _ = std::fs::remove_dir_all(&root);

    let manifest = synth::generate(
        &root.join("data"),
        &SynthParams {
            slides: 80,
            seed: 7,
            size: 96,
        },
    )?;
    println!("synthetic manifest at {}", manifest.display());

    let mut cfg = RunConfig::default();
    cfg.superpixel.target_side = 16;
    cfg.superpixel.seg_mag = 1.0;
    cfg.superpixel.ref_mag = 1.0;
    cfg.coarsen.tau = 0.9;
    cfg.features.xi = 0.99;
    cfg.train.epochs = 60;
    cfg.train.batch_size = 8;
    cfg.train.hidden_dim = 16;
    cfg.train.layers = 2;
    cfg.train.heads = 2;
    cfg.train.dropout = 0.1;
    cfg.train.learning_rate = 3e-3;

    let summary = run_pipeline(&manifest, &cfg, &root.join("run"), None, TrainMode::Single)?;
    println!(
        "processed {} slides; mean coarse node count {:.1}",
        summary.slides.len(),
        summary.slides.iter().map(|s| s.coarse_nodes as f64).sum::<f64>()
            / summary.slides.len() as f64
    );
    let metrics = summary.metrics.expect("trained metrics");
    println!("\nheld-out test metrics:");
    print!("{}", metrics.render());
    println!("\nartifacts (model.ckpt, catalog.json, metrics.json) in {}", root.join("run").display());
    Ok(())
}
