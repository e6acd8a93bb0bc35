//! Integrated-gradients explanation of a trained prediction: per-region
//! importance, named feature attributions with training-set percentiles, and
//! a heat overlay rendered back onto the slide.
//!
//! ```sh
//! cargo run -p histograph --example explain_prediction
//! ```

use histograph::config::RunConfig;
use histograph::pipeline::{explain_slide, run_pipeline, TrainMode};
use histograph::synth::{self, SynthParams};

fn main() -> histograph::Result<()> {
    let root = std::env::temp_dir().join("histograph-example-explain");
    let _ = std::fs::remove_dir_all(&root);
    let manifest = synth::generate(
        &root.join("data"),
        &SynthParams {
            slides: 60,
            seed: 7,
            size: 96,
        },
    )?;

    let mut cfg = RunConfig::default();
    cfg.superpixel.target_side = 16;
    cfg.superpixel.seg_mag = 1.0;
    cfg.superpixel.ref_mag = 1.0;
    cfg.train.epochs = 50;
    cfg.train.batch_size = 8;
    cfg.train.hidden_dim = 16;
    cfg.train.layers = 2;
    cfg.train.heads = 2;
    cfg.train.dropout = 0.1;
    cfg.train.learning_rate = 3e-3;

    let run_dir = root.join("run");
    run_pipeline(&manifest, &cfg, &run_dir, None, TrainMode::Single)?;

    // A held-out dense-nuclei slide; attribute its predicted class.
    let report = explain_slide(&run_dir, &manifest, "synth0009", None, 64, 8)?;
    println!(
        "slide synth0009: predicted class {} with p = {:.4}",
        report.target_class, report.predicted_probabilities[report.target_class]
    );
    println!(
        "completeness gap {:.3e} against output delta {:.4}",
        report.completeness_gap, report.output_delta
    );
    println!("\nmost influential regions:");
    let mut nodes = report.node_importance.clone();
    nodes.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    for (id, importance) in nodes.iter().take(3) {
        println!("  region {id}: importance {importance:.4}");
    }
    println!("\ntop attributed features (value vs training percentile):");
    for f in &report.top_features {
        println!(
            "  {:<44} {:+.4}  value {:>10.3}  pct {:>3.0}",
            f.name, f.attribution, f.region_value, f.training_percentile
        );
    }
    println!(
        "\noverlay PNG at {}",
        run_dir.join("explain/synth0009/overlay.png").display()
    );
    Ok(())
}
