//! Hyperparameter ablations: sweep the merge threshold tau and the pruning
//! threshold xi, reusing every cached upstream stage that stays valid.
//!
//! ```sh
//! cargo run -p histograph --example ablation_sweep
//! ```

use histograph::config::RunConfig;
use histograph::pipeline::{sweep, SweepParam};
use histograph::synth::{self, SynthParams};

fn main() -> histograph::Result<()> {
    let root = std::env::temp_dir().join("histograph-example-sweep");
    let _ = std::fs::remove_dir_all(&root);
    let manifest = synth::generate(
        &root.join("data"),
        &SynthParams {
            slides: 40,
            seed: 13,
            size: 96,
        },
    )?;

    let mut cfg = RunConfig::default();
    cfg.superpixel.target_side = 16;
    cfg.superpixel.seg_mag = 1.0;
    cfg.superpixel.ref_mag = 1.0;
    cfg.train.epochs = 40;
    cfg.train.batch_size = 8;
    cfg.train.hidden_dim = 12;
    cfg.train.layers = 2;
    cfg.train.heads = 2;
    cfg.train.dropout = 0.1;
    cfg.train.learning_rate = 3e-3;

    let tau = sweep(
        &manifest,
        &cfg,
        SweepParam::Tau,
        &[0.5, 0.8, 0.9, 0.95, 1.0],
        &root.join("tau"),
    )?;
    println!("merge-threshold sweep (coarser graphs at lower tau):\n{}", tau.render());

    let xi = sweep(
        &manifest,
        &cfg,
        SweepParam::Xi,
        &[0.95, 0.99, 1.0],
        &root.join("xi"),
    )?;
    println!("pruning-threshold sweep:\n{}", xi.render());
    Ok(())
}
