//! The random-search protocol: log-uniform sampling of learning rate and
//! weight decay, several seeded instances per trial, selection on validation,
//! and test reporting for the winner only.
//!
//! ```sh
//! cargo run -p histograph --example search_hyperparameters
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use histograph::eval::{auc_macro, predict_split, random_search, SearchSpace};
use histograph::gnn::{GatModel, GraphBatch, TrainConfig};

fn planted_dataset(n: usize, seed: u64) -> Vec<(GraphBatch, u8)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let base = if label == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            let feats: Vec<Vec<f64>> = (0..4)
                .map(|_| {
                    vec![
                        base[0] + rng.gen_range(-0.2..0.2),
                        base[1] + rng.gen_range(-0.2..0.2),
                    ]
                })
                .collect();
            (
                GraphBatch::single(feats, &[(0, 1), (1, 2), (2, 3)]).unwrap(),
                label,
            )
        })
        .collect()
}

fn metric(model: &GatModel, data: &[(GraphBatch, u8)]) -> histograph::Result<f64> {
    let (probs, _, labels) = predict_split(model, data)?;
    auc_macro(&probs, &labels)
}

fn main() -> histograph::Result<()> {
    let train = planted_dataset(32, 1);
    let val = planted_dataset(12, 2);
    let test = planted_dataset(12, 3);

    let base = TrainConfig {
        epochs: 40,
        batch_size: 8,
        hidden_dim: 8,
        layers: 2,
        heads: 2,
        dropout: 0.1,
        ..TrainConfig::default()
    };
    let space = SearchSpace {
        trials: 5,
        instances: 3,
        ..SearchSpace::default()
    };
    let outcome = random_search(&train, &val, &test, &base, &space, 7, metric)?;

    println!("trial  lr          wd          mean val AUC");
    for t in &outcome.trials {
        let mean = t.val_scores.iter().sum::<f64>() / t.val_scores.len() as f64;
        let marker = if t.trial == outcome.best_trial { " <- best" } else { "" };
        println!(
            "{:>5}  {:<10.4e}  {:<10.4e}  {:>6.1}{marker}",
            t.trial, t.learning_rate, t.weight_decay, mean
        );
    }
    println!(
        "\nwinner on held-out test: {:.1} +/- {:.1} over {} instances",
        outcome.test_mean,
        outcome.test_std,
        outcome.best_models.len()
    );
    Ok(())
}
