//! Survival tooling: discretizing times into risk groups, the concordance
//! index, and the two-sample t-test used to compare scored model variants.
//!
//! ```sh
//! cargo run -p histograph --example survival_metrics
//! ```

use histograph::eval::{c_index, discretize_survival, expected_risk, t_test};

fn main() -> histograph::Result<()> {
    // Eight uncensored subjects plus two censored ones.
    let times = [120.0, 950.0, 430.0, 210.0, 880.0, 360.0, 700.0, 90.0, 500.0, 1000.0];
    let events = [true, true, true, true, true, true, true, true, false, false];
    let bins = discretize_survival(&times, &events, 4)?;
    println!("survival bins (0 = earliest quartile): {bins:?}");

    // A well-ordered risk score: shorter survival scores higher.
    let risks: Vec<f64> = times.iter().map(|t| 1000.0 - t).collect();
    println!("c-index of an oracle risk: {:.1}", c_index(&risks, &times, &events)?);
    let noisy: Vec<f64> = risks
        .iter()
        .enumerate()
        .map(|(i, &r)| r + if i % 3 == 0 { 400.0 } else { 0.0 })
        .collect();
    println!("c-index of a noisy risk:  {:.1}", c_index(&noisy, &times, &events)?);

    // Risk from classifier probabilities: expected bin index.
    let probs = [0.1, 0.2, 0.3, 0.4];
    println!("expected bin of {probs:?} = {:.2}", expected_risk(&probs));

    // Model comparison on five paired scores.
    let ours = [62.9, 63.4, 61.8, 64.0, 62.2];
    let baseline = [52.7, 55.0, 49.9, 56.4, 53.1];
    println!(
        "t-test p-value between score sets: {:.5}",
        t_test(&ours, &baseline)?
    );
    Ok(())
}
