//! The boosted-tree soft classifier on two toy problems: linearly separable
//! blobs and XOR corner clusters, with the training-loss trace.
//!
//!     cargo run --release --example gbdt_basics

use epixelhop::gbdt::{fit, BoostedModel, GbdtParams, TrainMatrix};
use epixelhop::rng::DetRng;

fn accuracy(model: &BoostedModel, data: &TrainMatrix) -> f64 {
    (0..data.sample_count())
        .filter(|&i| {
            let p = model.predict_proba_row(data.row(i)).unwrap();
            let pred = (p[1] > p[0]) as usize;
            pred == data.targets()[i]
        })
        .count() as f64
        / data.sample_count() as f64
}

fn main() {
    let params = GbdtParams {
        rounds: 60,
        max_depth: 3,
        learning_rate: 0.1,
        min_leaf_samples: 2,
        subsample_fraction: 1.0,
        lambda: 1.0,
        seed: 9,
    };

    // Separable blobs.
    let mut rng = DetRng::new(1, 0);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for i in 0..200 {
        let class = i % 2;
        rows.push(if class == 0 { -1.5 } else { 1.5 } + rng.next_f64() - 0.5);
        rows.push(rng.next_f64() * 4.0 - 2.0);
        targets.push(class);
    }
    let blobs = TrainMatrix::new(rows, 2, targets, 2).unwrap();
    let model = fit(&blobs, &params).unwrap();
    println!(
        "separable blobs: training accuracy {:.3}",
        accuracy(&model, &blobs)
    );

    // XOR corners: no single axis split helps, depth 2 plus boosting does.
    let mut rng = DetRng::new(2, 0);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for i in 0..400 {
        let corner = i % 4;
        let sx = if corner & 1 == 0 { -1.0 } else { 1.0 };
        let sy = if corner & 2 == 0 { -1.0 } else { 1.0 };
        rows.push(sx + (rng.next_f64() - 0.5) * 0.6);
        rows.push(sy + (rng.next_f64() - 0.5) * 0.6);
        targets.push(((sx > 0.0) ^ (sy > 0.0)) as usize);
    }
    let xor = TrainMatrix::new(rows, 2, targets, 2).unwrap();
    let xor_params = GbdtParams {
        max_depth: 2,
        ..params
    };
    let model = fit(&xor, &xor_params).unwrap();
    println!(
        "xor corners:     training accuracy {:.3}",
        accuracy(&model, &xor)
    );

    println!("\ntraining log-loss by round (xor):");
    for (r, loss) in model.train_loss.iter().enumerate().step_by(10) {
        let bar = "#".repeat((loss * 60.0) as usize);
        println!("  round {r:>3}  {loss:.4}  {bar}");
    }
    let probe = model.predict_proba_row(&[1.0, -1.0]).unwrap();
    println!(
        "\nP(class | corner (+1, -1)) = [{:.4}, {:.4}]",
        probe[0], probe[1]
    );
}
