//! Color decorrelation: fit the 3x3 pixel PCA and project onto the two
//! leading principal channels.
//!
//! With the CIFAR-10 training set the first two energy fractions land near
//! 0.911 and 0.074.
//!
//!     cargo run --release --example color_pca [cifar_dir]

use epixelhop::color::{fit_color_pca, project_pq};
use epixelhop::dataset::load_cifar10_train;
use epixelhop::synth::synthetic_images;

fn main() {
    let images = match std::env::args().nth(1) {
        Some(dir) => {
            let images = load_cifar10_train(std::path::Path::new(&dir)).expect("load train set");
            println!("fit on {} CIFAR-10 training images", images.len());
            images
        }
        None => {
            let images = synthetic_images(10, 50, 3, 0);
            println!(
                "no directory given; fit on {} synthetic images",
                images.len()
            );
            images
        }
    };

    let pca = fit_color_pca(&images).expect("color PCA");
    println!("\nper-channel pixel mean: {:.4}", pca.mean);
    println!("principal directions (rows):");
    for r in 0..3 {
        println!(
            "  [{:+.4} {:+.4} {:+.4}]  energy fraction {:.4}",
            pca.basis[[r, 0]],
            pca.basis[[r, 1]],
            pca.basis[[r, 2]],
            pca.energy_fractions[r]
        );
    }

    // Pooled variance of the projections confirms the ordering; over the
    // fitting set the two leading channels are exactly decorrelated.
    let (mut ps, mut qs) = (Vec::new(), Vec::new());
    for img in &images {
        let (p, q) = project_pq(img, &pca);
        ps.extend(p);
        qs.extend(q);
    }
    let stats = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (
            m,
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64,
        )
    };
    let (mp, vp) = stats(&ps);
    let (mq, vq) = stats(&qs);
    let cov = ps
        .iter()
        .zip(&qs)
        .map(|(p, q)| (p - mp) * (q - mq))
        .sum::<f64>()
        / ps.len() as f64;
    println!("\nprojected onto the two leading channels:");
    println!("  var(first)  = {vp:.6}");
    println!("  var(second) = {vq:.6}");
    println!("  cov(first, second) = {cov:.2e}  (decorrelated)");
}
