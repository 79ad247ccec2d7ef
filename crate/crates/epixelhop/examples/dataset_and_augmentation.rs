//! CIFAR-10 ingestion and eightfold augmentation.
//!
//! Parses a batch (a synthetic in-memory one, or a real `data_batch_1.bin`
//! when a directory is given), then walks one image through the eight
//! deterministic variants.
//!
//!     cargo run --release --example dataset_and_augmentation [cifar_dir]

use epixelhop::dataset::{
    augment_eightfold, augment_specs, parse_cifar10_batch, write_cifar10_batch,
};
use epixelhop::synth::synthetic_images;

fn main() {
    let images = match std::env::args().nth(1) {
        Some(dir) => {
            let path = std::path::Path::new(&dir).join("data_batch_1.bin");
            let bytes = std::fs::read(&path).expect("readable batch file");
            let images = parse_cifar10_batch(&bytes).expect("valid CIFAR-10 batch");
            println!("parsed {} records from {}", images.len(), path.display());
            images
        }
        None => {
            let images = synthetic_images(10, 3, 42, 0);
            let bytes = write_cifar10_batch(&images);
            let reparsed = parse_cifar10_batch(&bytes).expect("round-trip");
            assert_eq!(write_cifar10_batch(&reparsed), bytes);
            println!(
                "no directory given; built {} synthetic records ({} bytes, round-trip exact)",
                reparsed.len(),
                bytes.len()
            );
            reparsed
        }
    };

    let img = &images[0];
    println!(
        "image id {} label {:?}, intensity range [{:.3}, {:.3}]",
        img.id,
        img.label,
        img.pixels.iter().cloned().fold(f64::INFINITY, f64::min),
        img.pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );

    let seed = 7;
    let specs = augment_specs(img.id, seed);
    let variants = augment_eightfold(img, seed).expect("augmentation");
    println!("\neight variants (seed {seed}):");
    for (spec, variant) in specs.iter().zip(&variants) {
        let mean: f64 = variant.pixels.iter().sum::<f64>() / variant.pixels.len() as f64;
        println!(
            "  {:<13} crop {:?}@{:?} gain {:<4} -> 32x32, mean intensity {mean:.4}",
            format!("{:?}", spec.variant_kind),
            spec.crop_size,
            spec.crop_origin,
            spec.contrast_gain,
        );
    }
    assert_eq!(variants[0].pixels, img.pixels, "variant 0 is the identity");
    println!("\nvariant 0 equals the input bit-exactly; all variants stay in [0,1]");
}
