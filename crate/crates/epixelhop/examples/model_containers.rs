//! Persistence: save a trained model to the single-file container format,
//! read its chunk directory back, and verify predictions survive the round
//! trip bit for bit.
//!
//!     cargo run --release --example model_containers

use epixelhop::cascade::{CascadeConfig, SelectionMode};
use epixelhop::gbdt::GbdtParams;
use epixelhop::pipeline::{predict_stage1, train_stage1, PipelineConfig};
use epixelhop::store::{self, chunk_kind, Bundle};
use epixelhop::synth::synthetic_split;

fn main() {
    let (train, test) = synthetic_split(2, 24, 4, 33);
    let caps = [Some(10), Some(16), Some(24), Some(24)];
    let config = PipelineConfig {
        seed: 3,
        class_count: 2,
        cascade_p: CascadeConfig::four_hop(SelectionMode::FixedK, 1e-12, 1e-12, caps),
        cascade_q: CascadeConfig::four_hop(SelectionMode::FixedK, 1e-12, 1e-12, caps),
        gbdt: GbdtParams {
            rounds: 6,
            max_depth: 3,
            learning_rate: 0.2,
            min_leaf_samples: 2,
            subsample_fraction: 1.0,
            lambda: 1.0,
            seed: 3,
        },
        num_iter_stage1: 1,
        num_iter_stage2: 2,
        augment: false,
        resolve_top_k: 1,
    };
    let model = train_stage1(&train, &config).unwrap();
    let before: Vec<Vec<f64>> = test
        .iter()
        .map(|img| predict_stage1(&model, img).unwrap())
        .collect();

    let path = std::env::temp_dir().join("epixelhop_demo_stage1.epx");
    store::save(&Bundle::Stage1(Box::new(model)), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    println!("wrote {} ({} bytes)", path.display(), bytes.len());

    println!("\nchunk directory:");
    println!(
        "  {:<14} {:>8} {:>10} {:>10}",
        "kind", "offset", "length", "crc32"
    );
    for info in store::read_manifest(&bytes).unwrap() {
        println!(
            "  {:<14} {:>8} {:>10} {:>10x}",
            chunk_kind::name(info.kind),
            info.offset,
            info.len,
            info.crc32
        );
    }

    let reloaded = match store::load(&path).unwrap() {
        Bundle::Stage1(m) => *m,
        _ => unreachable!(),
    };
    for (img, expect) in test.iter().zip(&before) {
        let got = predict_stage1(&reloaded, img).unwrap();
        assert_eq!(&got, expect, "prediction changed across the round trip");
    }
    println!(
        "\nreloaded model reproduces all {} predictions bit-exactly",
        test.len()
    );

    // Saving the same bundle twice produces identical bytes.
    let path2 = std::env::temp_dir().join("epixelhop_demo_stage1_again.epx");
    store::save(&Bundle::Stage1(Box::new(reloaded)), &path2).unwrap();
    assert_eq!(bytes, std::fs::read(&path2).unwrap());
    println!("container bytes are stable across saves");
}
