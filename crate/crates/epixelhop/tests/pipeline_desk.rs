//! Desk-scale end-to-end runs of the two-stage pipeline on synthetic data:
//! structural contracts (feature widths, map shapes), evaluation invariants,
//! and determinism across runs and thread counts.

use epixelhop::cascade::{CascadeConfig, SelectionMode};
use epixelhop::gbdt::GbdtParams;
use epixelhop::pipeline::{
    build_confusion_sets, evaluate, predict_stage1, train_pair_model, train_stage1, PipelineConfig,
    Stage1Model,
};
use epixelhop::store::{self, Bundle};
use epixelhop::synth::synthetic_split;

/// Small-cap cascades: the hop geometry (and so every label-grid size) is the
/// standard one, while fitting stays quick.
fn desk_config(class_count: usize, seed: u64) -> PipelineConfig {
    let caps = [Some(12), Some(24), Some(32), Some(32)];
    PipelineConfig {
        seed,
        class_count,
        cascade_p: CascadeConfig::four_hop(SelectionMode::FixedK, 1e-12, 1e-12, caps),
        cascade_q: CascadeConfig::four_hop(SelectionMode::FixedK, 1e-12, 1e-12, caps),
        gbdt: GbdtParams {
            rounds: 8,
            max_depth: 3,
            learning_rate: 0.2,
            min_leaf_samples: 2,
            subsample_fraction: 1.0,
            lambda: 1.0,
            seed,
        },
        num_iter_stage1: 1,
        num_iter_stage2: 3,
        augment: true,
        resolve_top_k: class_count * (class_count - 1) / 2,
    }
}

fn meta_width_of(model: &Stage1Model) -> usize {
    model.meta.feature_width
}

#[test]
fn two_class_two_stage_end_to_end() {
    let (train, test) = synthetic_split(2, 40, 12, 41);
    let config = desk_config(2, 7);
    let stage1 = train_stage1(&train, &config).unwrap();

    // 83 label nodes per channel (49 + 25 + 9), one stored component each.
    assert_eq!(meta_width_of(&stage1), 166);
    assert_eq!(stage1.meta_p.feature_width, 83);

    // Stage-1 predictions live on the simplex and average over 8 variants.
    let soft = predict_stage1(&stage1, &test[0]).unwrap();
    assert_eq!(soft.len(), 2);
    assert!((soft.iter().sum::<f64>() - 1.0).abs() < 1e-6);

    // One pair model over the unpooled grids.
    let pair = train_pair_model((0, 1), &train, &stage1).unwrap();
    assert_eq!(pair.meta.feature_width, 2 * (225 + 25 + 9));
    // Cross-hop update classifiers consume 4 * (C-1) aggregates.
    for round in &pair.sls_p.updates {
        for model in round {
            assert_eq!(model.feature_width, 4);
        }
    }
    assert_eq!(pair.sls_p.updates.len(), 2, "num_iter 3 = init + 2 updates");
    // Label grids: 15x15, 5x5, 3x3, scalar.
    let report = evaluate(&stage1, &[pair], &test).unwrap();

    // Evaluation invariants.
    assert!((0.0..=1.0).contains(&report.top1));
    assert!(report.top1 <= report.top2 + 1e-12);
    assert!(
        report.final_accuracy <= report.top2 + 1e-12,
        "two-stage accuracy {} exceeded the stage-1 top-2 bound {}",
        report.final_accuracy,
        report.top2
    );
    assert_eq!(
        report.curve[0].1, report.top1,
        "curve starts at stage-1 top-1"
    );
    let member_total: usize = report.pair_outcomes.iter().map(|p| p.members).sum();
    assert_eq!(
        member_total,
        test.len(),
        "confusion sets partition the test set"
    );
    for r in 0..2 {
        let row_sum: f64 = (0..2).map(|c| report.confusion[[r, c]]).sum();
        assert!((row_sum - 1.0).abs() < 1e-9);
    }
    // The synthetic classes are separable; the desk run should learn them.
    assert!(
        report.top1 >= 0.6,
        "stage-1 top-1 {} below sanity floor",
        report.top1
    );
    // With C = 2, top-2 covers everything.
    assert_eq!(report.top2, 1.0);
}

#[test]
fn four_class_stage1_widths_and_channel_rows() {
    let (train, test) = synthetic_split(4, 30, 8, 43);
    let config = desk_config(4, 11);
    let stage1 = train_stage1(&train, &config).unwrap();

    // 2 channels x 83 nodes x (C-1) components.
    assert_eq!(meta_width_of(&stage1), 2 * 83 * 3);

    let report = evaluate(&stage1, &[], &test).unwrap();
    assert_eq!(report.channel_rows.len(), 3);
    let names: Vec<&str> = report.channel_rows.iter().map(|r| r.0.as_str()).collect();
    assert_eq!(names, vec!["P", "Q", "P+Q"]);
    // No pair models: the final decision equals stage-1 top-1.
    assert_eq!(report.final_accuracy, report.top1);
    for r in 0..4 {
        let row_sum: f64 = (0..4).map(|c| report.confusion[[r, c]]).sum();
        assert!((row_sum - 1.0).abs() < 1e-9);
    }
}

#[test]
fn augmentation_off_trains_on_single_variant() {
    let (train, test) = synthetic_split(2, 24, 4, 47);
    let mut config = desk_config(2, 3);
    config.augment = false;
    let stage1 = train_stage1(&train, &config).unwrap();
    let soft = predict_stage1(&stage1, &test[0]).unwrap();
    assert!((soft.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    // Augmentation flips only the variant count; widths are unchanged.
    assert_eq!(meta_width_of(&stage1), 166);
}

#[test]
fn deterministic_across_runs_and_thread_counts() {
    let (train, test) = synthetic_split(2, 24, 6, 53);
    let config = desk_config(2, 19);

    let run = |threads: usize| -> (Vec<u8>, Vec<u8>, Vec<Vec<f64>>) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let stage1 = train_stage1(&train, &config).unwrap();
            let pair = train_pair_model((0, 1), &train, &stage1).unwrap();
            let softs: Vec<Vec<f64>> = test
                .iter()
                .map(|img| predict_stage1(&stage1, img).unwrap())
                .collect();
            (
                store::to_bytes(&Bundle::Stage1(Box::new(stage1))),
                store::to_bytes(&Bundle::Pairs(vec![pair])),
                softs,
            )
        })
    };

    let (s1_a, pairs_a, soft_a) = run(1);
    let (s1_b, pairs_b, soft_b) = run(2);
    assert_eq!(
        s1_a, s1_b,
        "stage-1 container bytes differ across thread counts"
    );
    assert_eq!(
        pairs_a, pairs_b,
        "pair container bytes differ across thread counts"
    );
    assert_eq!(soft_a, soft_b, "predictions differ across thread counts");
}

#[test]
fn store_roundtrip_preserves_predictions() {
    let (train, test) = synthetic_split(2, 24, 6, 59);
    let config = desk_config(2, 23);
    let stage1 = train_stage1(&train, &config).unwrap();
    let pair = train_pair_model((0, 1), &train, &stage1).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let s1_path = dir.path().join("stage1.epx");
    let pairs_path = dir.path().join("pairs.epx");
    store::save(&Bundle::Stage1(Box::new(stage1.clone())), &s1_path).unwrap();
    store::save(&Bundle::Pairs(vec![pair.clone()]), &pairs_path).unwrap();

    // Saving twice produces identical bytes.
    let bytes_a = std::fs::read(&s1_path).unwrap();
    store::save(&Bundle::Stage1(Box::new(stage1.clone())), &s1_path).unwrap();
    assert_eq!(bytes_a, std::fs::read(&s1_path).unwrap());

    let loaded1 = match store::load(&s1_path).unwrap() {
        Bundle::Stage1(m) => *m,
        _ => panic!("wrong bundle kind"),
    };
    let loaded_pairs = match store::load(&pairs_path).unwrap() {
        Bundle::Pairs(p) => p,
        _ => panic!("wrong bundle kind"),
    };
    assert_eq!(loaded_pairs[0], pair);
    for img in &test {
        let a = predict_stage1(&stage1, img).unwrap();
        let b = predict_stage1(&loaded1, img).unwrap();
        assert_eq!(a, b, "loaded model predictions not bit-identical");
    }

    // Truncation is caught by the integrity checks.
    let mut corrupt = std::fs::read(&s1_path).unwrap();
    corrupt.truncate(corrupt.len() - 10);
    std::fs::write(&s1_path, &corrupt).unwrap();
    assert!(store::load(&s1_path).is_err());
}

/// The smoothing-ablation protocol (intra-hop-only versus full smoothing
/// over shared cascades) at toy scale: exercises the exact code path the
/// data-gated acceptance criterion uses.
#[test]
fn smoothing_ablation_protocol_runs() {
    use epixelhop::cascade::fit_cascade;
    use epixelhop::color::{fit_color_pca, project_pq};
    use epixelhop::dataset::LabeledImage;
    use epixelhop::pipeline::{predict_pair_in, train_binary_model, SharedContext};
    use epixelhop::smoothing::InitStyle;
    use ndarray::Array2;

    let (train, test) = synthetic_split(2, 24, 6, 67);
    let members: Vec<&LabeledImage> = train.iter().collect();
    let labels: Vec<usize> = members.iter().map(|i| i.label.unwrap()).collect();

    let config = desk_config(2, 13);
    let color_pca = fit_color_pca(&train).unwrap();
    let p_maps: Vec<Array2<f64>> = train.iter().map(|i| project_pq(i, &color_pca).0).collect();
    let q_maps: Vec<Array2<f64>> = train.iter().map(|i| project_pq(i, &color_pca).1).collect();
    let cascade_p = fit_cascade(&p_maps, &config.cascade_p).unwrap();
    let cascade_q = fit_cascade(&q_maps, &config.cascade_q).unwrap();
    let ctx = SharedContext {
        color_pca: &color_pca,
        cascade_p: &cascade_p,
        cascade_q: &cascade_q,
        config: &config,
    };

    let intra =
        train_binary_model(ctx, (0, 1), &members, &labels, InitStyle::FeaturesOnly, 1).unwrap();
    assert_eq!(intra.sls_p.init_style, InitStyle::FeaturesOnly);
    assert!(intra.sls_p.updates.is_empty());
    // Intra-hop initialization sees the hop features alone.
    assert_eq!(
        intra.sls_p.init[1].feature_width,
        cascade_p.output_shapes[2].2
    );

    let full = train_binary_model(
        ctx,
        (0, 1),
        &members,
        &labels,
        InitStyle::WithChildLabels,
        3,
    )
    .unwrap();
    assert_eq!(full.sls_p.updates.len(), 2);
    assert_eq!(
        full.sls_p.init[1].feature_width,
        cascade_p.output_shapes[2].2 + 1
    );

    for model in [&intra, &full] {
        for img in &test {
            let scores = predict_pair_in(ctx, model, img).unwrap();
            assert!((scores[0] + scores[1] - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn confusion_set_routing_in_two_stage_prediction() {
    let (train, test) = synthetic_split(3, 24, 6, 61);
    let config = desk_config(3, 29);
    let stage1 = train_stage1(&train, &config).unwrap();
    let decisions: Vec<(u64, Vec<f64>)> = test
        .iter()
        .map(|img| (img.id, predict_stage1(&stage1, img).unwrap()))
        .collect();
    let sets = build_confusion_sets(&decisions);
    let member_total: usize = sets.iter().map(|s| s.member_ids.len()).sum();
    assert_eq!(member_total, test.len());
    for s in &sets {
        assert!(s.pair.0 < s.pair.1 && s.pair.1 < 3);
    }
}
