//! Supervised label smoothing on a toy two-class problem: build the local
//! graph over the label grids, initialize soft labels per hop, run cross-hop
//! updates, and export the per-hop heatmaps.
//!
//!     cargo run --release --example label_smoothing

use epixelhop::cascade::{fit_cascade, CascadeConfig, SelectionMode};
use epixelhop::color::{fit_color_pca, project_pq};
use epixelhop::gbdt::GbdtParams;
use epixelhop::graph::{build_local_graph, graph_spec_for, stage2_selections};
use epixelhop::heatmap::write_label_heatmap;
use epixelhop::smoothing::{infer_labels, init_labels, sls_update, train_sls, InitStyle};
use epixelhop::synth::synthetic_split;
use ndarray::Array2;

fn confidence_summary(maps: &[ndarray::Array3<f64>]) -> String {
    maps.iter()
        .map(|g| {
            let (s, _, _) = g.dim();
            let mean: f64 = g.iter().sum::<f64>() / g.len() as f64;
            format!("{s}x{s}: {mean:.3}")
        })
        .collect::<Vec<_>>()
        .join("  ")
}

fn main() {
    let (train, test) = synthetic_split(2, 30, 4, 5);
    let labels: Vec<usize> = train.iter().map(|i| i.label.unwrap()).collect();

    let pca = fit_color_pca(&train).unwrap();
    let maps: Vec<Array2<f64>> = train.iter().map(|i| project_pq(i, &pca).0).collect();
    let config = CascadeConfig::four_hop(
        SelectionMode::FixedK,
        1e-12,
        1e-12,
        [Some(10), Some(16), Some(24), Some(24)],
    );
    let cascade = fit_cascade(&maps, &config).unwrap();

    // Label grids on the unpooled hops: 15x15, 5x5, 3x3.
    let selections = stage2_selections(&config);
    let spec = graph_spec_for(&config, 32, &selections).unwrap();
    println!("label grids: {:?}", spec.sides);
    let graph = build_local_graph(&spec).unwrap();
    let center = graph.node(1, 2, 2);
    println!(
        "a mid-level node sees {} children, {} siblings, {} parents",
        center.children.len(),
        center.siblings.len(),
        center.parents.len()
    );

    let features: Vec<Vec<ndarray::Array3<f64>>> = maps
        .iter()
        .map(|m| {
            let feats = epixelhop::cascade::apply_cascade(m, &cascade).unwrap();
            selections
                .iter()
                .map(|sel| {
                    if sel.pooled {
                        feats.hops[sel.hop].pooled.clone().unwrap()
                    } else {
                        feats.hops[sel.hop].raw.clone()
                    }
                })
                .collect()
        })
        .collect();

    let params = GbdtParams {
        rounds: 10,
        max_depth: 3,
        learning_rate: 0.2,
        min_leaf_samples: 2,
        subsample_fraction: 1.0,
        lambda: 1.0,
        seed: 3,
    };
    let (classifiers, _train_maps) = train_sls(
        &features,
        &labels,
        2,
        &graph,
        InitStyle::WithChildLabels,
        3,
        &params,
    )
    .unwrap();

    // Walk one held-out image through initialization and the update rounds.
    let probe = &test[0];
    let probe_map = project_pq(probe, &pca).0;
    let feats = epixelhop::cascade::apply_cascade(&probe_map, &cascade).unwrap();
    let probe_features: Vec<ndarray::Array3<f64>> = selections
        .iter()
        .map(|sel| {
            if sel.pooled {
                feats.hops[sel.hop].pooled.clone().unwrap()
            } else {
                feats.hops[sel.hop].raw.clone()
            }
        })
        .collect();

    let mut maps = init_labels(&probe_features, &graph, &classifiers).unwrap();
    println!(
        "\nheld-out image (class {:?}), mean class-0 confidence per grid:",
        probe.label
    );
    println!("  after initialization   {}", confidence_summary(&maps));
    for k in 1..=classifiers.update_rounds() {
        sls_update(&mut maps, &graph, &classifiers, 1).unwrap();
        println!("  after update round {k}   {}", confidence_summary(&maps));
    }

    let final_maps = infer_labels(&probe_features, &graph, &classifiers).unwrap();
    let out_dir = std::env::temp_dir().join("epixelhop_label_smoothing");
    std::fs::create_dir_all(&out_dir).unwrap();
    for (level, grid) in final_maps.iter().enumerate() {
        let path = out_dir.join(format!("level{level}.png"));
        write_label_heatmap(grid, 0, &path).unwrap();
        println!("wrote {}", path.display());
    }
}
