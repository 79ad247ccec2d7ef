//! Fit a four-hop channel-wise Saab cascade and print its architecture:
//! per-hop windows, spatial grids, emitted channel counts, and the energy
//! routing at the first hop.
//!
//!     cargo run --release --example saab_cascade

use epixelhop::cascade::{apply_cascade, fit_cascade, CascadeConfig, SelectionMode};
use epixelhop::color::{fit_color_pca, project_pq};
use epixelhop::saab::ChannelRole;
use epixelhop::synth::synthetic_images;
use ndarray::Array2;

fn main() {
    let images = synthetic_images(10, 6, 11, 0);
    let pca = fit_color_pca(&images).expect("color PCA");
    let maps: Vec<Array2<f64>> = images.iter().map(|i| project_pq(i, &pca).0).collect();

    // Small caps keep this example quick; the geometry is the standard one.
    let config = CascadeConfig::four_hop(
        SelectionMode::FixedK,
        1e-12,
        1e-12,
        [Some(12), Some(32), Some(48), Some(48)],
    );
    let model = fit_cascade(&maps, &config).expect("cascade fit");

    println!("hop  window      pad  pool   spatial  channels  nodes");
    for (i, ((cfg, &(s, _, k)), layer)) in config
        .hops
        .iter()
        .zip(&model.output_shapes)
        .zip(&model.hops)
        .enumerate()
    {
        let pool = match cfg.pool_after {
            Some(p) => format!("{}x{}/{}", p.window, p.window, p.stride),
            None => "-".to_string(),
        };
        println!(
            "{:<4} {}x{}         {:<4} {:<6} {:>3}x{:<5} {:<9} {}",
            i + 1,
            cfg.window.0,
            cfg.window.1,
            cfg.padding,
            pool,
            s,
            s,
            k,
            layer.nodes.len()
        );
    }

    let hop1 = &model.hops[0].nodes[0];
    println!("\nhop-1 energy routing (first node):");
    for (i, (&e, role)) in hop1
        .child_energies
        .iter()
        .zip(&hop1.child_roles)
        .enumerate()
        .take(8)
    {
        let kind = if i == 0 { "DC" } else { "AC" };
        let role = match role {
            ChannelRole::Intermediate => "forwarded",
            ChannelRole::Leaf => "leaf",
            ChannelRole::Discarded => "discarded",
        };
        println!("  child {i:<2} ({kind})  energy {e:.5}  {role}");
    }
    println!("  ... ({} children total)", hop1.child_count());

    let feats = apply_cascade(&maps[0], &model).expect("apply");
    println!("\nfeature tensors for one image:");
    for (i, hop) in feats.hops.iter().enumerate() {
        let (s, _, k) = hop.raw.dim();
        print!("  hop-{}: {s}x{s}x{k}", i + 1);
        if let Some(p) = &hop.pooled {
            let (ps, _, pk) = p.dim();
            print!("  (pooled {ps}x{ps}x{pk})");
        }
        println!();
    }
}
