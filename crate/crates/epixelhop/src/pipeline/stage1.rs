//! Stage 1: color decomposition, per-channel cascades, pixel-level
//! classification with label-smoothing initialization, and meta fusion.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use super::{seed_tags, PipelineConfig};
use crate::cascade::{apply_cascade, fit_cascade, CascadeModel};
use crate::color::{fit_color_pca, project_pq, ColorPca};
use crate::dataset::{apply_augment, augment_specs, LabeledImage, VARIANT_COUNT};
use crate::error::{Error, Result};
use crate::gbdt::{self, BoostedModel, GbdtParams, TrainMatrix};
use crate::graph::{build_local_graph, graph_spec_for, stage1_selections, HopSelect, LocalGraph};
use crate::smoothing::{infer_labels, train_sls, InitStyle, LabelMaps, SlsClassifiers};

/// The fitted multi-class baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Model {
    pub config: PipelineConfig,
    pub color_pca: ColorPca,
    pub cascade_p: CascadeModel,
    pub cascade_q: CascadeModel,
    pub sls_p: SlsClassifiers,
    pub sls_q: SlsClassifiers,
    /// Meta classifier over both channels' label maps.
    pub meta: BoostedModel,
    /// Single-channel metas, kept for the channel-ablation rows of the
    /// evaluation report.
    pub meta_p: BoostedModel,
    pub meta_q: BoostedModel,
}

/// Soft decisions under all three channel configurations, each averaged over
/// the augmentation variants.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Prediction {
    pub pq: Vec<f64>,
    pub p_only: Vec<f64>,
    pub q_only: Vec<f64>,
}

/// Extract the selected per-level feature tensors of one channel map.
pub(crate) fn level_features(
    map: &Array2<f64>,
    cascade: &CascadeModel,
    selections: &[HopSelect],
) -> Result<Vec<Array3<f64>>> {
    let feats = apply_cascade(map, cascade)?;
    selections
        .iter()
        .map(|sel| {
            let hop = &feats.hops[sel.hop];
            if sel.pooled {
                hop.pooled
                    .clone()
                    .ok_or_else(|| Error::Config(format!("hop {} has no pooled output", sel.hop)))
            } else {
                Ok(hop.raw.clone())
            }
        })
        .collect()
}

/// Concatenate both channels' label maps into one meta feature row:
/// P levels then Q levels, nodes row-major, stored components innermost.
pub(crate) fn meta_row(maps_p: &LabelMaps, maps_q: &LabelMaps) -> Vec<f64> {
    let mut row = Vec::new();
    for maps in [maps_p, maps_q] {
        for grid in maps {
            row.extend(grid.iter().copied());
        }
    }
    row
}

pub(crate) fn meta_width(maps_p: &LabelMaps, maps_q: &LabelMaps) -> usize {
    maps_p.iter().chain(maps_q.iter()).map(|g| g.len()).sum()
}

/// The label maps of one image variant under both channels.
#[allow(clippy::too_many_arguments)]
pub(crate) fn variant_maps(
    image: &LabeledImage,
    color_pca: &ColorPca,
    cascade_p: &CascadeModel,
    cascade_q: &CascadeModel,
    sls_p: &SlsClassifiers,
    sls_q: &SlsClassifiers,
    selections: &[HopSelect],
    graph: &LocalGraph,
) -> Result<(LabelMaps, LabelMaps)> {
    let (p_map, q_map) = project_pq(image, color_pca);
    let feats_p = level_features(&p_map, cascade_p, selections)?;
    let feats_q = level_features(&q_map, cascade_q, selections)?;
    let maps_p = infer_labels(&feats_p, graph, sls_p)?;
    let maps_q = infer_labels(&feats_q, graph, sls_q)?;
    Ok((maps_p, maps_q))
}

fn check_labels(images: &[LabeledImage], class_count: usize) -> Result<Vec<usize>> {
    let mut seen = vec![false; class_count];
    let mut labels = Vec::with_capacity(images.len());
    for img in images {
        let label = img
            .label
            .ok_or_else(|| Error::Config("training image without label".into()))?;
        if label >= class_count {
            return Err(Error::InvalidLabel {
                record: img.id as usize,
                label: label as u8,
                class_count,
            });
        }
        seen[label] = true;
        labels.push(label);
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::MissingClass { class: missing });
    }
    Ok(labels)
}

/// Train the stage-1 baseline: color PCA, one cascade per principal channel,
/// per-hop pixel classifiers with label-smoothing initialization, and the
/// meta classifiers. Pixel-level classifiers train on the original images
/// only; augmentation variants feed the meta stage.
pub fn train_stage1(images: &[LabeledImage], config: &PipelineConfig) -> Result<Stage1Model> {
    let labels = check_labels(images, config.class_count)?;
    let color_pca = fit_color_pca(images)?;

    let projected: Vec<(Array2<f64>, Array2<f64>)> = images
        .par_iter()
        .map(|img| project_pq(img, &color_pca))
        .collect();
    let (p_maps, q_maps): (Vec<Array2<f64>>, Vec<Array2<f64>>) = projected.into_iter().unzip();

    let cascade_p = fit_cascade(&p_maps, &config.cascade_p)?;
    let cascade_q = fit_cascade(&q_maps, &config.cascade_q)?;

    let selections = stage1_selections(&config.cascade_p);
    let spec = graph_spec_for(&config.cascade_p, cascade_p.input_side, &selections)?;
    let spec_q = graph_spec_for(&config.cascade_q, cascade_q.input_side, &selections)?;
    if spec != spec_q {
        return Err(Error::Config(
            "P and Q cascades must share their hop geometry".into(),
        ));
    }
    let graph = build_local_graph(&spec)?;

    // Channel-wise pixel classifiers, one channel at a time to bound memory.
    let mut channel_results = Vec::with_capacity(2);
    for (maps, cascade, tag) in [
        (&p_maps, &cascade_p, seed_tags::SLS_P),
        (&q_maps, &cascade_q, seed_tags::SLS_Q),
    ] {
        let feats: Vec<Vec<Array3<f64>>> = maps
            .par_iter()
            .map(|m| level_features(m, cascade, &selections))
            .collect::<Result<_>>()?;
        let params = GbdtParams {
            seed: config.seed_for(tag),
            ..config.gbdt.clone()
        };
        let trained = train_sls(
            &feats,
            &labels,
            config.class_count,
            &graph,
            InitStyle::WithChildLabels,
            config.num_iter_stage1,
            &params,
        )?;
        channel_results.push(trained);
    }
    let (sls_q, train_maps_q) = channel_results.pop().unwrap();
    let (sls_p, train_maps_p) = channel_results.pop().unwrap();
    drop(p_maps);
    drop(q_maps);

    // Meta features: the original image reuses the training maps; the other
    // variants run the full inference path.
    let variants = if config.augment { VARIANT_COUNT } else { 1 };
    let width = meta_width(&train_maps_p[0], &train_maps_q[0]);
    let split = width / 2;

    let block = variants * width;
    let mut rows = vec![0.0f64; images.len() * block];
    rows.par_chunks_mut(block)
        .enumerate()
        .try_for_each(|(i, chunk)| -> Result<()> {
            let img = &images[i];
            let specs = augment_specs(img.id, config.seed);
            for (v, spec) in specs.iter().enumerate().take(variants) {
                let row = if v == 0 {
                    meta_row(&train_maps_p[i], &train_maps_q[i])
                } else {
                    let aug = apply_augment(img, spec)?;
                    let (mp, mq) = variant_maps(
                        &aug,
                        &color_pca,
                        &cascade_p,
                        &cascade_q,
                        &sls_p,
                        &sls_q,
                        &selections,
                        &graph,
                    )?;
                    meta_row(&mp, &mq)
                };
                chunk[v * width..(v + 1) * width].copy_from_slice(&row);
            }
            Ok(())
        })?;
    let targets: Vec<usize> = labels
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, variants))
        .collect();

    let p_rows: Vec<f64> = rows
        .chunks(width)
        .flat_map(|r| r[..split].iter().copied())
        .collect();
    let q_rows: Vec<f64> = rows
        .chunks(width)
        .flat_map(|r| r[split..].iter().copied())
        .collect();

    let fit_meta = |rows: Vec<f64>, w: usize, tag: u64| -> Result<BoostedModel> {
        let params = GbdtParams {
            seed: config.seed_for(tag),
            ..config.gbdt.clone()
        };
        let data = TrainMatrix::new(rows, w, targets.clone(), config.class_count)?;
        gbdt::fit(&data, &params)
    };
    let meta = fit_meta(rows, width, seed_tags::META)?;
    let meta_p = fit_meta(p_rows, split, seed_tags::META_P)?;
    let meta_q = fit_meta(q_rows, width - split, seed_tags::META_Q)?;

    Ok(Stage1Model {
        config: config.clone(),
        color_pca,
        cascade_p,
        cascade_q,
        sls_p,
        sls_q,
        meta,
        meta_p,
        meta_q,
    })
}

fn mean_of(rows: Vec<Vec<f64>>) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut acc = vec![0.0; rows[0].len()];
    for r in &rows {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= n;
    }
    acc
}

/// Soft stage-1 decision for one image under all channel configurations,
/// averaged over the augmentation variants.
pub fn predict_stage1_full(model: &Stage1Model, image: &LabeledImage) -> Result<Stage1Prediction> {
    let config = &model.config;
    let selections = stage1_selections(&config.cascade_p);
    let spec = graph_spec_for(&config.cascade_p, model.cascade_p.input_side, &selections)?;
    let graph = build_local_graph(&spec)?;

    let variants = if config.augment { VARIANT_COUNT } else { 1 };
    let specs = augment_specs(image.id, config.seed);
    let mut pq = Vec::with_capacity(variants);
    let mut p_only = Vec::with_capacity(variants);
    let mut q_only = Vec::with_capacity(variants);
    for spec in specs.iter().take(variants) {
        let variant = apply_augment(image, spec)?;
        let (mp, mq) = variant_maps(
            &variant,
            &model.color_pca,
            &model.cascade_p,
            &model.cascade_q,
            &model.sls_p,
            &model.sls_q,
            &selections,
            &graph,
        )?;
        let row = meta_row(&mp, &mq);
        let split = mp.iter().map(|g| g.len()).sum::<usize>();
        pq.push(model.meta.predict_proba_row(&row)?);
        p_only.push(model.meta_p.predict_proba_row(&row[..split])?);
        q_only.push(model.meta_q.predict_proba_row(&row[split..])?);
    }
    Ok(Stage1Prediction {
        pq: mean_of(pq),
        p_only: mean_of(p_only),
        q_only: mean_of(q_only),
    })
}

/// Soft stage-1 decision (both channels fused), averaged over variants.
pub fn predict_stage1(model: &Stage1Model, image: &LabeledImage) -> Result<Vec<f64>> {
    Ok(predict_stage1_full(model, image)?.pq)
}

/// The per-hop label maps of one image (no augmentation) under the stage-1
/// classifiers, for inspection and heatmap export.
pub fn stage1_variant_maps(
    model: &Stage1Model,
    image: &LabeledImage,
) -> Result<(LabelMaps, LabelMaps)> {
    let selections = stage1_selections(&model.config.cascade_p);
    let spec = graph_spec_for(
        &model.config.cascade_p,
        model.cascade_p.input_side,
        &selections,
    )?;
    let graph = build_local_graph(&spec)?;
    variant_maps(
        image,
        &model.color_pca,
        &model.cascade_p,
        &model.cascade_q,
        &model.sls_p,
        &model.sls_q,
        &selections,
        &graph,
    )
}
