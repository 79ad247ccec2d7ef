//! Stage 2: confusion-set identification from stage-1 decisions and
//! one-vs-one pair models over unpooled label grids with full label
//! smoothing.

use std::collections::BTreeMap;

use ndarray::Array3;
use rayon::prelude::*;

use super::stage1::{level_features, meta_row, meta_width, variant_maps, Stage1Model};
use super::{seed_tags, top_pair, PipelineConfig};
use crate::cascade::CascadeModel;
use crate::color::{project_pq, ColorPca};
use crate::dataset::{apply_augment, augment_specs, LabeledImage, VARIANT_COUNT};
use crate::error::{Error, Result};
use crate::gbdt::{self, BoostedModel, GbdtParams, TrainMatrix};
use crate::graph::{build_local_graph, graph_spec_for, stage2_selections};
use crate::smoothing::{train_sls, InitStyle, SlsClassifiers};

/// One confusion set: the images whose stage-1 top-2 equals this class pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionSet {
    /// Unordered pair, `pair.0 < pair.1`.
    pub pair: (usize, usize),
    pub member_ids: Vec<u64>,
}

/// Group soft decisions by their top-2 pair and rank by descending
/// membership, ties by class indices. Every image lands in exactly one set.
pub fn build_confusion_sets(decisions: &[(u64, Vec<f64>)]) -> Vec<ConfusionSet> {
    let mut sets: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
    for (id, soft) in decisions {
        sets.entry(top_pair(soft)).or_default().push(*id);
    }
    let mut out: Vec<ConfusionSet> = sets
        .into_iter()
        .map(|(pair, member_ids)| ConfusionSet { pair, member_ids })
        .collect();
    out.sort_by(|a, b| {
        b.member_ids
            .len()
            .cmp(&a.member_ids.len())
            .then(a.pair.cmp(&b.pair))
    });
    out
}

/// The fitted artifacts a pair model builds on: the color transform and the
/// per-channel cascades, which stage 2 reuses unchanged.
#[derive(Clone, Copy)]
pub struct SharedContext<'a> {
    pub color_pca: &'a ColorPca,
    pub cascade_p: &'a CascadeModel,
    pub cascade_q: &'a CascadeModel,
    pub config: &'a PipelineConfig,
}

impl<'a> From<&'a Stage1Model> for SharedContext<'a> {
    fn from(m: &'a Stage1Model) -> Self {
        SharedContext {
            color_pca: &m.color_pca,
            cascade_p: &m.cascade_p,
            cascade_q: &m.cascade_q,
            config: &m.config,
        }
    }
}

/// A fitted one-vs-one resolver. Class 0 is the lower class of the pair.
/// The stage-1 cascades are reused unchanged; only label-smoothing and meta
/// classifiers are pair-specific.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub pair: (usize, usize),
    pub sls_p: SlsClassifiers,
    pub sls_q: SlsClassifiers,
    pub meta: BoostedModel,
}

/// Train a pair model on every training image of the two classes: full label
/// smoothing (initialization plus cross-hop updates) over the unpooled
/// grids, then a binary meta classifier on the augmentation variants.
pub fn train_pair_model(
    pair: (usize, usize),
    train_images: &[LabeledImage],
    stage1: &Stage1Model,
) -> Result<PairModel> {
    let ctx = SharedContext::from(stage1);
    let members: Vec<&LabeledImage> = train_images
        .iter()
        .filter(|img| img.label == Some(pair.0) || img.label == Some(pair.1))
        .collect();
    let labels: Vec<usize> = members
        .iter()
        .map(|img| (img.label == Some(pair.1)) as usize)
        .collect();
    train_binary_model(
        ctx,
        pair,
        &members,
        &labels,
        InitStyle::WithChildLabels,
        stage1.config.num_iter_stage2,
    )
}

/// The binary trainer behind [`train_pair_model`], also usable standalone
/// with explicit 0/1 labels and any initialization style (the intra-hop
/// ablation uses `InitStyle::FeaturesOnly`).
pub fn train_binary_model(
    ctx: SharedContext<'_>,
    pair: (usize, usize),
    members: &[&LabeledImage],
    labels: &[usize],
    init_style: InitStyle,
    num_iter: usize,
) -> Result<PairModel> {
    assert!(pair.0 < pair.1);
    assert_eq!(members.len(), labels.len());
    let config = ctx.config;
    if !labels.contains(&0) {
        return Err(Error::MissingClass { class: pair.0 });
    }
    if !labels.contains(&1) {
        return Err(Error::MissingClass { class: pair.1 });
    }

    let selections = stage2_selections(&config.cascade_p);
    let spec = graph_spec_for(&config.cascade_p, ctx.cascade_p.input_side, &selections)?;
    let graph = build_local_graph(&spec)?;

    let pair_tag = seed_tags::PAIR_BASE + (pair.0 * 64 + pair.1) as u64;
    let mut channel_results = Vec::with_capacity(2);
    for (cascade, tag) in [
        (ctx.cascade_p, seed_tags::SLS_P),
        (ctx.cascade_q, seed_tags::SLS_Q),
    ] {
        let feats: Vec<Vec<Array3<f64>>> = members
            .par_iter()
            .map(|img| {
                let (p_map, q_map) = project_pq(img, ctx.color_pca);
                let map = if tag == seed_tags::SLS_P {
                    p_map
                } else {
                    q_map
                };
                level_features(&map, cascade, &selections)
            })
            .collect::<Result<_>>()?;
        let params = GbdtParams {
            seed: config.seed_for(pair_tag ^ tag),
            ..config.gbdt.clone()
        };
        let trained = train_sls(&feats, labels, 2, &graph, init_style, num_iter, &params)?;
        channel_results.push(trained);
    }
    let (sls_q, train_maps_q) = channel_results.pop().unwrap();
    let (sls_p, train_maps_p) = channel_results.pop().unwrap();

    // Binary meta over the variants' scalar label maps, both channels.
    let variants = if config.augment { VARIANT_COUNT } else { 1 };
    let width = meta_width(&train_maps_p[0], &train_maps_q[0]);
    let block = variants * width;
    let mut rows = vec![0.0f64; members.len() * block];
    rows.par_chunks_mut(block)
        .enumerate()
        .try_for_each(|(i, chunk)| -> Result<()> {
            let img = members[i];
            let specs = augment_specs(img.id, config.seed);
            for (v, spec) in specs.iter().enumerate().take(variants) {
                let row = if v == 0 {
                    meta_row(&train_maps_p[i], &train_maps_q[i])
                } else {
                    let aug = apply_augment(img, spec)?;
                    let (mp, mq) = variant_maps(
                        &aug,
                        ctx.color_pca,
                        ctx.cascade_p,
                        ctx.cascade_q,
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
    let params = GbdtParams {
        seed: config.seed_for(pair_tag ^ seed_tags::META),
        ..config.gbdt.clone()
    };
    let data = TrainMatrix::new(rows, width, targets, 2)?;
    let meta = gbdt::fit(&data, &params)?;

    Ok(PairModel {
        pair,
        sls_p,
        sls_q,
        meta,
    })
}

/// Binary soft decision `[p(lower), p(higher)]` for one image, averaged over
/// the augmentation variants.
pub fn predict_pair(
    model: &PairModel,
    stage1: &Stage1Model,
    image: &LabeledImage,
) -> Result<[f64; 2]> {
    predict_pair_in(SharedContext::from(stage1), model, image)
}

/// [`predict_pair`] against explicit shared artifacts.
pub fn predict_pair_in(
    ctx: SharedContext<'_>,
    model: &PairModel,
    image: &LabeledImage,
) -> Result<[f64; 2]> {
    let config = ctx.config;
    let selections = stage2_selections(&config.cascade_p);
    let spec = graph_spec_for(&config.cascade_p, ctx.cascade_p.input_side, &selections)?;
    let graph = build_local_graph(&spec)?;

    let variants = if config.augment { VARIANT_COUNT } else { 1 };
    let specs = augment_specs(image.id, config.seed);
    let mut acc = [0.0f64; 2];
    for spec in specs.iter().take(variants) {
        let variant = apply_augment(image, spec)?;
        let (mp, mq) = variant_maps(
            &variant,
            ctx.color_pca,
            ctx.cascade_p,
            ctx.cascade_q,
            &model.sls_p,
            &model.sls_q,
            &selections,
            &graph,
        )?;
        let row = meta_row(&mp, &mq);
        let p = model.meta.predict_proba_row(&row)?;
        acc[0] += p[0];
        acc[1] += p[1];
    }
    acc[0] /= variants as f64;
    acc[1] /= variants as f64;
    Ok(acc)
}
