//! Two-stage pipeline orchestration: the multi-class baseline (stage 1) and
//! one-vs-one confusion-set resolution (stage 2), plus evaluation.

mod eval;
mod stage1;
mod stage2;

pub use eval::{evaluate, EvalReport, PairOutcome};
pub use stage1::{
    predict_stage1, predict_stage1_full, stage1_variant_maps, train_stage1, Stage1Model,
    Stage1Prediction,
};
pub use stage2::{
    build_confusion_sets, predict_pair, predict_pair_in, train_binary_model, train_pair_model,
    ConfusionSet, PairModel, SharedContext,
};

use crate::cascade::CascadeConfig;
use crate::gbdt::GbdtParams;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub class_count: usize,
    pub cascade_p: CascadeConfig,
    pub cascade_q: CascadeConfig,
    pub gbdt: GbdtParams,
    /// Label-smoothing iterations in the baseline (1 = initialization only).
    pub num_iter_stage1: usize,
    /// Label-smoothing iterations in pair models.
    pub num_iter_stage2: usize,
    /// Eightfold augmentation for meta training and test-time averaging.
    pub augment: bool,
    /// How many top-priority confusion sets to resolve.
    pub resolve_top_k: usize,
}

impl PipelineConfig {
    pub fn with_classes(class_count: usize) -> Self {
        PipelineConfig {
            seed: 0,
            class_count,
            cascade_p: CascadeConfig::default_p(),
            cascade_q: CascadeConfig::default_q(),
            gbdt: GbdtParams::default(),
            num_iter_stage1: 1,
            num_iter_stage2: 3,
            augment: true,
            resolve_top_k: class_count * (class_count - 1) / 2,
        }
    }

    /// Distinct, reproducible classifier seed per role in the pipeline.
    pub(crate) fn seed_for(&self, tag: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(tag)
    }
}

/// Classifier seed tags, one per role.
pub(crate) mod seed_tags {
    pub const SLS_P: u64 = 0x100;
    pub const SLS_Q: u64 = 0x200;
    pub const META: u64 = 0x300;
    pub const META_P: u64 = 0x301;
    pub const META_Q: u64 = 0x302;
    pub const PAIR_BASE: u64 = 0x1000;
}

/// Indices of the `m` largest probabilities, ties broken toward the lower
/// class index.
pub fn top_m(soft: &[f64], m: usize) -> Vec<usize> {
    assert!(m <= soft.len());
    let mut idx: Vec<usize> = (0..soft.len()).collect();
    idx.sort_by(|&a, &b| soft[b].partial_cmp(&soft[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// The unordered confusion pair of a soft decision: its top-2 classes.
pub fn top_pair(soft: &[f64]) -> (usize, usize) {
    let t = top_m(soft, 2);
    (t[0].min(t[1]), t[0].max(t[1]))
}

/// Final two-stage decision for a soft stage-1 score: the matching pair
/// model's winner when one is resolved, the stage-1 argmax otherwise.
pub fn resolve_decision(soft: &[f64], pair_scores: Option<((usize, usize), [f64; 2])>) -> usize {
    match pair_scores {
        Some(((a, b), scores)) => {
            if scores[1] > scores[0] {
                b
            } else {
                a
            }
        }
        None => top_m(soft, 1)[0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_m_orders_by_probability() {
        assert_eq!(top_m(&[0.1, 0.6, 0.3], 2), vec![1, 2]);
        assert_eq!(top_m(&[0.25, 0.25, 0.25, 0.25], 2), vec![0, 1]);
        assert_eq!(top_m(&[0.0, 1.0], 1), vec![1]);
    }

    #[test]
    fn pair_count_upper_bound() {
        // 10 classes, pairs of 2: at most 45 distinct confusion sets.
        let c = 10;
        let mut pairs = std::collections::BTreeSet::new();
        for a in 0..c {
            for b in (a + 1)..c {
                pairs.insert((a, b));
            }
        }
        assert_eq!(pairs.len(), 45);
    }

    #[test]
    fn resolve_prefers_pair_winner() {
        let soft = vec![0.05, 0.5, 0.45];
        assert_eq!(resolve_decision(&soft, None), 1);
        assert_eq!(resolve_decision(&soft, Some(((1, 2), [0.1, 0.9]))), 2);
        assert_eq!(resolve_decision(&soft, Some(((1, 2), [0.9, 0.1]))), 1);
    }
}
