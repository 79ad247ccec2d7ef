//! Test-set evaluation: channel-ablation accuracy, confusion matrix, pair
//! outcomes, and the accuracy-versus-resolved-sets curve.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use super::stage1::{predict_stage1_full, Stage1Model};
use super::stage2::{build_confusion_sets, predict_pair, PairModel};
use super::{resolve_decision, top_m, top_pair};
use crate::dataset::LabeledImage;
use crate::error::{Error, Result};

/// Per-pair evaluation outcome, priority order.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub pair: (usize, usize),
    pub members: usize,
    /// Accuracy of the final decision among this set's members.
    pub accuracy: f64,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_count: usize,
    pub test_count: usize,
    /// Channel-ablation rows: (label, top-1, top-2).
    pub channel_rows: Vec<(String, f64, f64)>,
    pub top1: f64,
    pub top2: f64,
    /// Row-normalized confusion matrix of the stage-1 fused decision.
    pub confusion: Array2<f64>,
    /// Final accuracy with every supplied pair model resolved.
    pub final_accuracy: f64,
    /// Accuracy after resolving the k top-priority sets, k = 0..=set count.
    pub curve: Vec<(usize, f64)>,
    pub pair_outcomes: Vec<PairOutcome>,
}

/// Evaluate stage 1 plus any trained pair models on a labeled test set.
pub fn evaluate(
    stage1: &Stage1Model,
    pair_models: &[PairModel],
    test_images: &[LabeledImage],
) -> Result<EvalReport> {
    if test_images.is_empty() {
        return Err(Error::InsufficientSamples { got: 0, need: 1 });
    }
    let classes = stage1.config.class_count;
    for img in test_images {
        if img.label.is_none() {
            return Err(Error::Config("evaluation needs labeled images".into()));
        }
    }

    let predictions: Vec<_> = test_images
        .par_iter()
        .map(|img| predict_stage1_full(stage1, img))
        .collect::<Result<Vec<_>>>()?;

    let labels: Vec<usize> = test_images.iter().map(|i| i.label.unwrap()).collect();
    let n = test_images.len() as f64;

    let topk_accuracy = |softs: &dyn Fn(usize) -> Vec<f64>, k: usize| -> f64 {
        let hits: usize = (0..test_images.len())
            .filter(|&i| top_m(&softs(i), k).contains(&labels[i]))
            .count();
        hits as f64 / n
    };
    let pq = |i: usize| predictions[i].pq.clone();
    let p_only = |i: usize| predictions[i].p_only.clone();
    let q_only = |i: usize| predictions[i].q_only.clone();
    let channel_rows = vec![
        (
            "P".to_string(),
            topk_accuracy(&p_only, 1),
            topk_accuracy(&p_only, 2),
        ),
        (
            "Q".to_string(),
            topk_accuracy(&q_only, 1),
            topk_accuracy(&q_only, 2),
        ),
        (
            "P+Q".to_string(),
            topk_accuracy(&pq, 1),
            topk_accuracy(&pq, 2),
        ),
    ];
    let top1 = channel_rows[2].1;
    let top2 = channel_rows[2].2;

    // Row-normalized confusion matrix of the fused stage-1 decision.
    let mut confusion = Array2::<f64>::zeros((classes, classes));
    for i in 0..test_images.len() {
        let pred = top_m(&predictions[i].pq, 1)[0];
        confusion[[labels[i], pred]] += 1.0;
    }
    for mut row in confusion.rows_mut() {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.mapv_inplace(|v| v / sum);
        }
    }

    // Confusion sets over this test run, then pair decisions where a model
    // exists.
    let decisions: Vec<(u64, Vec<f64>)> = test_images
        .iter()
        .zip(&predictions)
        .map(|(img, p)| (img.id, p.pq.clone()))
        .collect();
    let sets = build_confusion_sets(&decisions);
    let model_by_pair: HashMap<(usize, usize), &PairModel> =
        pair_models.iter().map(|m| (m.pair, m)).collect();

    // Per-image final decision bookkeeping: stage-1 hit, resolved hit, and
    // the priority rank of the image's confusion set.
    let rank_of_pair: HashMap<(usize, usize), usize> = sets
        .iter()
        .enumerate()
        .map(|(rank, s)| (s.pair, rank))
        .collect();

    let finals: Vec<(usize, usize, usize)> = test_images
        .par_iter()
        .zip(&predictions)
        .map(|(img, pred)| -> Result<(usize, usize, usize)> {
            let pair = top_pair(&pred.pq);
            let rank = rank_of_pair[&pair];
            let stage1_label = top_m(&pred.pq, 1)[0];
            let final_label = match model_by_pair.get(&pair) {
                Some(model) => {
                    let scores = predict_pair(model, stage1, img)?;
                    resolve_decision(&pred.pq, Some((pair, scores)))
                }
                None => stage1_label,
            };
            Ok((stage1_label, final_label, rank))
        })
        .collect::<Result<_>>()?;

    let mut curve = Vec::with_capacity(sets.len() + 1);
    for k in 0..=sets.len() {
        let hits: usize = finals
            .iter()
            .zip(&labels)
            .filter(|((s1, fin, rank), &label)| {
                let effective = if *rank < k { *fin } else { *s1 };
                effective == label
            })
            .count();
        curve.push((k, hits as f64 / n));
    }
    let final_accuracy = curve.last().unwrap().1;

    let pair_outcomes = sets
        .iter()
        .enumerate()
        .map(|(rank, s)| {
            let mut hits = 0usize;
            let mut members = 0usize;
            for (i, (_, fin, r)) in finals.iter().enumerate() {
                if *r == rank {
                    members += 1;
                    hits += (*fin == labels[i]) as usize;
                }
            }
            PairOutcome {
                pair: s.pair,
                members,
                accuracy: if members > 0 {
                    hits as f64 / members as f64
                } else {
                    0.0
                },
                resolved: model_by_pair.contains_key(&s.pair),
            }
        })
        .collect();

    Ok(EvalReport {
        class_count: classes,
        test_count: test_images.len(),
        channel_rows,
        top1,
        top2,
        confusion,
        final_accuracy,
        curve,
        pair_outcomes,
    })
}

impl EvalReport {
    /// Write the report as CSV files under `dir`: `accuracy.csv`,
    /// `confusion_matrix.csv`, `resolved_curve.csv`, `pair_accuracy.csv`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        let write = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|source| Error::Io { path, source })
        };

        let mut acc = String::from("channels,top1,top2\n");
        for (name, t1, t2) in &self.channel_rows {
            acc.push_str(&format!("{name},{t1:.6},{t2:.6}\n"));
        }
        acc.push_str(&format!("final,{:.6},\n", self.final_accuracy));
        write("accuracy.csv", acc)?;

        let mut cm = String::from("true\\pred");
        for c in 0..self.class_count {
            cm.push_str(&format!(",{c}"));
        }
        cm.push('\n');
        for r in 0..self.class_count {
            cm.push_str(&r.to_string());
            for c in 0..self.class_count {
                cm.push_str(&format!(",{:.6}", self.confusion[[r, c]]));
            }
            cm.push('\n');
        }
        write("confusion_matrix.csv", cm)?;

        let mut curve = String::from("resolved_sets,accuracy\n");
        for (k, a) in &self.curve {
            curve.push_str(&format!("{k},{a:.6}\n"));
        }
        write("resolved_curve.csv", curve)?;

        let mut pairs = String::from("class_a,class_b,members,accuracy,resolved\n");
        for p in &self.pair_outcomes {
            pairs.push_str(&format!(
                "{},{},{},{:.6},{}\n",
                p.pair.0, p.pair.1, p.members, p.accuracy, p.resolved
            ));
        }
        write("pair_accuracy.csv", pairs)?;
        Ok(())
    }
}
