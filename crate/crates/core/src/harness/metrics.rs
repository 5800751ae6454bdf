use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::models::{forward, ModelArch, ParamVector};
use crate::{Error, Result};

/// Classification metrics. Accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1: f64,
    /// Recall of each class; 0 for a class absent from the evaluation set.
    pub per_class: Vec<f64>,
    /// Mean recall over the majority classes (all classes when balanced).
    pub majority_mean: f64,
    /// Mean recall over the minority classes; `None` when there are none.
    pub minority_mean: Option<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &ParamVector, arch: &ModelArch, dataset: &Dataset) -> Result<Vec<usize>> {
    let eval = forward(params, arch, dataset.features())?;
    Ok((0..eval.logits.rows()).map(|i| argmax(eval.logits.row(i))).collect())
}

/// Classes whose training size is below the geometric mean of the largest
/// and smallest class. Empty for a balanced training set.
pub fn minority_classes(train_counts: &[usize]) -> Vec<usize> {
    let max = train_counts.iter().copied().max().unwrap_or(0) as f64;
    let min = train_counts.iter().copied().min().unwrap_or(0) as f64;
    let cut = (max * min).sqrt();
    (0..train_counts.len())
        .filter(|&k| (train_counts[k] as f64) < cut)
        .collect()
}

pub fn metrics_from_predictions(
    labels: &[usize],
    predictions: &[usize],
    num_classes: usize,
    minority: &[usize],
) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty dataset"));
    }
    if labels.len() != predictions.len() {
        return Err(Error::domain("labels and predictions differ in length"));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        confusion[y][p] += 1;
    }
    let correct: u64 = (0..num_classes).map(|k| confusion[k][k]).sum();
    let per_class: Vec<f64> = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[k] as f64 / total as f64
            }
        })
        .collect();
    let present = |k: &usize| confusion[*k].iter().sum::<u64>() > 0;
    let group_mean = |ks: &[usize]| -> Option<f64> {
        let ks: Vec<usize> = ks.iter().copied().filter(present).collect();
        (!ks.is_empty()).then(|| ks.iter().map(|&k| per_class[k]).sum::<f64>() / ks.len() as f64)
    };
    let majority: Vec<usize> = (0..num_classes).filter(|k| !minority.contains(k)).collect();
    Ok(Metrics {
        top1: correct as f64 / labels.len() as f64,
        majority_mean: group_mean(&majority).unwrap_or(0.0),
        minority_mean: group_mean(minority),
        per_class,
        confusion,
    })
}

/// Argmax accuracy over `dataset`, without a majority/minority split.
pub fn evaluate(params: &ParamVector, arch: &ModelArch, dataset: &Dataset) -> Result<Metrics> {
    evaluate_grouped(params, arch, dataset, &[])
}

/// As [`evaluate`], with `minority` listing the minority classes.
pub fn evaluate_grouped(
    params: &ParamVector,
    arch: &ModelArch,
    dataset: &Dataset,
    minority: &[usize],
) -> Result<Metrics> {
    let pred = predict(params, arch, dataset)?;
    metrics_from_predictions(dataset.labels(), &pred, dataset.num_classes(), minority)
}
