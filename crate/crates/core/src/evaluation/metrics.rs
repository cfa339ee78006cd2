use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Classification quality with macro-averaged precision, recall and F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion_matrix[truth][prediction]` counts.
    pub confusion_matrix: Vec<Vec<u64>>,
}

impl EvalMetrics {
    pub fn num_items(&self) -> u64 {
        self.confusion_matrix.iter().flatten().sum()
    }
}

pub fn compute_metrics(predictions: &[usize], truths: &[usize], k: usize) -> Result<EvalMetrics> {
    if predictions.is_empty() {
        return Err(Error::Evaluation("no predictions to score".into()));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Evaluation(format!("{} predictions for {} truths", predictions.len(), truths.len())));
    }
    if let Some(bad) = predictions.iter().chain(truths).find(|&&c| c >= k) {
        return Err(Error::Evaluation(format!("class {bad} out of range for {k} classes")));
    }
    let mut cm = vec![vec![0u64; k]; k];
    for (&p, &t) in predictions.iter().zip(truths) {
        cm[t][p] += 1;
    }
    let n = predictions.len() as f64;
    let trace: u64 = (0..k).map(|c| cm[c][c]).sum();
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = cm[c][c];
        let predicted: u64 = (0..k).map(|t| cm[t][c]).sum();
        let actual: u64 = cm[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        p_sum += p;
        r_sum += r;
        f_sum += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    let kf = k as f64;
    Ok(EvalMetrics {
        accuracy: trace as f64 / n,
        precision: p_sum / kf,
        recall: r_sum / kf,
        f1: f_sum / kf,
        confusion_matrix: cm,
    })
}
