//! Evaluation metrics: accuracy, ROC AUC and RMSE.

use serde::{Deserialize, Serialize};

use crate::nn::Matrix;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{predictions} predictions for {targets} targets")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("no rows to score")]
    Empty,
    #[error("AUC needs both classes present")]
    SingleClass,
}

fn check(predictions: usize, targets: usize) -> Result<(), MetricError> {
    if predictions != targets {
        return Err(MetricError::LengthMismatch { predictions, targets });
    }
    if targets == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Row-wise argmax, first maximum wins.
pub fn argmax_rows(probs: &Matrix<f32>) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for c in 1..row.len() {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(probs: &Matrix<f32>, labels: &[usize]) -> Result<f64, MetricError> {
    check(probs.rows(), labels.len())?;
    let hits = argmax_rows(probs).iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Area under the ROC curve from positive-class scores, with tied scores
/// counting one half (average ranks).
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64, MetricError> {
    check(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64, MetricError> {
    check(pred.len(), target.len())?;
    let sse: f64 = pred.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sse / target.len() as f64).sqrt())
}

/// Metrics of one split; fields not defined for the task stay `None`.
#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Default)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}
