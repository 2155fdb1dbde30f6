//! AUC via the Mann–Whitney rank statistic and mean log loss.

use serde::{Deserialize, Serialize};

/// Clamp applied to predictions before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when the labels contain a single class.
    pub auc: Option<f64>,
    pub logloss: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Probability that a random positive outranks a random negative, with ties
/// counted as one half (average ranks over tied scores). `None` unless both
/// classes are present.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Binary cross entropy of one prediction, clamped to `[eps, 1-eps]`.
/// The flag reports whether clamping was needed.
pub fn log_loss_single(prob: f64, label: u8) -> (f64, bool) {
    let clamped = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let loss = if label == 1 {
        -clamped.ln()
    } else {
        -(1.0 - clamped).ln()
    };
    (loss, clamped != prob)
}

pub fn mean_log_loss(probs: &[f64], labels: &[u8]) -> f64 {
    assert_eq!(probs.len(), labels.len(), "probs and labels differ in length");
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &l)| log_loss_single(p, l).0)
        .sum();
    total / probs.len() as f64
}

pub fn compute_metrics(probs: &[f64], labels: &[u8]) -> Metrics {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    Metrics {
        auc: auc(probs, labels),
        logloss: mean_log_loss(probs, labels),
        n_pos,
        n_neg: labels.len() - n_pos,
    }
}
