//! ROC AUC via the tie-aware Mann-Whitney rank statistic, and thresholded
//! accuracy.

use crate::{Error, Result};

/// P(score+ > score-) + 0.5 * P(score+ = score-) over all positive-negative
/// pairs, computed from average ranks.
///
/// Requires at least one positive and one negative label.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels must align");
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // average ranks over tie groups (ranks are 1-based)
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Fraction of samples where `(score >= threshold)` equals the label.
pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    assert!(!scores.is_empty(), "accuracy needs at least one sample");
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    correct as f64 / scores.len() as f64
}
