//! Evaluation metrics: pooled area under the precision–recall curve and
//! the six multi-label classification metrics, all in [0, 1].
//!
//! Conventions pinned here so every number is reproducible:
//!
//! * `au_prc` pools all (instance, class) pairs into one micro-averaged
//!   curve. Thresholds sweep the distinct scores in descending order,
//!   predicting positive at score >= threshold; the area is that of the
//!   step function holding precision constant from each recall point back
//!   to the previous one (sum of (R_k - R_{k-1}) * P_k, with R_0 = 0).
//! * Ranks are 1-based positions in descending score order; a tie is
//!   broken toward the lower class index, consistently with min/max tie
//!   routing elsewhere.
//! * Coverage error is the classical deepest-positive rank averaged over
//!   instances, divided by the number of classes to land in [0, 1].
//! * Ranking loss counts a (positive, negative) pair as a fault when the
//!   negative scores at least as high as the positive.
//! * Instances without positive labels carry no ranking information; they
//!   are excluded from the rank-based metrics and counted in the report.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// The six multi-label metrics plus the pooled PR-curve area.
/// Directions: higher is better for `au_prc`, `average_precision`, and
/// `multilabel_accuracy`; lower is better for the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub au_prc: f64,
    pub average_precision: f64,
    pub coverage_error: f64,
    pub hamming_loss: f64,
    pub multilabel_accuracy: f64,
    pub one_error: f64,
    pub ranking_loss: f64,
    /// Instances excluded from rank-based metrics for lack of positives.
    pub skipped_no_positive: usize,
    /// Instances excluded from ranking loss for lack of negatives.
    pub skipped_no_negative: usize,
}

fn check_batch(scores: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<usize> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(CoreError::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let l = scores[0].len();
    for (s, y) in scores.iter().zip(labels) {
        if s.len() != l || y.len() != l {
            return Err(CoreError::DimensionMismatch {
                expected: l,
                got: s.len().max(y.len()),
            });
        }
        if let Some((i, &v)) = y.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(CoreError::InvalidLabel { index: i, value: v });
        }
    }
    Ok(l)
}

/// Pooled micro-averaged area under the precision–recall curve.
pub fn au_prc(scores: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<f64> {
    check_batch(scores, labels)?;
    let mut pairs: Vec<(f64, bool)> = Vec::new();
    for (s, y) in scores.iter().zip(labels) {
        for (v, t) in s.iter().zip(y) {
            pairs.push((*v, *t == 1.0));
        }
    }
    let total_pos = pairs.iter().filter(|p| p.1).count();
    if total_pos == 0 {
        return Err(CoreError::MetricUndefined(
            "area under the PR curve needs at least one positive label".into(),
        ));
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores must not be NaN"));

    let mut area = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        // Consume the whole tie group: one threshold per distinct score.
        let score = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == score {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total_pos as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// Rank of each class: 1-based position in descending score order, ties
/// broken toward the lower class index.
fn ranks(scores: &[f64]) -> Vec<usize> {
    let l = scores.len();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must not be NaN")
            .then(a.cmp(&b))
    });
    let mut rank = vec![0usize; l];
    for (pos, &cls) in order.iter().enumerate() {
        rank[cls] = pos + 1;
    }
    rank
}

/// The six multi-label metrics at threshold `theta`, plus the pooled
/// PR-curve area.
pub fn mc_metrics(scores: &[Vec<f64>], labels: &[Vec<f64>], theta: f64) -> Result<MetricReport> {
    let l = check_batch(scores, labels)?;
    if l == 0 {
        return Err(CoreError::MetricUndefined("no classes".into()));
    }
    let n = scores.len();

    let mut hamming = 0.0;
    let mut jaccard = 0.0;
    let mut one_err = 0.0;
    let mut coverage = 0.0;
    let mut rank_loss = 0.0;
    let mut avg_prec = 0.0;
    let mut with_pos = 0usize;
    let mut with_pos_and_neg = 0usize;

    for (s, y) in scores.iter().zip(labels) {
        let pred: Vec<bool> = s.iter().map(|&v| v > theta).collect();
        let mut wrong = 0usize;
        let mut inter = 0usize;
        let mut union = 0usize;
        for k in 0..l {
            let t = y[k] == 1.0;
            if pred[k] != t {
                wrong += 1;
            }
            if pred[k] && t {
                inter += 1;
            }
            if pred[k] || t {
                union += 1;
            }
        }
        hamming += wrong as f64 / l as f64;
        jaccard += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };

        let positives: Vec<usize> = (0..l).filter(|&k| y[k] == 1.0).collect();
        if positives.is_empty() {
            continue;
        }
        with_pos += 1;
        let rank = ranks(s);

        // One-error: is the single most confident class irrelevant?
        let top = (0..l)
            .min_by(|&a, &b| rank[a].cmp(&rank[b]))
            .expect("l > 0");
        if y[top] == 0.0 {
            one_err += 1.0;
        }

        coverage += positives.iter().map(|&k| rank[k]).max().unwrap() as f64 / l as f64;

        let negatives: Vec<usize> = (0..l).filter(|&k| y[k] == 0.0).collect();
        if !negatives.is_empty() {
            with_pos_and_neg += 1;
            let mut faults = 0usize;
            for &p in &positives {
                for &q in &negatives {
                    if s[q] >= s[p] {
                        faults += 1;
                    }
                }
            }
            rank_loss += faults as f64 / (positives.len() * negatives.len()) as f64;
        }

        let mut ap = 0.0;
        for &k in &positives {
            let better = positives.iter().filter(|&&j| rank[j] <= rank[k]).count();
            ap += better as f64 / rank[k] as f64;
        }
        avg_prec += ap / positives.len() as f64;
    }

    if with_pos == 0 {
        return Err(CoreError::MetricUndefined(
            "every instance lacks positive labels".into(),
        ));
    }

    Ok(MetricReport {
        au_prc: au_prc(scores, labels)?,
        average_precision: avg_prec / with_pos as f64,
        coverage_error: coverage / with_pos as f64,
        hamming_loss: hamming / n as f64,
        multilabel_accuracy: jaccard / n as f64,
        one_error: one_err / with_pos as f64,
        ranking_loss: if with_pos_and_neg == 0 {
            0.0
        } else {
            rank_loss / with_pos_and_neg as f64
        },
        skipped_no_positive: n - with_pos,
        skipped_no_negative: with_pos - with_pos_and_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_gives_unit_area() {
        let scores = vec![vec![0.9, 0.8, 0.2], vec![0.7, 0.1, 0.3]];
        let labels = vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]];
        assert_eq!(au_prc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn exact_scores_give_unit_area() {
        let labels = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(au_prc(&labels, &labels).unwrap(), 1.0);
    }

    #[test]
    fn no_positives_is_undefined() {
        let scores = vec![vec![0.9, 0.8]];
        let labels = vec![vec![0.0, 0.0]];
        assert!(au_prc(&scores, &labels).is_err());
        assert!(mc_metrics(&scores, &labels, 0.5).is_err());
    }

    #[test]
    fn four_pair_curve_by_hand() {
        // Pairs sorted by score: (0.9, +), (0.8, -), (0.6, +), (0.4, -).
        // Thresholds: 0.9 -> P=1, R=1/2; 0.8 -> P=1/2, R=1/2;
        // 0.6 -> P=2/3, R=1; 0.4 -> P=1/2, R=1.
        // Area = 0.5 * 1 + 0 + 0.5 * 2/3 + 0 = 5/6.
        let scores = vec![vec![0.9, 0.8, 0.6, 0.4]];
        let labels = vec![vec![1.0, 0.0, 1.0, 0.0]];
        let got = au_prc(&scores, &labels).unwrap();
        assert!((got - 5.0 / 6.0).abs() <= 1e-12);
    }

    #[test]
    fn exact_predictions_are_perfect() {
        let labels = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
        let r = mc_metrics(&labels, &labels, 0.5).unwrap();
        assert_eq!(r.hamming_loss, 0.0);
        assert_eq!(r.multilabel_accuracy, 1.0);
        assert_eq!(r.one_error, 0.0);
        assert_eq!(r.ranking_loss, 0.0);
        assert_eq!(r.average_precision, 1.0);
    }

    #[test]
    fn inverted_scores_have_unit_hamming() {
        let labels = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let scores: Vec<Vec<f64>> = labels
            .iter()
            .map(|y| y.iter().map(|v| 1.0 - v).collect())
            .collect();
        let r = mc_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(r.hamming_loss, 1.0);
        assert_eq!(r.multilabel_accuracy, 0.0);
    }

    #[test]
    fn hand_batch_values() {
        // Instance 1: y = (1,0,1), s = (0.9, 0.5, 0.3).
        //   ranks: 1, 2, 3. one-error 0. coverage 3/3.
        //   ranking: pairs (c0,c1) ok, (c2,c1) fault -> 1/2.
        //   AP: c0: 1/1; c2: 2/3 -> (1 + 2/3)/2 = 5/6.
        // Instance 2: y = (0,1,0), s = (0.8, 0.8, 0.1).
        //   tie at 0.8 broken to class 0: ranks 1, 2, 3. one-error 1.
        //   coverage 2/3. ranking: c1 vs c0 (0.8 >= 0.8) fault, c1 vs c2 ok -> 1/2.
        //   AP: c1: 1/2.
        let scores = vec![vec![0.9, 0.5, 0.3], vec![0.8, 0.8, 0.1]];
        let labels = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
        let r = mc_metrics(&scores, &labels, 0.5).unwrap();
        assert!((r.one_error - 0.5).abs() <= 1e-12);
        assert!((r.coverage_error - (1.0 + 2.0 / 3.0) / 2.0).abs() <= 1e-12);
        assert!((r.ranking_loss - 0.5).abs() <= 1e-12);
        assert!((r.average_precision - (5.0 / 6.0 + 0.5) / 2.0).abs() <= 1e-12);
        // Hamming: instance 1 predicts (1,0,0) -> 1 wrong;
        // instance 2 predicts (1,1,0) -> 1 wrong.
        assert!((r.hamming_loss - (1.0 / 3.0 + 1.0 / 3.0) / 2.0).abs() <= 1e-12);
        // Jaccard: 1/2 and 1/2.
        assert!((r.multilabel_accuracy - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn no_positive_instances_are_skipped_and_counted() {
        let scores = vec![vec![0.9, 0.2], vec![0.4, 0.3]];
        let labels = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let r = mc_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(r.skipped_no_positive, 1);
        assert_eq!(r.one_error, 0.0);
    }

    #[test]
    fn rank_metrics_survive_monotone_transforms() {
        let scores = vec![vec![0.9, 0.5, 0.3], vec![0.2, 0.8, 0.1]];
        let labels = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]];
        let transformed: Vec<Vec<f64>> = scores
            .iter()
            .map(|row| row.iter().map(|&v| v * v * 0.5 + 0.1).collect())
            .collect();
        let a = mc_metrics(&scores, &labels, 0.5).unwrap();
        let b = mc_metrics(&transformed, &labels, 0.5).unwrap();
        assert_eq!(a.one_error, b.one_error);
        assert_eq!(a.coverage_error, b.coverage_error);
        assert_eq!(a.ranking_loss, b.ranking_loss);
        assert_eq!(a.average_precision, b.average_precision);
        assert_eq!(
            au_prc(&scores, &labels).unwrap(),
            au_prc(&transformed, &labels).unwrap()
        );
    }
}
