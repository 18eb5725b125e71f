//! Classification metrics.
//!
//! AUC uses the rank statistic with tie averaging, computed with doubled
//! integer numerators so it agrees bit-exactly with a brute-force pairwise
//! count.

use serde::{Deserialize, Serialize};

use crate::error::{LnmError, Result};

/// ROC AUC by rank statistic; ties count one half. Returns `None` when only
/// one class is present.
pub fn roc_auc(labels: &[u8], probs: &[f64]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));

    // Twice the tie-averaged rank sum of the positive class stays integral.
    let mut twice_rank_sum_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the average ((i+1) + (j+1)) / 2
        let twice_avg_rank = (i as u64 + 1) + (j as u64 + 1);
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                twice_rank_sum_pos += twice_avg_rank;
            }
        }
        i = j + 1;
    }
    let numerator = twice_rank_sum_pos - n_pos * (n_pos + 1);
    Some(numerator as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub balanced_accuracy: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl MetricReport {
    pub fn n(&self) -> usize {
        self.true_positives + self.false_positives + self.true_negatives + self.false_negatives
    }
}

/// Metrics from labels, probabilities and a decision threshold
/// (probability >= threshold is positive).
pub fn compute_metrics(labels: &[u8], probs: &[f64], threshold: f64) -> Result<MetricReport> {
    if labels.len() != probs.len() {
        return Err(LnmError::Validation(format!(
            "labels ({}) and probabilities ({}) differ in length",
            labels.len(),
            probs.len()
        )));
    }
    if labels.is_empty() {
        return Err(LnmError::Validation("metrics require at least one sample".into()));
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(LnmError::Validation("probabilities contain non-finite values".into()));
    }

    let (mut tp, mut fp, mut tn, mut fn_count) = (0usize, 0usize, 0usize, 0usize);
    for (&label, &p) in labels.iter().zip(probs.iter()) {
        let decision = p >= threshold;
        match (label == 1, decision) {
            (true, true) => tp += 1,
            (true, false) => fn_count += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, denom: usize| if denom == 0 { f64::NAN } else { num as f64 / denom as f64 };
    let sensitivity = ratio(tp, tp + fn_count);
    let specificity = ratio(tn, tn + fp);
    let f1 = if 2 * tp + fp + fn_count == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_count) as f64 };
    Ok(MetricReport {
        auc: roc_auc(labels, probs),
        sensitivity,
        specificity,
        accuracy: (tp + tn) as f64 / labels.len() as f64,
        f1,
        balanced_accuracy: (sensitivity + specificity) / 2.0,
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_count,
    })
}

/// Mean and population standard deviation of each metric over folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub balanced_accuracy: f64,
}

pub fn aggregate_reports(reports: &[MetricReport]) -> Result<(MetricAggregate, MetricAggregate)> {
    if reports.is_empty() {
        return Err(LnmError::Validation("cannot aggregate zero reports".into()));
    }
    let columns: Vec<Vec<f64>> = vec![
        reports.iter().map(|r| r.auc.unwrap_or(f64::NAN)).collect(),
        reports.iter().map(|r| r.sensitivity).collect(),
        reports.iter().map(|r| r.specificity).collect(),
        reports.iter().map(|r| r.accuracy).collect(),
        reports.iter().map(|r| r.f1).collect(),
        reports.iter().map(|r| r.balanced_accuracy).collect(),
    ];
    let stats: Vec<(f64, f64)> = columns.iter().map(|c| mean_population_sd(c)).collect();
    let mean = MetricAggregate {
        auc: stats[0].0,
        sensitivity: stats[1].0,
        specificity: stats[2].0,
        accuracy: stats[3].0,
        f1: stats[4].0,
        balanced_accuracy: stats[5].0,
    };
    let sd = MetricAggregate {
        auc: stats[0].1,
        sensitivity: stats[1].1,
        specificity: stats[2].1,
        accuracy: stats[3].1,
        f1: stats[4].1,
        balanced_accuracy: stats[5].1,
    };
    Ok((mean, sd))
}

fn mean_population_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::component_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng as _;

    /// Exhaustive pairwise oracle with the same doubled-integer arithmetic.
    fn auc_brute_force(labels: &[u8], probs: &[f64]) -> Option<f64> {
        let mut wins2: u64 = 0;
        let mut pairs: u64 = 0;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1;
                if probs[i] > probs[j] {
                    wins2 += 2;
                } else if probs[i] == probs[j] {
                    wins2 += 1;
                }
            }
        }
        if pairs == 0 {
            None
        } else {
            Some(wins2 as f64 / (2 * pairs) as f64)
        }
    }

    #[test]
    fn perfectly_separated_scores() {
        let labels = [0, 0, 1, 1];
        let probs = [0.1, 0.2, 0.8, 0.9];
        let report = compute_metrics(&labels, &probs, 0.5).unwrap();
        assert_eq!(report.auc, Some(1.0));
        assert_abs_diff_eq!(report.sensitivity, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(report.specificity, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn all_ties_give_half() {
        let labels = [0, 1, 0, 1, 1];
        let probs = [0.4; 5];
        assert_eq!(roc_auc(&labels, &probs), Some(0.5));
    }

    #[test]
    fn worked_example() {
        let labels = [1, 1, 0, 0];
        let probs = [0.9, 0.4, 0.6, 0.1];
        let report = compute_metrics(&labels, &probs, 0.5).unwrap();
        assert_eq!(
            (report.true_positives, report.false_negatives, report.false_positives, report.true_negatives),
            (1, 1, 1, 1)
        );
        assert_abs_diff_eq!(report.sensitivity, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(report.specificity, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(report.accuracy, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(report.balanced_accuracy, 0.5, epsilon = 1e-15);
        assert_eq!(report.auc, Some(0.75)); // 3 wins of 4 pairs
    }

    #[test]
    fn single_class_auc_is_undefined() {
        let labels = [1, 1, 1];
        let probs = [0.2, 0.5, 0.9];
        assert_eq!(roc_auc(&labels, &probs), None);
        let report = compute_metrics(&labels, &probs, 0.5).unwrap();
        assert!(report.auc.is_none());
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(compute_metrics(&[1, 0], &[0.5], 0.5), Err(LnmError::Validation(_))));
    }

    #[test]
    fn rank_auc_equals_brute_force_exactly_on_small_instances() {
        let mut rng = component_rng(13, "auc-oracle");
        let mut trials = 0;
        while trials < 1000 {
            let n = rng.random_range(2..=12);
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
            if labels.iter().all(|&l| l == 0) || labels.iter().all(|&l| l == 1) {
                continue;
            }
            // quantized probabilities force frequent ties
            let probs: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) / 8.0).collect();
            let fast = roc_auc(&labels, &probs).unwrap();
            let brute = auc_brute_force(&labels, &probs).unwrap();
            assert_eq!(fast.to_bits(), brute.to_bits(), "labels {labels:?} probs {probs:?}");
            trials += 1;
        }
    }

    #[test]
    fn confusion_counts_sum_and_accuracy_identity() {
        let mut rng = component_rng(14, "metrics-sum");
        for _ in 0..50 {
            let n = rng.random_range(1..30);
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
            let probs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let r = compute_metrics(&labels, &probs, 0.5).unwrap();
            assert_eq!(r.n(), n);
            assert_abs_diff_eq!(
                r.accuracy,
                (r.true_positives + r.true_negatives) as f64 / n as f64,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn aggregation_matches_hand_computation_exactly() {
        let mk = |auc: f64, sens: f64, spec: f64| MetricReport {
            auc: Some(auc),
            sensitivity: sens,
            specificity: spec,
            accuracy: 0.5 * (sens + spec),
            f1: sens,
            balanced_accuracy: 0.5 * (sens + spec),
            true_positives: 1,
            false_positives: 1,
            true_negatives: 1,
            false_negatives: 1,
        };
        let reports = [mk(0.8, 0.7, 0.9), mk(0.9, 0.8, 0.8), mk(0.7, 0.6, 1.0)];
        let (mean, sd) = aggregate_reports(&reports).unwrap();
        assert_abs_diff_eq!(mean.auc, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(mean.sensitivity, 0.7, epsilon = 1e-15);
        // population sd of {0.8, 0.9, 0.7} around 0.8
        let expected_sd = (((0.0f64).powi(2) + (0.1f64).powi(2) + (0.1f64).powi(2)) / 3.0).sqrt();
        assert_abs_diff_eq!(sd.auc, expected_sd, epsilon = 1e-15);
        assert_abs_diff_eq!(sd.sensitivity, expected_sd, epsilon = 1e-15);
    }
}
