use super::EvalError;

fn check_lengths(scores: &[f64], y: &[f64]) -> Result<(), EvalError> {
    if scores.len() != y.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: y.len() });
    }
    Ok(())
}

fn check_probs(probs: &[f64]) -> Result<(), EvalError> {
    if probs.iter().all(|p| (0.0..=1.0).contains(p)) {
        Ok(())
    } else {
        Err(EvalError::NotProbability)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `+inf` first, then each distinct score in descending order.
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
    pub auc: f64,
}

/// Threshold sweep over the distinct scores; tied scores move both rates in
/// one step, which gives them half credit in the trapezoidal area.
pub fn roc(scores: &[f64], y: &[f64]) -> Result<RocCurve, EvalError> {
    check_lengths(scores, y)?;
    let pos = y.iter().filter(|&&v| v == 1.0).count() as f64;
    let neg = y.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut tpr = vec![0.0];
    let mut fpr = vec![0.0];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut auc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if y[order[k]] == 1.0 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k += 1;
        }
        let (t, f) = (tp / pos, fp / neg);
        auc += (f - fpr[fpr.len() - 1]) * (t + tpr[tpr.len() - 1]) / 2.0;
        thresholds.push(s);
        tpr.push(t);
        fpr.push(f);
    }
    Ok(RocCurve { thresholds, tpr, fpr, auc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBins {
    /// `(low, high)` predicted-probability range of each bin.
    pub edges: Vec<(f64, f64)>,
    pub counts: Vec<usize>,
    pub mean_predicted: Vec<f64>,
    pub observed_rate: Vec<f64>,
}

/// Equal-frequency bins over sorted probabilities. Chunks whose probability
/// ranges touch (tied values across a boundary) are merged so a tie never
/// straddles two bins.
pub fn calibration(probs: &[f64], y: &[f64], bins: usize) -> Result<CalibrationBins, EvalError> {
    check_lengths(probs, y)?;
    check_probs(probs)?;
    let n = probs.len();
    if n < bins || bins == 0 {
        return Err(EvalError::TooFewRows { rows: n, bins });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));

    let mut chunks: Vec<Vec<usize>> = Vec::with_capacity(bins);
    let (base, extra) = (n / bins, n % bins);
    let mut at = 0;
    for b in 0..bins {
        let size = base + usize::from(b < extra);
        let chunk = order[at..at + size].to_vec();
        at += size;
        match chunks.last_mut() {
            Some(prev) if probs[*prev.last().unwrap()] == probs[chunk[0]] => prev.extend(chunk),
            _ => chunks.push(chunk),
        }
    }

    let mut out = CalibrationBins { edges: vec![], counts: vec![], mean_predicted: vec![], observed_rate: vec![] };
    for chunk in chunks {
        let m = chunk.len() as f64;
        out.edges.push((probs[chunk[0]], probs[*chunk.last().unwrap()]));
        out.counts.push(chunk.len());
        out.mean_predicted.push(chunk.iter().map(|&i| probs[i]).sum::<f64>() / m);
        out.observed_rate.push(chunk.iter().map(|&i| y[i]).sum::<f64>() / m);
    }
    Ok(out)
}

/// 0.01, 0.02, …, 0.99.
pub fn dca_grid() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcaCurve {
    pub thresholds: Vec<f64>,
    pub prevalence: f64,
    pub net_benefit: Vec<f64>,
    pub standardized_net_benefit: Vec<f64>,
    pub nb_treat_all: Vec<f64>,
    pub snb_treat_all: Vec<f64>,
    pub nb_treat_none: Vec<f64>,
}

/// Net benefit `TP/n − FP/n · t/(1−t)` with treatment at `prob >= t`.
pub fn decision_curve(probs: &[f64], y: &[f64], grid: &[f64]) -> Result<DcaCurve, EvalError> {
    check_lengths(probs, y)?;
    check_probs(probs)?;
    let n = y.len() as f64;
    let prevalence = y.iter().sum::<f64>() / n;
    let mut net_benefit = Vec::with_capacity(grid.len());
    let mut nb_treat_all = Vec::with_capacity(grid.len());
    for &t in grid {
        let odds = t / (1.0 - t);
        let (mut tp, mut fp) = (0usize, 0usize);
        for (&p, &yi) in probs.iter().zip(y) {
            if p >= t {
                if yi == 1.0 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        net_benefit.push(tp as f64 / n - fp as f64 / n * odds);
        nb_treat_all.push(prevalence - (1.0 - prevalence) * odds);
    }
    let standardize = |v: &[f64]| v.iter().map(|nb| nb / prevalence).collect::<Vec<f64>>();
    Ok(DcaCurve {
        thresholds: grid.to_vec(),
        prevalence,
        standardized_net_benefit: standardize(&net_benefit),
        snb_treat_all: standardize(&nb_treat_all),
        net_benefit,
        nb_treat_all,
        nb_treat_none: vec![0.0; grid.len()],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub accuracy: f64,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub f1_pos: f64,
}

/// Confusion-matrix metrics with positive prediction at `prob >= t`.
pub fn threshold_metrics(probs: &[f64], y: &[f64], t: f64) -> Result<ThresholdMetrics, EvalError> {
    check_lengths(probs, y)?;
    check_probs(probs)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &yi) in probs.iter().zip(y) {
        match (p >= t, yi == 1.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => tn += 1.0,
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(ThresholdMetrics {
        threshold: t,
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        precision_pos: precision,
        recall_pos: recall,
        f1_pos: ratio(2.0 * precision * recall, precision + recall),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Pair-counting AUC with half credit for ties.
    fn mann_whitney(scores: &[f64], y: &[f64]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if y[i] == 1.0 && y[j] == 0.0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn perfect_and_constant_scores() {
        let y = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(roc(&[0.1, 0.2, 0.8, 0.9], &y).unwrap().auc, 1.0);
        assert_eq!(roc(&[0.5; 4], &y).unwrap().auc, 0.5);
        assert_eq!(roc(&[0.5; 2], &[1.0, 1.0]), Err(EvalError::SingleClass));
    }

    #[test]
    fn roc_rates_are_monotone() {
        let c = roc(&[0.3, 0.3, 0.9, 0.1, 0.5], &[0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(c.tpr.windows(2).all(|w| w[0] <= w[1]));
        assert!(c.fpr.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!((c.tpr[c.tpr.len() - 1], c.fpr[c.fpr.len() - 1]), (1.0, 1.0));
    }

    fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (4usize..120).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..12, n).prop_map(|v| v.into_iter().map(|s| s as f64 / 11.0).collect()),
                proptest::collection::vec(proptest::bool::ANY, n)
                    .prop_map(|v| v.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect::<Vec<f64>>()),
            )
        })
        .prop_filter("both classes", |(_, y)| y.contains(&0.0) && y.contains(&1.0))
    }

    proptest! {
        #[test]
        fn auc_equals_pair_counting((s, y) in labelled()) {
            prop_assert!((roc(&s, &y).unwrap().auc - mann_whitney(&s, &y)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform((s, y) in labelled()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert!((roc(&s, &y).unwrap().auc - roc(&t, &y).unwrap().auc).abs() < 1e-12);
        }

        #[test]
        fn reversed_labels_complement_auc((s, y) in labelled()) {
            let flipped: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
            prop_assert!((roc(&s, &flipped).unwrap().auc - (1.0 - roc(&s, &y).unwrap().auc)).abs() < 1e-12);
        }

        #[test]
        fn dca_matches_recount_and_stays_below_prevalence((p, y) in labelled()) {
            let grid = dca_grid();
            let c = decision_curve(&p, &y, &grid).unwrap();
            let n = y.len() as f64;
            for (k, &t) in grid.iter().enumerate() {
                let tp = (0..y.len()).filter(|&i| p[i] >= t && y[i] == 1.0).count() as f64;
                let fp = (0..y.len()).filter(|&i| p[i] >= t && y[i] == 0.0).count() as f64;
                prop_assert_eq!(c.net_benefit[k], tp / n - fp / n * (t / (1.0 - t)));
                prop_assert!(c.net_benefit[k] <= c.prevalence + 1e-15);
                prop_assert_eq!(c.nb_treat_none[k], 0.0);
            }
        }
    }

    #[test]
    fn treat_all_crosses_zero_at_prevalence() {
        let y = [1.0, 0.0, 0.0, 0.0];
        let c = decision_curve(&[0.5; 4], &y, &[0.25]).unwrap();
        assert!(c.nb_treat_all[0].abs() < 1e-15);
    }

    #[test]
    fn perfect_classifier_net_benefit_is_prevalence() {
        let y = [1.0, 1.0, 0.0, 0.0, 0.0];
        let c = decision_curve(&[1.0, 1.0, 0.0, 0.0, 0.0], &y, &dca_grid()).unwrap();
        assert!(c.net_benefit.iter().all(|&nb| (nb - 0.4).abs() < 1e-15));
        assert!(c.standardized_net_benefit.iter().all(|&s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn calibration_of_true_probabilities() {
        let mut rng = crate::seed::rng(17);
        let probs: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = probs.iter().map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect();
        let bins = calibration(&probs, &y, 10).unwrap();
        assert_eq!(bins.counts, vec![10_000; 10]);
        for b in 0..10 {
            assert!((bins.mean_predicted[b] - bins.observed_rate[b]).abs() < 0.02);
        }
    }

    #[test]
    fn calibration_ties_collapse_and_small_inputs_fail() {
        let y: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let bins = calibration(&[0.5; 20], &y, 10).unwrap();
        assert_eq!(bins.counts, vec![20]);
        assert_eq!((bins.mean_predicted[0], bins.observed_rate[0]), (0.5, 0.5));
        assert_eq!(calibration(&[0.5; 9], &[0.0; 9], 10), Err(EvalError::TooFewRows { rows: 9, bins: 10 }));
    }

    #[test]
    fn calibration_counts_differ_by_at_most_one() {
        let probs: Vec<f64> = (0..37).map(|i| i as f64 / 40.0).collect();
        let bins = calibration(&probs, &[0.0; 37], 10).unwrap();
        let (lo, hi) = (bins.counts.iter().min().unwrap(), bins.counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn threshold_metric_cases() {
        let y = [1.0, 0.0, 1.0, 0.0];
        let m = threshold_metrics(&[0.9, 0.1, 0.8, 0.2], &y, 0.5).unwrap();
        assert_eq!((m.accuracy, m.f1_pos, m.recall_pos), (1.0, 1.0, 1.0));

        let y: Vec<f64> = (0..100).map(|i| if i < 52 { 1.0 } else { 0.0 }).collect();
        let m = threshold_metrics(&[0.9; 100], &y, 0.5).unwrap();
        assert_eq!(m.recall_pos, 1.0);
        assert!((m.accuracy - 0.52).abs() < 1e-12);
    }
}
