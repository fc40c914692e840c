//! Classification metrics: per-class and support-weighted F1.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    /// 1-based class id.
    pub class: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true labels in this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub n: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Binary F1 from counts; 0 when there are no positives at all.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Scores `predictions` against `labels`, both with classes in `1..=k`.
pub fn weighted_f1(predictions: &[usize], labels: &[usize], k: usize) -> Result<MetricReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if k == 0 {
        return Err(Error::Input("class count must be positive".into()));
    }
    if let Some(bad) = predictions.iter().chain(labels).find(|&&c| c == 0 || c > k) {
        return Err(Error::Input(format!("class {bad} outside 1..={k}")));
    }
    let n = labels.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in predictions.iter().zip(labels) {
        confusion[t - 1][p - 1] += 1;
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|i| {
            let tp = confusion[i][i];
            let support: usize = confusion[i].iter().sum();
            let predicted: usize = (0..k).map(|t| confusion[t][i]).sum();
            let fp = predicted - tp;
            let fn_ = support - tp;
            ClassMetrics {
                class: i + 1,
                tp,
                fp,
                fn_,
                tn: n - tp - fp - fn_,
                precision: ratio(tp, predicted),
                recall: ratio(tp, support),
                f1: f1_from_counts(tp, fp, fn_),
                support,
            }
        })
        .collect();
    let weighted = if n == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.support as f64 / n as f64 * c.f1).sum()
    };
    Ok(MetricReport {
        n,
        accuracy: ratio(correct, n),
        per_class,
        weighted_f1: weighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_binary() {
        let y = [1, 2, 2, 1, 3];
        let r = weighted_f1(&y, &y, 3).unwrap();
        assert_eq!((r.weighted_f1, r.accuracy), (1.0, 1.0));
        // TP = 2, FP = 1, FN = 1 for class 1
        let pred = [1, 1, 1, 2, 2];
        let truth = [1, 1, 2, 1, 2];
        let r = weighted_f1(&pred, &truth, 2).unwrap();
        let c = &r.per_class[0];
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 1, 1, 1));
        assert_eq!(c.f1, 4.0 / 6.0);
        assert_eq!(format!("{:.4}", c.f1), "0.6667");
    }

    #[test]
    fn absent_class_has_zero_f1_and_support() {
        let r = weighted_f1(&[1, 1], &[1, 1], 3).unwrap();
        assert_eq!(r.per_class[2].f1, 0.0);
        assert_eq!(r.per_class[2].support, 0);
        assert_eq!(r.weighted_f1, 1.0);
    }

    #[test]
    fn input_errors() {
        assert!(weighted_f1(&[1], &[1, 2], 2).is_err());
        assert!(weighted_f1(&[0], &[1], 2).is_err());
        assert!(weighted_f1(&[3], &[1], 2).is_err());
    }

    proptest! {
        #[test]
        fn weighted_is_support_weighted_mean(pairs in proptest::collection::vec((1usize..=4, 1usize..=4), 1..60)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let r = weighted_f1(&p, &t, 4).unwrap();
            let n = t.len() as f64;
            let expect: f64 = r.per_class.iter().map(|c| c.support as f64 / n * c.f1).sum();
            prop_assert_eq!(r.weighted_f1, expect);
            prop_assert!((0.0..=1.0).contains(&r.weighted_f1));
            prop_assert_eq!(r.per_class.iter().map(|c| c.support).sum::<usize>(), t.len());
        }
    }
}
