use crate::dataset::Label;
use serde::{Deserialize, Serialize};

/// Confusion counts with tumor as the positive class, plus derived ratios.
/// A ratio with a zero denominator is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalMetrics {
    pub fn from_counts(tp: usize, fn_: usize, tn: usize, fp: usize) -> Self {
        EvalMetrics {
            tp,
            fn_,
            tn,
            fp,
            accuracy: ratio(tp + tn, tp + fn_ + tn + fp),
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
        }
    }

    /// Pairs of `(truth, prediction)`.
    pub fn from_predictions(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
        for (truth, pred) in pairs {
            match (truth, pred) {
                (Label::Tumor, Label::Tumor) => tp += 1,
                (Label::Tumor, Label::NonTumor) => fn_ += 1,
                (Label::NonTumor, Label::NonTumor) => tn += 1,
                (Label::NonTumor, Label::Tumor) => fp += 1,
            }
        }
        Self::from_counts(tp, fn_, tn, fp)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    /// `(accuracy, sensitivity, specificity)` in percent, rounded to two
    /// decimals.
    pub fn percentages(&self) -> (f64, f64, f64) {
        let p = |x: f64| (x * 10_000.0).round() / 100.0;
        (p(self.accuracy), p(self.sensitivity), p(self.specificity))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reconstructed_table_rows() {
        let m = EvalMetrics::from_counts(1343, 232, 1050, 32);
        assert_eq!(m.percentages(), (90.06, 85.27, 97.04));
        let m = EvalMetrics::from_counts(1574, 1, 74, 1008);
        assert_eq!(m.percentages(), (62.02, 99.94, 6.84));
    }

    #[test]
    fn degenerate_predictors() {
        let perfect = EvalMetrics::from_counts(10, 0, 7, 0);
        assert_eq!(perfect.percentages(), (100.0, 100.0, 100.0));
        let always_tumor = EvalMetrics::from_predictions(
            [Label::Tumor, Label::NonTumor, Label::NonTumor].map(|t| (t, Label::Tumor)),
        );
        assert_eq!((always_tumor.sensitivity, always_tumor.specificity), (1.0, 0.0));
        assert_eq!(EvalMetrics::from_counts(0, 0, 0, 0).accuracy, 0.0);
    }

    #[test]
    fn serializes_fn_field() {
        let v = serde_json::to_value(EvalMetrics::from_counts(1, 2, 3, 4)).unwrap();
        assert_eq!(v["fn"], 2);
    }

    proptest! {
        #[test]
        fn ratio_identities(tp in 0usize..5000, fn_ in 0usize..5000, tn in 0usize..5000, fp in 0usize..5000) {
            let m = EvalMetrics::from_counts(tp, fn_, tn, fp);
            let total = tp + fn_ + tn + fp;
            if total > 0 {
                prop_assert!((m.accuracy * total as f64 - (tp + tn) as f64).abs() < 1e-6);
            }
            if tp + fn_ > 0 {
                prop_assert!((m.sensitivity * (tp + fn_) as f64 - tp as f64).abs() < 1e-6);
            }
            if tn + fp > 0 {
                prop_assert!((m.specificity * (tn + fp) as f64 - tn as f64).abs() < 1e-6);
            }
            for r in [m.accuracy, m.sensitivity, m.specificity] {
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }
    }
}
