//! Per-class precision/recall/F1 and macro-averaged F1.

use std::ops::AddAssign;

use crate::error::{Error, Result};

/// Column labels used for eight-class result tables.
pub const EXPRESSION_NAMES: [&str; 8] = [
    "Neutral",
    "Anger",
    "Disgust",
    "Fear",
    "Happiness",
    "Sadness",
    "Surprise",
    "Other",
];

/// Class column names: expression names for eight classes, `c1..cK`
/// otherwise.
pub fn class_names(classes: usize) -> Vec<String> {
    if classes == EXPRESSION_NAMES.len() {
        EXPRESSION_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=classes).map(|c| format!("c{c}")).collect()
    }
}

/// Per-class true positive, false positive and false negative counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        Self {
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
        }
    }

    pub fn from_pairs(
        classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut counts = Self::new(classes);
        for (pred, truth) in pairs {
            counts.accumulate(pred, truth)?;
        }
        Ok(counts)
    }

    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    /// Records one prediction (zero-based class indices).
    pub fn accumulate(&mut self, pred: usize, truth: usize) -> Result<()> {
        let k = self.classes();
        for c in [pred, truth] {
            if c >= k {
                return Err(Error::ClassOutOfRange {
                    class: c,
                    classes: k,
                });
            }
        }
        if pred == truth {
            self.tp[pred] += 1;
        } else {
            self.fp[pred] += 1;
            self.fn_[truth] += 1;
        }
        Ok(())
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.tp[c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        self.fp[c]
    }

    pub fn fn_(&self, c: usize) -> u64 {
        self.fn_[c]
    }

    pub fn total(&self) -> u64 {
        self.tp.iter().sum::<u64>() + self.fp.iter().sum::<u64>()
    }

    /// F1 of class `c`; zero whenever precision or recall is undefined.
    ///
    /// Computed as `2·TP / (2·TP + FP + FN)`, which equals the harmonic mean
    /// of precision and recall and is zero exactly when `TP = 0`.
    pub fn class_f1(&self, c: usize) -> f64 {
        let tp = self.tp[c];
        if tp == 0 {
            return 0.0;
        }
        (2 * tp) as f64 / (2 * tp + self.fp[c] + self.fn_[c]) as f64
    }

    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.classes()).map(|c| self.class_f1(c)).collect()
    }

    /// Unweighted mean of the per-class F1 scores.
    pub fn macro_f1(&self) -> f64 {
        self.per_class_f1().iter().sum::<f64>() / self.classes() as f64
    }
}

impl AddAssign<&ConfusionCounts> for ConfusionCounts {
    fn add_assign(&mut self, rhs: &ConfusionCounts) {
        for (a, b) in self.tp.iter_mut().zip(&rhs.tp) {
            *a += b;
        }
        for (a, b) in self.fp.iter_mut().zip(&rhs.fp) {
            *a += b;
        }
        for (a, b) in self.fn_.iter_mut().zip(&rhs.fn_) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts {
            tp: vec![tp, 0],
            fp: vec![fp, 0],
            fn_: vec![fn_, 0],
        }
    }

    #[test]
    fn accumulate_examples() {
        let mut c = ConfusionCounts::new(3);
        c.accumulate(0, 0).unwrap();
        assert_eq!((c.tp(0), c.fp(0), c.fn_(0)), (1, 0, 0));
        assert_eq!(c.total(), 1);

        let mut c = ConfusionCounts::new(3);
        c.accumulate(1, 0).unwrap();
        assert_eq!(c.fp(1), 1);
        assert_eq!(c.fn_(0), 1);
        assert_eq!(c.tp(0) + c.tp(1) + c.tp(2), 0);
    }

    #[test]
    fn accumulate_rejects_out_of_range() {
        let mut c = ConfusionCounts::new(3);
        assert!(c.accumulate(3, 0).is_err());
        assert!(c.accumulate(0, 7).is_err());
        assert_eq!(c, ConfusionCounts::new(3));
    }

    #[test]
    fn class_f1_examples() {
        assert!((counts(2, 1, 1).class_f1(0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(counts(5, 0, 0).class_f1(0), 1.0);
        assert_eq!(counts(0, 3, 2).class_f1(0), 0.0);
        assert_eq!(counts(0, 0, 0).class_f1(0), 0.0);
    }

    #[test]
    fn constant_predictor_balanced() {
        let pairs = (0..8).flat_map(|t| std::iter::repeat_n((0, t), 10));
        let c = ConfusionCounts::from_pairs(8, pairs).unwrap();
        assert!((c.class_f1(0) - 2.0 / 9.0).abs() < 1e-15);
        assert!((c.macro_f1() - 2.0 / 72.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let c = ConfusionCounts::from_pairs(4, (0..4).map(|t| (t, t))).unwrap();
        assert_eq!(c.macro_f1(), 1.0);
    }

    #[test]
    fn shards_merge() {
        let pairs = [(0, 1), (1, 1), (2, 0), (2, 2), (1, 0)];
        let whole = ConfusionCounts::from_pairs(3, pairs).unwrap();
        let mut a = ConfusionCounts::from_pairs(3, pairs[..2].iter().copied()).unwrap();
        let b = ConfusionCounts::from_pairs(3, pairs[2..].iter().copied()).unwrap();
        a += &b;
        assert_eq!(a, whole);
    }

    #[test]
    fn names() {
        assert_eq!(class_names(8)[4], "Happiness");
        assert_eq!(class_names(3), vec!["c1", "c2", "c3"]);
    }
}
