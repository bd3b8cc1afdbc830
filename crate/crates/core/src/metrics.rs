//! Confusion counts and accuracy / recall / precision / F1, with Cough as the
//! positive class.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: Label, truth: Label) {
        match (predicted, truth) {
            (Label::Cough, Label::Cough) => self.tp += 1,
            (Label::Cough, Label::Others) => self.fp += 1,
            (Label::Others, Label::Cough) => self.fn_ += 1,
            (Label::Others, Label::Others) => self.tn += 1,
        }
    }

    /// Counts with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(self, o: ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Tallies `(predicted, truth)` pairs.
pub fn accumulate<I>(pairs: I) -> ConfusionMatrix
where
    I: IntoIterator<Item = (Label, Label)>,
{
    let mut cm = ConfusionMatrix::default();
    for (p, t) in pairs {
        cm.record(p, t);
    }
    cm
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub recall: bool,
    pub precision: bool,
    pub f1: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub degenerate: DegenerateFlags,
}

impl MetricsReport {
    /// `[accuracy, recall, precision, f1]` as percentages rounded to one decimal.
    pub fn percentages(&self) -> [f64; 4] {
        [self.accuracy, self.recall, self.precision, self.f1].map(|v| (v * 1000.0).round() / 10.0)
    }
}

/// Accuracy, recall, precision and F1. A 0/0 ratio reports 0 and sets the
/// matching degenerate flag.
pub fn compute(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix has no samples".into()));
    }
    let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let (recall, recall_degenerate) = ratio(cm.tp, cm.tp + cm.fn_);
    let (precision, precision_degenerate) = ratio(cm.tp, cm.tp + cm.fp);
    let (f1, f1_degenerate) = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall), false)
    } else {
        (0.0, true)
    };
    Ok(MetricsReport {
        accuracy,
        recall,
        precision,
        f1,
        degenerate: DegenerateFlags {
            recall: recall_degenerate,
            precision: precision_degenerate,
            f1: f1_degenerate,
        },
    })
}

/// Row-normalized 2x2 matrix; rows are true classes (Cough, Others), columns
/// predicted classes in the same order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedConfusion {
    pub rows: [[f64; 2]; 2],
    /// True-class rows that had no samples and were left at zero.
    pub empty_rows: [bool; 2],
}

pub fn normalize(cm: &ConfusionMatrix) -> NormalizedConfusion {
    let row = |a: u64, b: u64| {
        let s = a + b;
        if s == 0 {
            ([0.0, 0.0], true)
        } else {
            ([a as f64 / s as f64, b as f64 / s as f64], false)
        }
    };
    let (cough, cough_empty) = row(cm.tp, cm.fn_);
    let (others, others_empty) = row(cm.fp, cm.tn);
    NormalizedConfusion {
        rows: [cough, others],
        empty_rows: [cough_empty, others_empty],
    }
}

/// JSON-facing report: the counts and the four metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl ScoreReport {
    pub fn new(cm: &ConfusionMatrix) -> Result<Self> {
        let m = compute(cm)?;
        Ok(Self {
            tp: cm.tp,
            fp: cm.fp,
            fn_: cm.fn_,
            tn: cm.tn,
            accuracy: m.accuracy,
            recall: m.recall,
            precision: m.precision,
            f1: m.f1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Cough as C, Others as O};

    #[test]
    fn accumulate_hand_cases() {
        assert_eq!(accumulate([(C, C), (O, O)]), ConfusionMatrix::new(1, 0, 0, 1));
        assert_eq!(accumulate([(C, O)]), ConfusionMatrix::new(0, 1, 0, 0));
    }

    #[test]
    fn pilot_pairs_reconstruct_the_normalized_diagonal() {
        let mut pairs = Vec::new();
        pairs.extend(std::iter::repeat_n((C, C), 36));
        pairs.extend(std::iter::repeat_n((O, C), 4));
        pairs.extend(std::iter::repeat_n((C, O), 4));
        pairs.extend(std::iter::repeat_n((O, O), 156));
        let cm = accumulate(pairs);
        assert_eq!(cm, ConfusionMatrix::new(36, 4, 4, 156));
        let n = normalize(&cm);
        assert_eq!(n.rows[0], [0.9, 0.1]);
        assert_eq!(n.rows[1], [0.025, 0.975]);
        assert_eq!(format!("{:.2}", n.rows[1][1]), "0.97");
        assert_eq!(format!("{:.2}", n.rows[1][0]), "0.03");
    }

    #[test]
    fn pilot_rows() {
        let proposed = compute(&ConfusionMatrix::new(36, 4, 4, 156)).unwrap();
        assert_eq!(proposed.percentages(), [96.0, 90.0, 90.0, 90.0]);
        let previous = compute(&ConfusionMatrix::new(36, 28, 4, 132)).unwrap();
        assert!((previous.precision - 0.5625).abs() < 1e-12);
        assert!((previous.f1 - 0.692_307_692).abs() < 1e-9);
        assert_eq!(previous.percentages(), [84.0, 90.0, 56.3, 69.2]);
    }

    #[test]
    fn degenerate_conventions() {
        let m = compute(&ConfusionMatrix::new(0, 0, 0, 10)).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!((m.recall, m.precision, m.f1), (0.0, 0.0, 0.0));
        assert!(m.degenerate.recall && m.degenerate.precision && m.degenerate.f1);
        assert!(matches!(compute(&ConfusionMatrix::default()), Err(Error::Empty(_))));
    }

    #[test]
    fn perfect_classifier_normalizes_to_identity() {
        let n = normalize(&ConfusionMatrix::new(5, 0, 0, 7));
        assert_eq!(n.rows, [[1.0, 0.0], [0.0, 1.0]]);
        let empty = normalize(&ConfusionMatrix::new(0, 0, 0, 7));
        assert_eq!(empty.empty_rows, [true, false]);
    }

    #[test]
    fn report_json_keys() {
        let v = serde_json::to_value(ScoreReport::new(&ConfusionMatrix::new(1, 2, 3, 4)).unwrap()).unwrap();
        for key in ["tp", "fp", "fn", "tn", "accuracy", "recall", "precision", "f1"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    fn label() -> impl Strategy<Value = Label> {
        prop_oneof![Just(C), Just(O)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn counts_match_a_recount(pairs in proptest::collection::vec((label(), label()), 1..200)) {
            let cm = accumulate(pairs.iter().copied());
            let count = |p: Label, t: Label| pairs.iter().filter(|&&x| x == (p, t)).count() as u64;
            prop_assert_eq!(cm, ConfusionMatrix::new(count(C, C), count(C, O), count(O, C), count(O, O)));
            let m = compute(&cm).unwrap();
            let correct = pairs.iter().filter(|(p, t)| p == t).count() as f64;
            prop_assert!((m.accuracy - correct / pairs.len() as f64).abs() < 1e-12);
        }

        #[test]
        fn f1_lies_between_precision_and_recall(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
            let cm = ConfusionMatrix::new(tp, fp, fn_, tn);
            prop_assume!(cm.total() > 0);
            let m = compute(&cm).unwrap();
            if m.precision + m.recall > 0.0 {
                prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
                prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
            }
            let s = compute(&cm.swapped()).unwrap();
            prop_assert!((s.accuracy - m.accuracy).abs() < 1e-12);
        }

        #[test]
        fn merge_is_associative_with_accumulate(a in proptest::collection::vec((label(), label()), 0..50),
                                                b in proptest::collection::vec((label(), label()), 0..50)) {
            let whole = accumulate(a.iter().chain(&b).copied());
            prop_assert_eq!(accumulate(a) + accumulate(b), whole);
        }
    }

    #[test]
    fn precision_recall_not_swap_invariant() {
        let cm = ConfusionMatrix::new(36, 28, 4, 132);
        let a = compute(&cm).unwrap();
        let b = compute(&cm.swapped()).unwrap();
        assert!((a.precision - b.precision).abs() > 0.1);
        assert!((a.recall - b.recall).abs() > 0.01);
    }
}
