//! Confusion-matrix metrics for imbalanced classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LabelSet, Split};

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_pairs(num_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::new(num_classes);
        for (t, p) in pairs {
            cm.counts[t][p] += 1;
        }
        cm
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_total(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// Recall of class `c`; 0 when the class has no true members.
    pub fn recall(&self, c: usize) -> f64 {
        ratio(self.counts[c][c], self.row_total(c))
    }

    /// Precision of class `c`; 0 when nothing was predicted as `c`.
    pub fn precision(&self, c: usize) -> f64 {
        ratio(self.counts[c][c], self.col_total(c))
    }

    pub fn f1(&self, c: usize) -> f64 {
        let p = self.precision(c);
        let r = self.recall(c);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..self.num_classes()).map(|c| self.counts[c][c]).sum();
        ratio(trace, self.total())
    }

    pub fn balanced_accuracy(&self) -> f64 {
        mean((0..self.num_classes()).map(|c| self.recall(c)))
    }

    pub fn f1_macro(&self) -> f64 {
        mean((0..self.num_classes()).map(|c| self.f1(c)))
    }

    /// Classes with no true members in this matrix.
    pub fn empty_classes(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&c| self.row_total(c) == 0).collect()
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Field order is the JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub acc: f64,
    pub f1_macro: f64,
    pub bacc: f64,
    pub tpr: f64,
    pub minor_acc: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsBundle {
    pub fn from_confusion(confusion: ConfusionMatrix, minority_class: usize) -> Self {
        let tpr = confusion.recall(minority_class);
        Self {
            acc: confusion.accuracy(),
            f1_macro: confusion.f1_macro(),
            bacc: confusion.balanced_accuracy(),
            tpr,
            minor_acc: tpr,
            confusion,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const CSV_HEADER: &'static str = "acc,f1_macro,bacc,tpr,minor_acc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.acc, self.f1_macro, self.bacc, self.tpr, self.minor_acc
        )
    }
}

/// Score `predictions` on the real nodes of `split`. Synthetic nodes are
/// never evaluated.
pub fn evaluate(
    predictions: &[usize],
    labels: &LabelSet,
    split: Split,
    minority_class: usize,
) -> Result<MetricsBundle> {
    let c = labels.num_classes();
    if minority_class >= c {
        return Err(Error::InvalidLabels(format!(
            "minority class {minority_class} out of range"
        )));
    }
    let nodes = labels.real_in(split);
    if nodes.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let mut pairs = Vec::with_capacity(nodes.len());
    for &i in &nodes {
        let p = *predictions.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: predictions.len(),
        })?;
        if p >= c {
            return Err(Error::InvalidLabels(format!(
                "prediction {p} for node {i} out of range"
            )));
        }
        let t = labels.label(i).expect("evaluated nodes are labeled");
        pairs.push((t, p));
    }
    let confusion = ConfusionMatrix::from_pairs(c, pairs);
    let empty = confusion.empty_classes();
    if !empty.is_empty() {
        log::warn!("classes {empty:?} have no members in the {split} split; their recall counts as 0");
    }
    Ok(MetricsBundle::from_confusion(confusion, minority_class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn from_counts(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix { counts }
    }

    #[test]
    fn worked_binary_example() {
        let m = MetricsBundle::from_confusion(from_counts(vec![vec![50, 0], vec![25, 25]]), 1);
        assert_eq!(m.acc, 0.75);
        assert_eq!(m.bacc, 0.75);
        assert_eq!(m.tpr, 0.5);
        assert_eq!(m.minor_acc, 0.5);
        // F1(0) = 2·(50/75)·1/(50/75 + 1) = 0.8, F1(1) = 2·1·0.5/1.5 = 2/3
        assert!((m.f1_macro - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((m.f1_macro - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn all_majority_predictor() {
        let m = MetricsBundle::from_confusion(from_counts(vec![vec![90, 0], vec![10, 0]]), 1);
        assert_eq!(m.tpr, 0.0);
        assert_eq!(m.bacc, 0.5);
    }

    #[test]
    fn perfect_predictions() {
        let labels = LabelSet::uniform_split(2, &[0, 1, 1, 0], Split::Test).unwrap();
        let m = evaluate(&[0, 1, 1, 0], &labels, Split::Test, 1).unwrap();
        for v in [m.acc, m.f1_macro, m.bacc, m.tpr, m.minor_acc] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = from_counts(vec![vec![5, 0], vec![0, 0]]);
        assert_eq!(cm.recall(1), 0.0);
        assert_eq!(cm.precision(1), 0.0);
        assert_eq!(cm.f1(1), 0.0);
        assert_eq!(cm.balanced_accuracy(), 0.5);
        assert_eq!(cm.empty_classes(), vec![1]);
    }

    #[test]
    fn empty_split_errors() {
        let labels = LabelSet::uniform_split(2, &[0, 1], Split::Train).unwrap();
        assert!(matches!(
            evaluate(&[0, 1], &labels, Split::Test, 1),
            Err(Error::EmptySplit(_))
        ));
    }

    #[test]
    fn synthetic_nodes_are_excluded() {
        let labels = LabelSet::with_synthetic(
            2,
            vec![Some(0), Some(1), Some(1)],
            vec![Split::Train, Split::Train, Split::Train],
            vec![false, false, true],
        )
        .unwrap();
        let m = evaluate(&[0, 1, 0], &labels, Split::Train, 1).unwrap();
        assert_eq!(m.confusion.total(), 2);
        assert_eq!(m.acc, 1.0);
    }

    #[test]
    fn json_key_order_is_fixed() {
        let m = MetricsBundle::from_confusion(from_counts(vec![vec![1, 0], vec![0, 1]]), 1);
        let s = serde_json::to_string(&m).unwrap();
        let keys = ["\"acc\"", "\"f1_macro\"", "\"bacc\"", "\"tpr\"", "\"minor_acc\"", "\"confusion\""];
        let pos: Vec<usize> = keys.iter().map(|k| s.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    fn confusion_strategy() -> impl Strategy<Value = ConfusionMatrix> {
        (2usize..5).prop_flat_map(|c| {
            proptest::collection::vec(proptest::collection::vec(0u64..30, c), c)
                .prop_map(|counts| ConfusionMatrix { counts })
        })
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(cm in confusion_strategy()) {
            let m = MetricsBundle::from_confusion(cm.clone(), 0);
            for v in [m.acc, m.f1_macro, m.bacc, m.tpr] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let recalls: Vec<f64> = (0..cm.num_classes()).map(|c| cm.recall(c)).collect();
            prop_assert!((m.bacc - recalls.iter().sum::<f64>() / recalls.len() as f64).abs() < 1e-12);
        }

        #[test]
        fn accuracy_is_prior_weighted_recall(cm in confusion_strategy()) {
            prop_assume!(cm.total() > 0);
            let total = cm.total() as f64;
            let weighted: f64 = (0..cm.num_classes())
                .map(|c| cm.row_total(c) as f64 / total * cm.recall(c))
                .sum();
            prop_assert!((cm.accuracy() - weighted).abs() < 1e-12);
        }

        #[test]
        fn binary_bacc_is_mean_of_tpr_tnr(a in 0u64..50, b in 0u64..50, c in 0u64..50, d in 0u64..50) {
            let cm = ConfusionMatrix { counts: vec![vec![a, b], vec![c, d]] };
            let tnr = cm.recall(0);
            let tpr = cm.recall(1);
            prop_assert_eq!(cm.balanced_accuracy(), (tpr + tnr) / 2.0);
        }

        #[test]
        fn class_relabeling_invariance(cm in confusion_strategy(), rot in 0usize..5) {
            let c = cm.num_classes();
            let perm: Vec<usize> = (0..c).map(|i| (i + rot) % c).collect();
            let mut counts = vec![vec![0; c]; c];
            for i in 0..c {
                for j in 0..c {
                    counts[perm[i]][perm[j]] = cm.counts[i][j];
                }
            }
            let pm = ConfusionMatrix { counts };
            prop_assert!((pm.f1_macro() - cm.f1_macro()).abs() < 1e-12);
            prop_assert!((pm.balanced_accuracy() - cm.balanced_accuracy()).abs() < 1e-12);
        }
    }
}
