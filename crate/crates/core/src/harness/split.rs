use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LabelSet, Split};
use crate::rng::Rng;

const SPLIT_STREAM: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.1,
            val: 0.1,
            test: 0.8,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions {parts:?} must be in [0, 1] and sum to 1"
            )));
        }
        if self.train == 0.0 {
            return Err(Error::InvalidConfig("train fraction must be positive".into()));
        }
        Ok(())
    }
}

/// Re-draw train/val/test among the labeled real nodes, per class.
///
/// Each class contributes `max(1, round(train·n))` train nodes and
/// `round(val·n)` validation nodes (at least one when `n ≥ 3` and the val
/// fraction is non-zero); the rest are test. Unlabeled nodes stay
/// unlabeled. Fully determined by `(labels, fractions, seed)`.
pub fn stratified_split(labels: &LabelSet, fractions: &SplitFractions, seed: u64) -> Result<LabelSet> {
    fractions.validate()?;
    if labels.num_synthetic() > 0 {
        return Err(Error::InvalidLabels("cannot re-split a label set with synthetic nodes".into()));
    }
    let mut rng = Rng::derive(seed, SPLIT_STREAM);
    let mut split = vec![Split::Unlabeled; labels.len()];
    for class in 0..labels.num_classes() {
        let mut members: Vec<usize> = (0..labels.len())
            .filter(|&i| labels.split(i) != Split::Unlabeled && labels.label(i) == Some(class))
            .collect();
        let n = members.len();
        if n == 0 {
            continue;
        }
        rng.shuffle(&mut members);
        let n_train = ((fractions.train * n as f64).round() as usize).clamp(1, n);
        let mut n_val = (fractions.val * n as f64).round() as usize;
        if fractions.val > 0.0 && n >= 3 {
            n_val = n_val.max(1);
        }
        let n_val = n_val.min(n - n_train);
        for (k, &i) in members.iter().enumerate() {
            split[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    labels.with_splits(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imbalanced(n_major: usize, n_minor: usize) -> LabelSet {
        let mut classes = vec![0; n_major];
        classes.extend(vec![1; n_minor]);
        LabelSet::uniform_split(2, &classes, Split::Test).unwrap()
    }

    #[test]
    fn one_one_eight_per_class() {
        let l = stratified_split(&imbalanced(900, 100), &SplitFractions::default(), 1).unwrap();
        let count = |s: Split, c: usize| (0..l.len()).filter(|&i| l.split(i) == s && l.label(i) == Some(c)).count();
        assert_eq!(count(Split::Train, 0), 90);
        assert_eq!(count(Split::Val, 0), 90);
        assert_eq!(count(Split::Test, 0), 720);
        assert_eq!(count(Split::Train, 1), 10);
        assert_eq!(count(Split::Val, 1), 10);
        assert_eq!(count(Split::Test, 1), 80);
    }

    #[test]
    fn tiny_class_still_trains() {
        let l = stratified_split(&imbalanced(100, 4), &SplitFractions::default(), 2).unwrap();
        assert_eq!(l.train_counts()[1], 1);
        assert_eq!(l.real_in(Split::Val).iter().filter(|&&i| l.label(i) == Some(1)).count(), 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let base = imbalanced(50, 20);
        let a = stratified_split(&base, &SplitFractions::default(), 5).unwrap();
        let b = stratified_split(&base, &SplitFractions::default(), 5).unwrap();
        let c = stratified_split(&base, &SplitFractions::default(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn unlabeled_nodes_untouched() {
        let l = LabelSet::new(
            2,
            vec![Some(0), None, Some(1), Some(0)],
            vec![Split::Train, Split::Unlabeled, Split::Test, Split::Val],
        )
        .unwrap();
        let s = stratified_split(&l, &SplitFractions::default(), 0).unwrap();
        assert_eq!(s.split(1), Split::Unlabeled);
    }

    #[test]
    fn bad_fractions_rejected() {
        let f = SplitFractions {
            train: 0.5,
            val: 0.5,
            test: 0.5,
        };
        assert!(stratified_split(&imbalanced(5, 5), &f, 0).is_err());
    }
}
