//! Full-batch Adam training with validation early stopping.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    add_weight_decay, argmax_rows, Activation, backward_cached, forward_cached, loss, loss_gradient, prepare, row_weights,
    softmax, Channel, ClassifierModel, Gradients, LossTerms, Mode, Prepared, Reduction,
};
use crate::error::{Error, Result};
use crate::graph::{LabelSet, Split};
use crate::metrics::{evaluate, MetricsBundle};
use crate::rng::Rng;

/// Optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub dropout: f64,
    pub hidden: usize,
    pub seed: u64,
    /// Epochs without a validation bAcc improvement before stopping.
    pub early_stop_patience: usize,
    pub reduction: Reduction,
    /// Overrides the mode's default nonlinearity.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            lr: 1e-3,
            weight_decay: 5e-4,
            max_epochs: 500,
            dropout: 0.3,
            hidden: 128,
            seed: 0,
            early_stop_patience: 50,
            reduction: Reduction::Mean,
            activation: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("lr and weight_decay must be finite and non-negative".into()));
        }
        Ok(())
    }
}

const INIT_STREAM: u64 = 0;
const DROPOUT_STREAM: u64 = 1;

/// Adam with bias correction over a flat list of parameter blocks.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[&Array2<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            ndarray::Zip::from(&mut **p)
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .and(*g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub labeled: f64,
    pub synthetic: f64,
    pub total: f64,
}

impl From<LossTerms> for EpochLoss {
    fn from(t: LossTerms) -> Self {
        Self {
            labeled: t.labeled,
            synthetic: t.synthetic,
            total: t.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    pub val_bacc: Vec<f64>,
    /// 0-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub best_val_bacc: Option<f64>,
    /// Validation metrics of the returned model, when a validation split exists.
    pub val_metrics: Option<MetricsBundle>,
}

fn params_mut(model: &mut ClassifierModel) -> Vec<&mut Array2<f64>> {
    model
        .channels
        .iter_mut()
        .flat_map(|c| [&mut c.w1, &mut c.w2])
        .collect()
}

fn grads_ref(g: &Gradients) -> Vec<&Array2<f64>> {
    g.channels.iter().flat_map(|c| [&c.w1, &c.w2]).collect()
}

fn dropout_masks(rng: &mut Rng, channels: usize, rows: usize, hidden: usize, p: f64) -> Vec<Array2<f64>> {
    let keep = 1.0 / (1.0 - p);
    (0..channels)
        .map(|_| Array2::from_shape_fn((rows, hidden), |_| if rng.uniform() < p { 0.0 } else { keep }))
        .collect()
}

/// Mean cross-entropy over `nodes`. With `local`, row `k` of `probs` holds
/// `nodes[k]`; otherwise rows are node ids.
fn mean_nll(probs: &Array2<f64>, labels: &LabelSet, nodes: &[usize], local: bool) -> f64 {
    let total: f64 = nodes
        .iter()
        .enumerate()
        .filter_map(|(k, &i)| {
            let row = if local { k } else { i };
            labels.label(i).map(|y| -probs[[row, y]].max(1e-12).ln())
        })
        .sum();
    total / nodes.len().max(1) as f64
}

/// Train a classifier of the given mode.
///
/// Rows of `channels` must line up with `labels`, synthetic rows included.
/// Only real train rows and synthetic rows enter the objective. The model
/// from the epoch with the best validation balanced accuracy is returned.
pub fn train(
    mode: Mode,
    channels: &[Channel],
    labels: &LabelSet,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    cfg.validate()?;
    let first = channels
        .first()
        .ok_or_else(|| Error::InvalidConfig("no feature channels".into()))?;
    let rows = first.features.rows();
    if rows != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "feature rows vs labels".into(),
            expected: labels.len(),
            actual: rows,
        });
    }
    let c = labels.num_classes();
    let mut per_class = vec![0usize; c];
    for i in 0..labels.len() {
        if labels.split(i) == Split::Train {
            if let Some(y) = labels.label(i) {
                per_class[y] += 1;
            }
        }
    }
    if let Some(missing) = per_class.iter().position(|&n| n == 0) {
        return Err(Error::InvalidLabels(format!("class {missing} has no training node")));
    }

    let mut model = ClassifierModel::init(
        mode,
        channels.len(),
        first.features.cols(),
        cfg.hidden,
        c,
        &mut Rng::derive(cfg.seed, INIT_STREAM),
    );
    if let Some(act) = cfg.activation {
        model.activation = act;
    }
    let full = prepare(&model, channels)?;

    let (lw, sw) = row_weights(labels, cfg.lambda, cfg.reduction);
    let weights: Vec<f64> = lw.iter().zip(&sw).map(|(a, b)| a + b).collect();
    let val_nodes = labels.real_in(Split::Val);

    // Row-local modes only need the weighted rows for training and the
    // validation rows for early stopping.
    let (train_rows, train_inputs, val_inputs): (Vec<usize>, Vec<Prepared>, Vec<Prepared>) = if mode.needs_adjacency() {
        ((0..rows).collect(), full.clone(), full)
    } else {
        let tr: Vec<usize> = (0..rows).filter(|&i| labels.split(i) == Split::Train).collect();
        let ti = full.iter().map(|p| p.select(&tr)).collect();
        let vi = full.iter().map(|p| p.select(&val_nodes)).collect();
        (tr, ti, vi)
    };
    let train_labels = labels.select(&train_rows);
    let minority = labels.minority_class();

    let shapes: Vec<(usize, usize)> = model
        .channels
        .iter()
        .flat_map(|c| [c.w1.dim(), c.w2.dim()])
        .collect();
    let mut adam = Adam::new(cfg.lr, &shapes);
    let mut dropout_rng = Rng::derive(cfg.seed, DROPOUT_STREAM);

    let mut report = TrainReport {
        epochs: Vec::new(),
        val_bacc: Vec::new(),
        best_epoch: 0,
        best_val_bacc: None,
        val_metrics: None,
    };
    let mut best_model = model.clone();
    let mut best_metrics: Option<MetricsBundle> = None;
    let mut best_val_loss = f64::INFINITY;

    for epoch in 0..cfg.max_epochs {
        let masks = (cfg.dropout > 0.0).then(|| {
            dropout_masks(
                &mut dropout_rng,
                model.num_channels(),
                train_inputs[0].rows(),
                model.hidden(),
                cfg.dropout,
            )
        });
        let cache = forward_cached(&model, &train_inputs, masks.as_deref());
        let probs = softmax(&cache.logits);
        let terms = loss(&probs, &train_labels, cfg.lambda, cfg.reduction)?;
        if !terms.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        report.epochs.push(terms.into());

        let g = loss_gradient(&probs, labels, &train_rows, &weights);
        let mut grads = backward_cached(&model, &train_inputs, &cache, masks.as_deref(), &g);
        add_weight_decay(&mut grads, &model, cfg.weight_decay);
        if grads.channels.iter().any(|c| c.w1.iter().chain(c.w2.iter()).any(|v| !v.is_finite())) {
            return Err(Error::Diverged { epoch });
        }
        adam.step(&mut params_mut(&mut model), &grads_ref(&grads));

        if val_nodes.is_empty() {
            best_model = model.clone();
            report.best_epoch = epoch;
            continue;
        }
        let eval = forward_cached(&model, &val_inputs, None);
        let pred_rows = argmax_rows(eval.logits.view());
        let preds = if mode.needs_adjacency() {
            pred_rows
        } else {
            let mut p = vec![0; rows];
            for (&node, &y) in val_nodes.iter().zip(&pred_rows) {
                p[node] = y;
            }
            p
        };
        let metrics = evaluate(&preds, labels, Split::Val, minority)?;
        report.val_bacc.push(metrics.bacc);
        let val_loss = mean_nll(&softmax(&eval.logits), labels, &val_nodes, !mode.needs_adjacency());
        // equal bAcc counts as progress when the validation loss drops
        let better = report
            .best_val_bacc
            .is_none_or(|b| metrics.bacc > b || (metrics.bacc == b && val_loss < best_val_loss));
        if better {
            best_val_loss = val_loss;
            report.best_val_bacc = Some(metrics.bacc);
            report.best_epoch = epoch;
            best_model = model.clone();
            best_metrics = Some(metrics);
        } else if epoch - report.best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    report.val_metrics = best_metrics;
    Ok((best_model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FeatureMatrix;

    fn blobs(n: usize, seed: u64) -> (FeatureMatrix, LabelSet) {
        let mut rng = Rng::new(seed);
        let mut data = Vec::new();
        let mut classes = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let mu = if c == 0 { -3.0 } else { 3.0 };
            data.push(mu + rng.normal() * 0.5);
            data.push(mu + rng.normal() * 0.5);
            classes.push(c);
        }
        let x = FeatureMatrix::new(n, 2, data).unwrap();
        let l = LabelSet::uniform_split(2, &classes, Split::Train).unwrap();
        (x, l)
    }

    #[test]
    fn mean_nll_reads_global_or_local_rows() {
        let l = LabelSet::uniform_split(2, &[0, 1, 1], Split::Val).unwrap();
        let probs = ndarray::array![[0.5, 0.5], [0.25, 0.75], [0.9, 0.1]];
        let global = mean_nll(&probs, &l, &[1, 2], false);
        assert!((global - (-(0.75f64).ln() - (0.1f64).ln()) / 2.0).abs() < 1e-15);
        let local = mean_nll(&probs, &l, &[2], true);
        assert!((local - -(0.5f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Array2::from_elem((1, 2), 1.0);
        let g = ndarray::array![[0.5, -2.0]];
        let mut adam = Adam::new(0.1, &[(1, 2)]);
        adam.step(&mut [&mut p], &[&g]);
        assert!((p[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[[0, 1]] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_keeps_everything_fixed() {
        let (x, l) = blobs(20, 1);
        let cfg = TrainConfig {
            lr: 0.0,
            dropout: 0.0,
            max_epochs: 10,
            hidden: 4,
            ..TrainConfig::default()
        };
        let (model, report) = train(Mode::OsMlp, &[Channel::plain(&x)], &l, &cfg).unwrap();
        let init = ClassifierModel::init(Mode::OsMlp, 1, 2, 4, 2, &mut Rng::derive(cfg.seed, INIT_STREAM));
        assert_eq!(model, init);
        assert!(report.epochs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn separable_blobs_reach_full_train_accuracy() {
        let (x, l) = blobs(100, 2);
        let cfg = TrainConfig {
            max_epochs: 200,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let (model, _) = train(Mode::OsMlp, &[Channel::plain(&x)], &l, &cfg).unwrap();
        let pred = super::super::predict(&model, &[Channel::plain(&x)]).unwrap();
        let correct = pred.iter().zip(l.labels()).filter(|(p, y)| Some(**p) == **y).count();
        assert_eq!(correct, 100);
    }

    #[test]
    fn missing_class_is_rejected() {
        let (x, _) = blobs(4, 3);
        let l = LabelSet::uniform_split(2, &[0, 0, 0, 0], Split::Train).unwrap();
        assert!(train(Mode::OsMlp, &[Channel::plain(&x)], &l, &TrainConfig::default()).is_err());
    }

    #[test]
    fn reported_total_is_labeled_plus_lambda_synthetic() {
        let (x, l) = blobs(12, 4);
        let l = LabelSet::with_synthetic(
            2,
            l.labels().to_vec(),
            l.splits().to_vec(),
            (0..12).map(|i| i >= 9).collect(),
        )
        .unwrap();
        let cfg = TrainConfig {
            max_epochs: 20,
            hidden: 8,
            ..TrainConfig::default()
        };
        let (_, report) = train(Mode::OsMlp, &[Channel::plain(&x)], &l, &cfg).unwrap();
        for e in &report.epochs {
            assert!((e.total - (e.labeled + cfg.lambda * e.synthetic)).abs() < 1e-9);
        }
    }
}
