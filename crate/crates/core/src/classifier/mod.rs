//! Two-layer node classifiers with hand-derived gradients.
//!
//! Three forward maps share one parameterization (per channel `s`):
//!
//! * `OsMlp`: `Z_s = σ(X_s W1_s) W2_s` on the (possibly augmented) feature space
//! * `Sgc`: `Z_s = X_s W1_s W2_s`, i.e. `OsMlp` with σ = identity
//! * `GcnBaseline`: `Z_s = Â_s σ(Â_s H_s W1_s) W2_s` on raw features
//!
//! Channels are combined by summing logits before the softmax.

mod checkpoint;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use train::{train, Adam, EpochLoss, TrainConfig, TrainReport};

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::aggregate::NormalizedAdjacency;
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, LabelSet, Split};
use crate::rng::Rng;

/// Probabilities below this are clamped inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OsMlp,
    Sgc,
    GcnBaseline,
}

impl Mode {
    pub fn needs_adjacency(self) -> bool {
        matches!(self, Mode::GcnBaseline)
    }

    pub fn default_activation(self) -> Activation {
        match self {
            Mode::Sgc => Activation::Identity,
            Mode::OsMlp | Mode::GcnBaseline => Activation::Relu,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "os_mlp" => Ok(Mode::OsMlp),
            "sgc" => Ok(Mode::Sgc),
            "gcn" | "gcn_baseline" => Ok(Mode::GcnBaseline),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        }
    }

    /// Multiply `grad` in place by σ'(z). ReLU'(0) is taken as 0.
    fn backprop(self, z: &Array2<f64>, grad: &mut Array2<f64>) {
        if let Activation::Relu = self {
            Zip::from(grad).and(z).for_each(|g, &v| {
                if v <= 0.0 {
                    *g = 0.0;
                }
            });
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Average within the labeled and synthetic sums separately.
    #[default]
    Mean,
    /// Plain sums.
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub mode: Mode,
    pub activation: Activation,
    pub channels: Vec<ChannelWeights>,
}

impl ClassifierModel {
    /// Glorot-uniform initialization; W1 then W2 per channel, row-major draws.
    pub fn init(mode: Mode, channels: usize, in_dim: usize, hidden: usize, classes: usize, rng: &mut Rng) -> Self {
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.symmetric(a))
        };
        let channels = (0..channels)
            .map(|_| {
                let w1 = glorot(in_dim, hidden);
                let w2 = glorot(hidden, classes);
                ChannelWeights { w1, w2 }
            })
            .collect();
        Self {
            mode,
            activation: mode.default_activation(),
            channels,
        }
    }

    pub fn zeros(mode: Mode, channels: usize, in_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            mode,
            activation: mode.default_activation(),
            channels: (0..channels)
                .map(|_| ChannelWeights {
                    w1: Array2::zeros((in_dim, hidden)),
                    w2: Array2::zeros((hidden, classes)),
                })
                .collect(),
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn in_dim(&self) -> usize {
        self.channels[0].w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.channels[0].w1.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.channels[0].w2.ncols()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .channels
            .first()
            .ok_or_else(|| Error::InvalidConfig("model has no channels".into()))?;
        for ch in &self.channels {
            if ch.w1.dim() != first.w1.dim() || ch.w2.dim() != first.w2.dim() {
                return Err(Error::InvalidConfig("channel weight shapes differ".into()));
            }
            if ch.w1.nrows() == 0 || ch.w1.ncols() != ch.w2.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "W1 columns vs W2 rows".into(),
                    expected: ch.w1.ncols(),
                    actual: ch.w2.nrows(),
                });
            }
            if ch.w1.iter().chain(ch.w2.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("non-finite weight".into()));
            }
        }
        Ok(())
    }

    /// Σ ‖W‖² over all channels.
    pub fn squared_norm(&self) -> f64 {
        self.channels
            .iter()
            .map(|c| c.w1.iter().chain(c.w2.iter()).map(|v| v * v).sum::<f64>())
            .sum()
    }
}

/// One input channel: features plus the adjacency `GcnBaseline` needs.
#[derive(Debug, Clone, Copy)]
pub struct Channel<'a> {
    pub features: &'a FeatureMatrix,
    pub adj: Option<&'a NormalizedAdjacency>,
}

impl<'a> Channel<'a> {
    pub fn plain(features: &'a FeatureMatrix) -> Self {
        Self { features, adj: None }
    }

    pub fn with_adj(features: &'a FeatureMatrix, adj: &'a NormalizedAdjacency) -> Self {
        Self {
            features,
            adj: Some(adj),
        }
    }
}

/// Channel data with the first propagation already applied.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    /// `Â X` for the GCN baseline, `X` otherwise.
    pub px: Array2<f64>,
    pub adj: Option<NormalizedAdjacency>,
    pub adj_t: Option<NormalizedAdjacency>,
}

impl Prepared {
    pub fn rows(&self) -> usize {
        self.px.nrows()
    }

    /// Keep only `rows` (valid for modes without adjacency).
    pub fn select(&self, rows: &[usize]) -> Prepared {
        debug_assert!(self.adj.is_none());
        Prepared {
            px: self.px.select(Axis(0), rows),
            adj: None,
            adj_t: None,
        }
    }
}

fn to_array(m: &FeatureMatrix) -> Array2<f64> {
    m.view().to_owned()
}

fn spmm_array(adj: &NormalizedAdjacency, m: &Array2<f64>) -> Array2<f64> {
    let m = m.as_standard_layout();
    let out = adj.spmm(m.as_slice().expect("standard layout"), m.ncols());
    Array2::from_shape_vec((m.nrows(), m.ncols()), out).expect("spmm shape")
}

pub(crate) fn prepare(model: &ClassifierModel, channels: &[Channel]) -> Result<Vec<Prepared>> {
    if channels.len() != model.num_channels() {
        return Err(Error::DimensionMismatch {
            context: "channel count".into(),
            expected: model.num_channels(),
            actual: channels.len(),
        });
    }
    let rows = channels[0].features.rows();
    channels
        .iter()
        .map(|ch| {
            if ch.features.cols() != model.in_dim() {
                return Err(Error::DimensionMismatch {
                    context: "layer 1 input width".into(),
                    expected: model.in_dim(),
                    actual: ch.features.cols(),
                });
            }
            if ch.features.rows() != rows {
                return Err(Error::DimensionMismatch {
                    context: "channel rows".into(),
                    expected: rows,
                    actual: ch.features.rows(),
                });
            }
            match (model.mode.needs_adjacency(), ch.adj) {
                (true, Some(adj)) => {
                    if adj.num_nodes() != rows {
                        return Err(Error::DimensionMismatch {
                            context: "adjacency size vs feature rows".into(),
                            expected: rows,
                            actual: adj.num_nodes(),
                        });
                    }
                    let x = to_array(ch.features);
                    Ok(Prepared {
                        px: spmm_array(adj, &x),
                        adj: Some(adj.clone()),
                        adj_t: Some(adj.transpose()),
                    })
                }
                (true, None) => Err(Error::InvalidConfig("GCN baseline requires an adjacency".into())),
                (false, Some(_)) => Err(Error::InvalidConfig(format!(
                    "{:?} takes no adjacency (identity is implied)",
                    model.mode
                ))),
                (false, None) => Ok(Prepared {
                    px: to_array(ch.features),
                    adj: None,
                    adj_t: None,
                }),
            }
        })
        .collect()
}

/// Intermediate values kept for the backward pass.
pub(crate) struct ForwardCache {
    pub z1: Vec<Array2<f64>>,
    /// Hidden activations after dropout.
    pub hidden: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

/// Forward pass. `masks` are inverted-dropout multipliers on the hidden
/// activation, one per channel.
pub(crate) fn forward_cached(
    model: &ClassifierModel,
    inputs: &[Prepared],
    masks: Option<&[Array2<f64>]>,
) -> ForwardCache {
    let rows = inputs[0].rows();
    let mut logits = Array2::zeros((rows, model.num_classes()));
    let mut z1s = Vec::with_capacity(inputs.len());
    let mut hiddens = Vec::with_capacity(inputs.len());
    for (s, (inp, w)) in inputs.iter().zip(&model.channels).enumerate() {
        let z1 = inp.px.dot(&w.w1);
        let mut hidden = model.activation.apply(&z1);
        if let Some(m) = masks {
            hidden *= &m[s];
        }
        let u = hidden.dot(&w.w2);
        let z2 = match &inp.adj {
            Some(adj) => spmm_array(adj, &u),
            None => u,
        };
        logits += &z2;
        z1s.push(z1);
        hiddens.push(hidden);
    }
    ForwardCache {
        z1: z1s,
        hidden: hiddens,
        logits,
    }
}

/// Gradients of a scalar objective w.r.t. every channel's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub channels: Vec<ChannelWeights>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.w1.iter().chain(c.w2.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Backpropagate `d_logits` through the cached forward pass.
pub(crate) fn backward_cached(
    model: &ClassifierModel,
    inputs: &[Prepared],
    cache: &ForwardCache,
    masks: Option<&[Array2<f64>]>,
    d_logits: &Array2<f64>,
) -> Gradients {
    let channels = inputs
        .iter()
        .zip(&model.channels)
        .enumerate()
        .map(|(s, (inp, w))| {
            let du = match &inp.adj_t {
                Some(adj_t) => spmm_array(adj_t, d_logits),
                None => d_logits.clone(),
            };
            let dw2 = cache.hidden[s].t().dot(&du);
            let mut dh = du.dot(&w.w2.t());
            if let Some(m) = masks {
                dh *= &m[s];
            }
            model.activation.backprop(&cache.z1[s], &mut dh);
            let dw1 = inp.px.t().dot(&dh);
            ChannelWeights { w1: dw1, w2: dw2 }
        })
        .collect();
    Gradients { channels }
}

/// Row-wise softmax, numerically stabilized.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

pub fn logits(model: &ClassifierModel, channels: &[Channel]) -> Result<Array2<f64>> {
    model.validate()?;
    let inputs = prepare(model, channels)?;
    Ok(forward_cached(model, &inputs, None).logits)
}

/// Class probabilities (evaluation mode, no dropout), one row per node.
pub fn forward(model: &ClassifierModel, channels: &[Channel]) -> Result<Array2<f64>> {
    Ok(softmax(&logits(model, channels)?))
}

/// Argmax per row, lowest class id on ties.
pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn predict(model: &ClassifierModel, channels: &[Channel]) -> Result<Vec<usize>> {
    Ok(argmax_rows(forward(model, channels)?.view()))
}

/// The two parts of the objective and their λ-weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub labeled: f64,
    pub synthetic: f64,
    pub total: f64,
}

/// Per-row objective weights: labeled train rows and synthetic rows, each
/// group scaled by its reduction, synthetic additionally by λ.
pub(crate) fn row_weights(labels: &LabelSet, lambda: f64, reduction: Reduction) -> (Vec<f64>, Vec<f64>) {
    let n = labels.len();
    let mut labeled = vec![0.0; n];
    let mut synthetic = vec![0.0; n];
    let real = labels.real_in(Split::Train);
    let syn = labels.synthetic_nodes();
    let scale = |count: usize| match reduction {
        Reduction::Mean if count > 0 => 1.0 / count as f64,
        _ => 1.0,
    };
    let (sl, ss) = (scale(real.len()), scale(syn.len()));
    for i in real {
        labeled[i] = sl;
    }
    for i in syn {
        synthetic[i] = ss * lambda;
    }
    (labeled, synthetic)
}

fn cross_entropy(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

/// λ-weighted cross-entropy objective (without weight decay).
pub fn loss(probs: &Array2<f64>, labels: &LabelSet, lambda: f64, reduction: Reduction) -> Result<LossTerms> {
    if probs.nrows() < labels.len() {
        return Err(Error::DimensionMismatch {
            context: "probability rows vs labeled nodes".into(),
            expected: labels.len(),
            actual: probs.nrows(),
        });
    }
    let term = |nodes: Vec<usize>| -> f64 {
        let sum: f64 = nodes
            .iter()
            .map(|&i| cross_entropy(probs[[i, labels.label(i).expect("train nodes are labeled")]]))
            .sum();
        match reduction {
            Reduction::Mean if !nodes.is_empty() => sum / nodes.len() as f64,
            _ => sum,
        }
    };
    let labeled = term(labels.real_in(Split::Train));
    let synthetic = term(labels.synthetic_nodes());
    Ok(LossTerms {
        labeled,
        synthetic,
        total: labeled + lambda * synthetic,
    })
}

/// d(loss)/d(logits) for the given per-row weights.
pub(crate) fn loss_gradient(probs: &Array2<f64>, labels: &LabelSet, rows: &[usize], weights: &[f64]) -> Array2<f64> {
    let mut g = Array2::zeros(probs.dim());
    for (r, &node) in rows.iter().enumerate() {
        let w = weights[node];
        if w == 0.0 {
            continue;
        }
        let y = labels.label(node).expect("weighted rows are labeled");
        if probs[[r, y]] < PROB_FLOOR {
            continue;
        }
        for c in 0..probs.ncols() {
            let target = if c == y { 1.0 } else { 0.0 };
            g[[r, c]] = w * (probs[[r, c]] - target);
        }
    }
    g
}

/// Settings for [`backward`] and [`objective`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub weight_decay: f64,
    pub reduction: Reduction,
}

/// Full objective: λ-weighted CE plus `weight_decay · Σ‖W‖²`.
pub fn objective(model: &ClassifierModel, channels: &[Channel], labels: &LabelSet, cfg: &ObjectiveConfig) -> Result<f64> {
    let probs = forward(model, channels)?;
    let terms = loss(&probs, labels, cfg.lambda, cfg.reduction)?;
    Ok(terms.total + cfg.weight_decay * model.squared_norm())
}

/// Exact gradient of [`objective`] (no dropout).
pub fn backward(model: &ClassifierModel, channels: &[Channel], labels: &LabelSet, cfg: &ObjectiveConfig) -> Result<Gradients> {
    model.validate()?;
    let inputs = prepare(model, channels)?;
    if inputs[0].rows() < labels.len() {
        return Err(Error::DimensionMismatch {
            context: "feature rows vs labels".into(),
            expected: labels.len(),
            actual: inputs[0].rows(),
        });
    }
    let cache = forward_cached(model, &inputs, None);
    let probs = softmax(&cache.logits);
    let (lw, sw) = row_weights(labels, cfg.lambda, cfg.reduction);
    let weights: Vec<f64> = lw.iter().zip(&sw).map(|(a, b)| a + b).collect();
    let rows: Vec<usize> = (0..labels.len()).collect();
    let g = loss_gradient(&probs, labels, &rows, &weights);
    let mut grads = backward_cached(model, &inputs, &cache, None, &g);
    add_weight_decay(&mut grads, model, cfg.weight_decay);
    Ok(grads)
}

pub(crate) fn add_weight_decay(grads: &mut Gradients, model: &ClassifierModel, wd: f64) {
    if wd == 0.0 {
        return;
    }
    for (g, w) in grads.channels.iter_mut().zip(&model.channels) {
        g.w1.scaled_add(2.0 * wd, &w.w1);
        g.w2.scaled_add(2.0 * wd, &w.w2);
    }
}
