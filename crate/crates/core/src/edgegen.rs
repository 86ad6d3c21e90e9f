//! Bilinear link predictor `σ(h_i W h_jᵀ)` and the edge-noise study.
//!
//! The study trains a GCN twice under identical seeds, once on the true
//! adjacency and once on an adjacency synthesized by the link predictor,
//! to measure how much classification degrades when edges are generated.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::normalize;
use crate::classifier::{predict, train, Adam, Channel, Mode, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{Dataset, FeatureMatrix, SparseGraph, Split};
use crate::harness::{stratified_split, SplitFractions};
use crate::metrics::evaluate;
use crate::rng::Rng;

/// Largest f64 strictly below 1.
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_MINUS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGenerator {
    pub weights: Array2<f64>,
    /// Pairs scoring at or above this become edges.
    pub threshold: f64,
    /// Per-node limit on generated partners; `None` keeps every pair above
    /// the threshold.
    pub degree_cap: Option<usize>,
}

impl EdgeGenerator {
    pub fn new(weights: Array2<f64>, threshold: f64, degree_cap: Option<usize>) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::InvalidConfig("edge weight matrix must be square".into()));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite edge weight".into()));
        }
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!("threshold {threshold} outside (0, 1]")));
        }
        Ok(Self {
            weights,
            threshold,
            degree_cap,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// `σ(h_i · W · h_jᵀ)`, always strictly inside (0, 1).
pub fn edge_score(gen: &EdgeGenerator, h_i: &[f64], h_j: &[f64]) -> Result<f64> {
    let d = gen.dim();
    for len in [h_i.len(), h_j.len()] {
        if len != d {
            return Err(Error::DimensionMismatch {
                context: "edge_score feature width".into(),
                expected: d,
                actual: len,
            });
        }
    }
    Ok(sigmoid(bilinear(&gen.weights, h_i, h_j)))
}

fn bilinear(w: &Array2<f64>, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (p, &ap) in a.iter().enumerate() {
        if ap == 0.0 {
            continue;
        }
        let row = w.row(p);
        s += ap * row.iter().zip(b).map(|(w, b)| w * b).sum::<f64>();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeGenConfig {
    /// Fraction of nodes used to fit the generator; the same fraction is
    /// held out for edge evaluation.
    pub train_fraction: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub threshold: f64,
    /// Cap generated degree at this multiple of the true mean degree.
    pub degree_multiplier: f64,
}

impl Default for EdgeGenConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.1,
            epochs: 300,
            lr: 0.01,
            weight_decay: 1e-4,
            threshold: 0.5,
            degree_multiplier: 4.0,
        }
    }
}

/// Disjoint train / held-out node sets, each `⌊fraction · N⌋` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn node_split(num_nodes: usize, fraction: f64, seed: u64) -> Result<NodeSplit> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::InvalidConfig(format!("train_fraction {fraction} outside (0, 0.5]")));
    }
    let k = (fraction * num_nodes as f64 + 1e-9).floor() as usize;
    let mut perm: Vec<usize> = (0..num_nodes).collect();
    Rng::derive(seed, 10).shuffle(&mut perm);
    let mut train = perm[..k].to_vec();
    let mut test = perm[k..2 * k].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(NodeSplit { train, test })
}

/// Labeled node pairs: positives are edges inside `nodes`, negatives an
/// equal number of uniformly drawn non-adjacent pairs inside `nodes`.
fn labeled_pairs(graph: &SparseGraph, nodes: &[usize], rng: &mut Rng) -> Vec<(usize, usize, f64)> {
    let inside: std::collections::HashSet<usize> = nodes.iter().copied().collect();
    let merged = graph.merged();
    let mut pairs = Vec::new();
    for &i in nodes {
        for &j in merged.neighbors(0, i) {
            if i < j && inside.contains(&j) {
                pairs.push((i, j, 1.0));
            }
        }
    }
    let positives = pairs.len();
    let max_pairs = nodes.len() * nodes.len().saturating_sub(1) / 2;
    let wanted = positives.min(max_pairs - positives);
    let mut attempts = 0;
    let mut negatives = 0;
    while negatives < wanted && attempts < 100 * wanted.max(1) {
        attempts += 1;
        let a = nodes[rng.below(nodes.len())];
        let b = nodes[rng.below(nodes.len())];
        if a == b || merged.has_edge(0, a, b) || merged.has_edge(0, b, a) {
            continue;
        }
        pairs.push((a.min(b), a.max(b), 0.0));
        negatives += 1;
    }
    pairs
}

/// Mean node degree over all relations combined.
pub fn mean_degree(graph: &SparseGraph) -> f64 {
    let merged = graph.merged();
    if graph.num_nodes() == 0 {
        return 0.0;
    }
    merged.num_stored_edges() as f64 / graph.num_nodes() as f64
}

/// Fit `W` by full-batch Adam on binary cross-entropy over edges among the
/// training nodes and an equal number of sampled non-edges.
pub fn train_edge_generator(
    features: &FeatureMatrix,
    graph: &SparseGraph,
    cfg: &EdgeGenConfig,
    seed: u64,
) -> Result<(EdgeGenerator, NodeSplit)> {
    if graph.num_nodes() != features.rows() {
        return Err(Error::DimensionMismatch {
            context: "edge generator: graph nodes vs feature rows".into(),
            expected: graph.num_nodes(),
            actual: features.rows(),
        });
    }
    if graph.num_nodes() == 0 {
        return Err(Error::NoEdges("an empty graph".into()));
    }
    let split = node_split(graph.num_nodes(), cfg.train_fraction, seed)?;
    let mut rng = Rng::derive(seed, 11);
    let pairs = labeled_pairs(graph, &split.train, &mut rng);
    if !pairs.iter().any(|p| p.2 == 1.0) {
        return Err(Error::NoEdges(format!("the {} generator training nodes", split.train.len())));
    }

    let d = features.cols();
    let mut w = Array2::<f64>::zeros((d, d));
    let mut adam = Adam::new(cfg.lr, &[(d, d)]);
    let scale = 1.0 / pairs.len() as f64;
    for _ in 0..cfg.epochs {
        let mut grad = Array2::<f64>::zeros((d, d));
        for &(i, j, y) in &pairs {
            let (hi, hj) = (features.row(i), features.row(j));
            let err = (sigmoid(bilinear(&w, hi, hj)) - y) * scale;
            for (p, &a) in hi.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let mut row = grad.row_mut(p);
                for (g, &b) in row.iter_mut().zip(hj) {
                    *g += err * a * b;
                }
            }
        }
        grad.scaled_add(2.0 * cfg.weight_decay, &w);
        adam.step(&mut [&mut w], &[&grad]);
    }
    let cap = (cfg.degree_multiplier * mean_degree(graph)).ceil().max(1.0) as usize;
    Ok((EdgeGenerator::new(w, cfg.threshold, Some(cap))?, split))
}

/// Score every pair and keep, per node, its highest-scoring partners at or
/// above the threshold (up to the degree cap; ties go to the lower index).
/// The union of kept pairs is symmetrized.
pub fn synthesize_adjacency(gen: &EdgeGenerator, features: &FeatureMatrix) -> Result<SparseGraph> {
    let n = features.rows();
    if features.cols() != gen.dim() {
        return Err(Error::DimensionMismatch {
            context: "synthesize_adjacency feature width".into(),
            expected: gen.dim(),
            actual: features.cols(),
        });
    }
    let hw = features.view().dot(&gen.weights);
    let chosen: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let left = hw.row(i);
            let mut scored: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .filter_map(|j| {
                    let s: f64 = left.iter().zip(features.row(j)).map(|(a, b)| a * b).sum();
                    let p = sigmoid(s);
                    (p >= gen.threshold).then_some((p, j))
                })
                .collect();
            if let Some(cap) = gen.degree_cap {
                if scored.len() > cap {
                    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                    scored.truncate(cap);
                }
            }
            scored.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    let edges: Vec<_> = chosen
        .iter()
        .enumerate()
        .flat_map(|(i, js)| js.iter().map(move |&j| (i.min(j), i.max(j), 0)))
        .collect();
    SparseGraph::build(n, &edges, true, Some(1))
}

/// Area under the ROC curve (ties count one half).
pub fn auc(scores: &[(f64, f64)]) -> Option<f64> {
    let mut sorted: Vec<(f64, f64)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pos = sorted.iter().filter(|s| s.1 == 1.0).count();
    let neg = sorted.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // average ranks over tie groups
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < sorted.len() {
        let mut e = k;
        while e + 1 < sorted.len() && sorted[e + 1].0 == sorted[k].0 {
            e += 1;
        }
        let avg_rank = (k + e) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * sorted[k..=e].iter().filter(|s| s.1 == 1.0).count() as f64;
        k = e + 1;
    }
    Some((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

/// AUC and thresholded accuracy of the generator on pairs inside `nodes`.
pub fn evaluate_edges(
    gen: &EdgeGenerator,
    features: &FeatureMatrix,
    graph: &SparseGraph,
    nodes: &[usize],
    seed: u64,
) -> Result<(f64, f64)> {
    let pairs = labeled_pairs(graph, nodes, &mut Rng::derive(seed, 12));
    let scored: Vec<(f64, f64)> = pairs
        .iter()
        .map(|&(i, j, y)| edge_score(gen, features.row(i), features.row(j)).map(|s| (s, y)))
        .collect::<Result<_>>()?;
    let area = auc(&scored).ok_or_else(|| Error::NoEdges(format!("the {} held-out nodes", nodes.len())))?;
    let correct = scored
        .iter()
        .filter(|(s, y)| (*s >= gen.threshold) == (*y == 1.0))
        .count();
    Ok((area, correct as f64 / scored.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub edge: EdgeGenConfig,
    pub train: TrainConfig,
    pub split: SplitFractions,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            edge: EdgeGenConfig::default(),
            train: TrainConfig::default(),
            split: SplitFractions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub seed: u64,
    pub edge_auc: f64,
    pub edge_acc: f64,
    pub acc_original_edges: f64,
    pub acc_synthetic_edges: f64,
    pub synthetic_edges: usize,
    pub original_edges: usize,
}

/// Test accuracy of the GCN baseline on `graph`, with the split and
/// features prepared from `seed`.
fn gcn_test_accuracy(dataset: &Dataset, features: &FeatureMatrix, graph: &SparseGraph, cfg: &NoiseConfig, seed: u64) -> Result<f64> {
    let labels = stratified_split(&dataset.labels, &cfg.split, seed)?;
    let adj = normalize(&graph.merged(), 0)?;
    let train_cfg = TrainConfig { seed, ..cfg.train };
    let (model, _) = train(Mode::GcnBaseline, &[Channel::with_adj(features, &adj)], &labels, &train_cfg)?;
    let preds = predict(&model, &[Channel::with_adj(features, &adj)])?;
    Ok(evaluate(&preds, &labels, Split::Test, labels.minority_class())?.acc)
}

/// Features standardized by the classification train split for `seed`.
fn noise_features(dataset: &Dataset, cfg: &NoiseConfig, seed: u64) -> Result<FeatureMatrix> {
    let labels = stratified_split(&dataset.labels, &cfg.split, seed)?;
    Ok(dataset.features.standardize_by(&labels.real_in(Split::Train)))
}

/// Classification accuracy on the true graph and on `synthetic`, same
/// seeds and configuration.
pub fn compare_adjacencies(dataset: &Dataset, synthetic: &SparseGraph, cfg: &NoiseConfig, seed: u64) -> Result<(f64, f64)> {
    let h = noise_features(dataset, cfg, seed)?;
    let original = gcn_test_accuracy(dataset, &h, &dataset.graph, cfg, seed)?;
    let generated = gcn_test_accuracy(dataset, &h, synthetic, cfg, seed)?;
    Ok((original, generated))
}

pub fn noise_experiment(dataset: &Dataset, cfg: &NoiseConfig, seed: u64) -> Result<NoiseReport> {
    let h = noise_features(dataset, cfg, seed)?;
    let (gen, split) = train_edge_generator(&h, &dataset.graph, &cfg.edge, seed)?;
    let (edge_auc, edge_acc) = evaluate_edges(&gen, &h, &dataset.graph, &split.test, seed)?;
    let synthetic = synthesize_adjacency(&gen, &h)?;
    let acc_original_edges = gcn_test_accuracy(dataset, &h, &dataset.graph, cfg, seed)?;
    let acc_synthetic_edges = gcn_test_accuracy(dataset, &h, &synthetic, cfg, seed)?;
    Ok(NoiseReport {
        seed,
        edge_auc,
        edge_acc,
        acc_original_edges,
        acc_synthetic_edges,
        synthetic_edges: synthetic.num_stored_edges() / 2,
        original_edges: dataset.graph.merged().num_stored_edges() / 2,
    })
}
