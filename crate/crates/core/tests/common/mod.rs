#![allow(dead_code)]

use imbal_core::aggregate::{normalize, propagate, NormalizedAdjacency};
use imbal_core::classifier::{
    backward, logits, objective, Activation, Channel, ClassifierModel, Mode, ObjectiveConfig, Reduction,
};
use imbal_core::graph::{FeatureMatrix, LabelSet, SparseGraph, Split};
use imbal_core::oversample::{apply_plan, make_plan, OversampleConfig};
use imbal_core::Rng;

pub fn random_features(rng: &mut Rng, n: usize, d: usize) -> FeatureMatrix {
    FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
}

pub fn random_graph(rng: &mut Rng, n: usize, p: f64, relations: usize) -> SparseGraph {
    let mut edges = Vec::new();
    for r in 0..relations {
        for i in 0..n {
            for j in i + 1..n {
                if rng.bernoulli(p) {
                    edges.push((i, j, r));
                }
            }
        }
    }
    SparseGraph::build(n, &edges, true, Some(relations)).unwrap()
}

/// Random splits with at least one real train node; a few train nodes are
/// flagged synthetic so the λ term is exercised.
pub fn random_labels(rng: &mut Rng, n: usize, c: usize) -> LabelSet {
    loop {
        let labels: Vec<Option<usize>> = (0..n).map(|_| Some(rng.below(c))).collect();
        let split: Vec<Split> = (0..n)
            .map(|_| match rng.below(4) {
                0 | 1 => Split::Train,
                2 => Split::Val,
                _ => Split::Test,
            })
            .collect();
        let synthetic: Vec<bool> = split.iter().map(|&s| s == Split::Train && rng.bernoulli(0.3)).collect();
        let l = LabelSet::with_synthetic(c, labels, split, synthetic).unwrap();
        if !l.real_in(Split::Train).is_empty() && l.num_synthetic() > 0 {
            return l;
        }
    }
}

pub struct GradInstance {
    pub mode: Mode,
    pub lambda: f64,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

fn relu_pre(x: &ndarray::Array2<f64>, w1: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    x.dot(w1)
}

/// Extrapolated central differences (h = 1e-3) against the analytic gradient of the full
/// objective, over every weight. W1 coordinates whose ±h perturbation flips
/// a ReLU input's sign are skipped: the objective is not differentiable
/// there and neither side of the comparison is meaningful.
pub fn gradient_check(seed: u64) -> GradInstance {
    const H: f64 = 1e-3;
    const REL_FLOOR: f64 = 1e-8;
    let mut rng = Rng::new(seed);
    let mode = [Mode::OsMlp, Mode::Sgc, Mode::GcnBaseline][(seed % 3) as usize];
    let lambda = [0.0, 0.5, 1.0][((seed / 3) % 3) as usize];
    let n = 5 + rng.below(26);
    let d = 1 + rng.below(8);
    let hidden = 1 + rng.below(8);
    let c = 2 + rng.below(2);
    let s = 1 + rng.below(2);
    let reduction = if rng.bernoulli(0.5) { Reduction::Mean } else { Reduction::Sum };
    let weight_decay = if rng.bernoulli(0.5) { 5e-4 } else { 0.0 };

    let xs: Vec<FeatureMatrix> = (0..s).map(|_| random_features(&mut rng, n, d)).collect();
    let graph = random_graph(&mut rng, n, 0.2, s);
    let adjs: Vec<NormalizedAdjacency> = (0..s).map(|r| normalize(&graph, r).unwrap()).collect();
    let channels: Vec<Channel> = if mode == Mode::GcnBaseline {
        adjs.iter().map(|a| Channel::with_adj(&xs[0], a)).collect()
    } else {
        xs.iter().map(Channel::plain).collect()
    };
    let labels = random_labels(&mut rng, n, c);
    let model = ClassifierModel::init(mode, s, d, hidden, c, &mut rng);
    let cfg = ObjectiveConfig {
        lambda,
        weight_decay,
        reduction,
    };
    let grads = backward(&model, &channels, &labels, &cfg).unwrap();

    // layer-1 inputs, to locate ReLU kinks
    let layer1: Vec<ndarray::Array2<f64>> = channels
        .iter()
        .map(|ch| {
            let x = ch.features.view().to_owned();
            match ch.adj {
                Some(a) => propagate(a, ch.features, 1).unwrap().view().to_owned(),
                None => x,
            }
        })
        .collect();
    let relu = model.activation == Activation::Relu;

    let f = |m: &ClassifierModel| objective(m, &channels, &labels, &cfg).unwrap();
    let mut max_rel_err: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    for ch in 0..s {
        for layer in 0..2 {
            let shape = if layer == 0 {
                model.channels[ch].w1.dim()
            } else {
                model.channels[ch].w2.dim()
            };
            for p in 0..shape.0 {
                for q in 0..shape.1 {
                    if layer == 0 && relu {
                        let z = relu_pre(&layer1[ch], &model.channels[ch].w1);
                        let kink = (0..n).any(|i| {
                            let shift = H * layer1[ch][[i, p]];
                            let (lo, hi) = (z[[i, q]] - shift.abs(), z[[i, q]] + shift.abs());
                            lo < 0.0 && hi > 0.0
                        });
                        if kink {
                            skipped += 1;
                            continue;
                        }
                    }
                    let central = |h: f64| {
                        let mut plus = model.clone();
                        let mut minus = model.clone();
                        let (wp, wm) = if layer == 0 {
                            (&mut plus.channels[ch].w1, &mut minus.channels[ch].w1)
                        } else {
                            (&mut plus.channels[ch].w2, &mut minus.channels[ch].w2)
                        };
                        wp[[p, q]] += h;
                        wm[[p, q]] -= h;
                        (f(&plus) - f(&minus)) / (2.0 * h)
                    };
                    // Richardson step on the central difference: O(h^4) truncation
                    let numeric = (4.0 * central(H / 2.0) - central(H)) / 3.0;
                    let analytic = if layer == 0 {
                        grads.channels[ch].w1[[p, q]]
                    } else {
                        grads.channels[ch].w2[[p, q]]
                    };
                    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
                    max_rel_err = max_rel_err.max((analytic - numeric).abs() / denom);
                    checked += 1;
                }
            }
        }
    }
    GradInstance {
        mode,
        lambda,
        max_rel_err,
        checked,
        skipped,
    }
}

/// Largest logit gap between the linear GCN on (Â, H) and SGC on Â²H.
pub fn sgc_gap(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let n = 2 + rng.below(49);
    let d = 1 + rng.below(6);
    let hidden = 1 + rng.below(6);
    let c = 2 + rng.below(3);
    let h = random_features(&mut rng, n, d);
    let graph = random_graph(&mut rng, n, 0.15, 1);
    let adj = normalize(&graph, 0).unwrap();
    let gcn = ClassifierModel::init(Mode::GcnBaseline, 1, d, hidden, c, &mut rng).with_activation(Activation::Identity);
    let sgc = ClassifierModel {
        mode: Mode::Sgc,
        ..gcn.clone()
    };
    let x = propagate(&adj, &h, 2).unwrap();
    let a = logits(&gcn, &[Channel::with_adj(&h, &adj)]).unwrap();
    let b = logits(&sgc, &[Channel::plain(&x)]).unwrap();
    a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Brute-force same-class kNN among real train nodes, (distance, index) order.
pub fn oracle_knn(x: &FeatureMatrix, labels: &LabelSet, node: usize, k: usize) -> Vec<usize> {
    let class = labels.label(node).unwrap();
    let mut cand: Vec<(f64, usize)> = (0..labels.len())
        .filter(|&j| {
            j != node && labels.split(j) == Split::Train && !labels.is_synthetic(j) && labels.label(j) == Some(class)
        })
        .map(|j| {
            let d: f64 = x.row(node).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            (d, j)
        })
        .collect();
    cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    cand.into_iter().take(k).map(|(_, j)| j).collect()
}

/// One random SMOTE instance; `Err` names the first violated property.
pub fn smote_instance(seed: u64) -> Result<(), String> {
    let mut rng = Rng::new(seed);
    let c = 2 + rng.below(2);
    let n = 8 + rng.below(40);
    let d = 1 + rng.below(5);
    let k = 1 + rng.below(6);
    // integer grids make distance ties common
    let grid = rng.bernoulli(0.5);
    let data: Vec<f64> = (0..n * d)
        .map(|_| if grid { rng.below(4) as f64 } else { rng.normal() })
        .collect();
    let x = FeatureMatrix::new(n, d, data).unwrap();
    // skewed classes, at least two train nodes each
    let labels: Vec<Option<usize>> = (0..n)
        .map(|i| Some(if i < 2 * c { i % c } else if rng.bernoulli(0.7) { 0 } else { 1 + rng.below(c - 1) }))
        .collect();
    let split: Vec<Split> = (0..n)
        .map(|i| {
            if i < 2 * c {
                Split::Train
            } else {
                [Split::Train, Split::Train, Split::Val, Split::Test][rng.below(4)]
            }
        })
        .collect();
    let l = LabelSet::new(c, labels, split).unwrap();
    let cfg = OversampleConfig {
        k,
        ..Default::default()
    };

    let plan = make_plan(&x, &l, &cfg, seed).map_err(|e| format!("plan failed: {e}"))?;
    let (xt, lt) = apply_plan(&x, &l, &plan).map_err(|e| format!("apply failed: {e}"))?;

    // determinism
    let again = make_plan(&x, &l, &cfg, seed).unwrap();
    if again != plan {
        return Err("plan differs for the same seed".into());
    }
    let (xt2, _) = apply_plan(&x, &l, &again).unwrap();
    if xt.data().iter().zip(xt2.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err("synthetic rows are not bit-identical".into());
    }

    // original rows untouched
    if xt.data()[..n * d] != *x.data() {
        return Err("original rows modified".into());
    }

    // exact balance
    let counts = l.train_counts();
    let target = *counts.iter().max().unwrap();
    for class in 0..c {
        let have = (0..lt.len())
            .filter(|&i| lt.split(i) == Split::Train && lt.label(i) == Some(class))
            .count();
        if have != target {
            return Err(format!("class {class} has {have} train rows, expected {target}"));
        }
    }

    for (r, t) in plan.triples.iter().enumerate() {
        // provenance
        for node in [t.source, t.neighbor] {
            if l.split(node) != Split::Train || l.is_synthetic(node) || l.label(node) != Some(t.class) {
                return Err(format!("row {r} draws on node {node}, not a real train node of class {}", t.class));
            }
        }
        // equal distances resolve to the lower index in both
        let nn = oracle_knn(&x, &l, t.source, k);
        if nn != imbal_core::oversample::knn_same_class(&x, &l, t.source, k).unwrap() {
            return Err(format!("kNN of node {} disagrees with brute force", t.source));
        }
        if !nn.contains(&t.neighbor) {
            return Err(format!("row {r}: neighbor {} not among the {k} nearest of {}", t.neighbor, t.source));
        }
        if !(0.0..1.0).contains(&t.delta) {
            return Err(format!("row {r}: delta {} outside [0, 1)", t.delta));
        }
        // convexity
        let row = xt.row(n + r);
        for j in 0..d {
            let (a, b) = (x.get(t.source, j), x.get(t.neighbor, j));
            let expect = (1.0 - t.delta) * a + t.delta * b;
            if (row[j] - expect).abs() > 1e-12 || row[j] < a.min(b) - 1e-12 || row[j] > a.max(b) + 1e-12 {
                return Err(format!("row {r} column {j} is not on the source-neighbor segment"));
            }
        }
        if lt.label(n + r) != Some(t.class) || !lt.is_synthetic(n + r) {
            return Err(format!("row {r} is mislabeled"));
        }
    }

    Ok(())
}
