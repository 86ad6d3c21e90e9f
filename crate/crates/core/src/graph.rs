//! Immutable graph, feature and label containers.
//!
//! Every constructor validates its invariants, so downstream code can index
//! without re-checking: CSR rows are canonical (strictly increasing column
//! indices, no explicit self-loops), feature entries are finite, and every
//! evaluated node carries a class label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One relation's adjacency in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub edge_weights: Option<Vec<f64>>,
}

impl Csr {
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            row_offsets: vec![0; num_nodes + 1],
            col_indices: Vec::new(),
            edge_weights: None,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn row_weights(&self, i: usize) -> Option<&[f64]> {
        self.edge_weights
            .as_ref()
            .map(|w| &w[self.row_offsets[i]..self.row_offsets[i + 1]])
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Build a canonical CSR from (row, col) pairs. Duplicates collapse.
    pub(crate) fn from_pairs(num_nodes: usize, pairs: &mut Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(r, _) in pairs.iter() {
            row_offsets[r + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = pairs.iter().map(|&(_, c)| c).collect();
        Self {
            row_offsets,
            col_indices,
            edge_weights: None,
        }
    }

    /// Check the CSR invariants against `num_nodes` columns.
    pub fn validate(&self, num_nodes: usize, allow_diagonal: bool) -> Result<()> {
        if self.row_offsets.len() != num_nodes + 1 {
            return Err(Error::InvalidGraph(format!(
                "row_offsets has length {}, expected {}",
                self.row_offsets.len(),
                num_nodes + 1
            )));
        }
        if self.row_offsets[0] != 0 || *self.row_offsets.last().unwrap() != self.col_indices.len() {
            return Err(Error::InvalidGraph("row_offsets do not span col_indices".into()));
        }
        if let Some(w) = &self.edge_weights {
            if w.len() != self.col_indices.len() {
                return Err(Error::InvalidGraph("edge_weights length differs from col_indices".into()));
            }
        }
        for i in 0..num_nodes {
            if self.row_offsets[i] > self.row_offsets[i + 1] {
                return Err(Error::InvalidGraph(format!("row_offsets decrease at row {i}")));
            }
            let row = self.row(i);
            for (k, &c) in row.iter().enumerate() {
                if c >= num_nodes {
                    return Err(Error::InvalidGraph(format!("row {i} references column {c}")));
                }
                if !allow_diagonal && c == i {
                    return Err(Error::InvalidGraph(format!("explicit self-loop at node {i}")));
                }
                if k > 0 && row[k - 1] >= c {
                    return Err(Error::InvalidGraph(format!("row {i} is not strictly increasing")));
                }
            }
        }
        Ok(())
    }
}

/// Directed or undirected multi-relation graph over dense node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    num_nodes: usize,
    relations: Vec<Csr>,
}

/// An input edge: (source, destination, relation id).
pub type Edge = (usize, usize, usize);

impl SparseGraph {
    /// Build a graph from an edge list. With `symmetrize`, every edge is
    /// stored in both directions. Self-loops in the input are dropped since
    /// normalization adds them back.
    ///
    /// The number of relations is one more than the largest relation id seen
    /// (at least one); `num_relations` can force a larger count.
    pub fn build(
        num_nodes: usize,
        edges: &[Edge],
        symmetrize: bool,
        num_relations: Option<usize>,
    ) -> Result<Self> {
        let seen_relations = edges.iter().map(|e| e.2 + 1).max().unwrap_or(1);
        let n_rel = num_relations.unwrap_or(seen_relations).max(seen_relations).max(1);
        let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_rel];
        for (index, &(src, dst, relation)) in edges.iter().enumerate() {
            if src >= num_nodes || dst >= num_nodes {
                return Err(Error::EdgeOutOfRange {
                    index,
                    src,
                    dst,
                    relation,
                    num_nodes,
                });
            }
            if src == dst {
                continue;
            }
            pairs[relation].push((src, dst));
            if symmetrize {
                pairs[relation].push((dst, src));
            }
        }
        let relations = pairs
            .iter_mut()
            .map(|p| Csr::from_pairs(num_nodes, p))
            .collect();
        Ok(Self {
            num_nodes,
            relations,
        })
    }

    /// Wrap pre-built CSR blocks after validating them.
    pub fn from_csr(num_nodes: usize, relations: Vec<Csr>) -> Result<Self> {
        if relations.is_empty() {
            return Err(Error::InvalidGraph("at least one relation is required".into()));
        }
        for csr in &relations {
            csr.validate(num_nodes, false)?;
        }
        Ok(Self {
            num_nodes,
            relations,
        })
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            relations: vec![Csr::empty(num_nodes)],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn relation(&self, r: usize) -> Option<&Csr> {
        self.relations.get(r)
    }

    pub fn relations(&self) -> &[Csr] {
        &self.relations
    }

    pub fn neighbors(&self, relation: usize, node: usize) -> &[usize] {
        self.relations[relation].row(node)
    }

    pub fn num_stored_edges(&self) -> usize {
        self.relations.iter().map(Csr::nnz).sum()
    }

    /// All stored (src, dst, relation) entries in canonical order.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.num_stored_edges());
        for (r, csr) in self.relations.iter().enumerate() {
            for i in 0..self.num_nodes {
                out.extend(csr.row(i).iter().map(|&j| (i, j, r)));
            }
        }
        out
    }

    pub fn has_edge(&self, relation: usize, src: usize, dst: usize) -> bool {
        self.relations[relation].row(src).binary_search(&dst).is_ok()
    }

    /// Collapse all relations into a single one.
    pub fn merged(&self) -> SparseGraph {
        let mut pairs: Vec<(usize, usize)> = self
            .edges()
            .into_iter()
            .map(|(s, d, _)| (s, d))
            .collect();
        SparseGraph {
            num_nodes: self.num_nodes,
            relations: vec![Csr::from_pairs(self.num_nodes, &mut pairs)],
        }
    }

    /// Subgraph induced by `keep` (sorted, unique old ids). Node `keep[k]`
    /// becomes node `k`.
    pub fn induced(&self, keep: &[usize]) -> SparseGraph {
        let mut remap = vec![usize::MAX; self.num_nodes];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let relations = self
            .relations
            .iter()
            .map(|csr| {
                let mut pairs = Vec::new();
                for (new_i, &old_i) in keep.iter().enumerate() {
                    for &old_j in csr.row(old_i) {
                        let new_j = remap[old_j];
                        if new_j != usize::MAX {
                            pairs.push((new_i, new_j));
                        }
                    }
                }
                Csr::from_pairs(keep.len(), &mut pairs)
            })
            .collect();
        SparseGraph {
            num_nodes: keep.len(),
            relations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for csr in &self.relations {
            csr.validate(self.num_nodes, false)?;
        }
        Ok(())
    }
}

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::InvalidFeatures(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidFeatures(format!(
                "non-finite value at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidFeatures("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn view(&self) -> ndarray::ArrayView2<'_, f64> {
        ndarray::ArrayView2::from_shape((self.rows, self.cols), &self.data)
            .expect("shape matches data length")
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                context: "hconcat rows".into(),
                expected: self.rows,
                actual: other.rows,
            });
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(FeatureMatrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Append rows below. Used for synthetic nodes.
    pub fn vstack(&self, extra: &[f64]) -> Result<FeatureMatrix> {
        if self.cols == 0 || extra.len() % self.cols != 0 {
            return Err(Error::InvalidFeatures("appended block is not whole rows".into()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(extra);
        FeatureMatrix::new(self.rows + extra.len() / self.cols, self.cols, data)
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// z-score each column with the mean and (population) standard deviation
    /// of `reference_rows`. Columns with zero variance there map to 0.
    pub fn standardize_by(&self, reference_rows: &[usize]) -> FeatureMatrix {
        let (mean, std) = self.column_stats(reference_rows);
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.cols.max(1)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if std[j] > 0.0 { (*v - mean[j]) / std[j] } else { 0.0 };
            }
        }
        FeatureMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Per-column mean and population std over the given rows.
    pub fn column_stats(&self, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut mean = vec![0.0; self.cols];
        let mut var = vec![0.0; self.cols];
        if rows.is_empty() {
            return (mean, var);
        }
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        for &i in rows {
            for ((s, v), m) in var.iter_mut().zip(self.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        (mean, std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unlabeled,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unlabeled" | "unlabelled" => Ok(Split::Unlabeled),
            other => Err(Error::InvalidLabels(format!("unknown split '{other}'"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-node labels and split membership.
///
/// Nodes in train/val/test always carry a label; unlabeled nodes may not.
/// Synthetic nodes are always train.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    num_classes: usize,
    labels: Vec<Option<usize>>,
    split: Vec<Split>,
    synthetic: Vec<bool>,
}

impl LabelSet {
    pub fn new(num_classes: usize, labels: Vec<Option<usize>>, split: Vec<Split>) -> Result<Self> {
        let n = labels.len();
        Self::with_synthetic(num_classes, labels, split, vec![false; n])
    }

    pub fn with_synthetic(
        num_classes: usize,
        labels: Vec<Option<usize>>,
        split: Vec<Split>,
        synthetic: Vec<bool>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidLabels(format!("need at least 2 classes, got {num_classes}")));
        }
        if split.len() != labels.len() || synthetic.len() != labels.len() {
            return Err(Error::InvalidLabels("labels, split and synthetic mask differ in length".into()));
        }
        for (i, (&l, &s)) in labels.iter().zip(&split).enumerate() {
            match l {
                Some(c) if c >= num_classes => {
                    return Err(Error::InvalidLabels(format!("node {i} has class {c} >= {num_classes}")))
                }
                None if s != Split::Unlabeled => {
                    return Err(Error::InvalidLabels(format!("node {i} is in {s} but has no label")))
                }
                _ => {}
            }
            if synthetic[i] && (s != Split::Train || l.is_none()) {
                return Err(Error::InvalidLabels(format!("synthetic node {i} must be a labeled train node")));
            }
        }
        Ok(Self {
            num_classes,
            labels,
            split,
            synthetic,
        })
    }

    /// Fully labeled set, every node in `split`.
    pub fn uniform_split(num_classes: usize, labels: &[usize], split: Split) -> Result<Self> {
        Self::new(
            num_classes,
            labels.iter().map(|&c| Some(c)).collect(),
            vec![split; labels.len()],
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn split(&self, i: usize) -> Split {
        self.split[i]
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    pub fn is_synthetic(&self, i: usize) -> bool {
        self.synthetic[i]
    }

    pub fn synthetic_mask(&self) -> &[bool] {
        &self.synthetic
    }

    pub fn num_synthetic(&self) -> usize {
        self.synthetic.iter().filter(|&&s| s).count()
    }

    /// Real (non-synthetic) nodes in `split`.
    pub fn real_in(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.split[i] == split && !self.synthetic[i])
            .collect()
    }

    pub fn synthetic_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.synthetic[i]).collect()
    }

    /// Real train nodes of class `c`, ascending.
    pub fn train_of_class(&self, c: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.split[i] == Split::Train && !self.synthetic[i] && self.labels[i] == Some(c))
            .collect()
    }

    /// Per-class counts among real train nodes.
    pub fn train_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for i in 0..self.len() {
            if self.split[i] == Split::Train && !self.synthetic[i] {
                if let Some(c) = self.labels[i] {
                    counts[c] += 1;
                }
            }
        }
        counts
    }

    /// Per-class counts over real labeled nodes in train, val and test.
    pub fn labeled_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for i in 0..self.len() {
            if self.split[i] != Split::Unlabeled && !self.synthetic[i] {
                if let Some(c) = self.labels[i] {
                    counts[c] += 1;
                }
            }
        }
        counts
    }

    /// Least populous class among real train nodes (lowest id on ties).
    pub fn minority_class(&self) -> usize {
        argmin(&self.train_counts())
    }

    /// Least populous class over all real labeled nodes (lowest id on ties).
    pub fn labeled_minority_class(&self) -> usize {
        argmin(&self.labeled_counts())
    }

    /// Same labels with a new split assignment. Synthetic flags are cleared.
    pub fn with_splits(&self, split: Vec<Split>) -> Result<LabelSet> {
        LabelSet::new(self.num_classes, self.labels.clone(), split)
    }

    /// Keep only the listed nodes (in the given order).
    pub fn select(&self, keep: &[usize]) -> LabelSet {
        LabelSet {
            num_classes: self.num_classes,
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            split: keep.iter().map(|&i| self.split[i]).collect(),
            synthetic: keep.iter().map(|&i| self.synthetic[i]).collect(),
        }
    }

    /// Append synthetic train nodes of the given classes.
    pub fn append_synthetic(&self, classes: &[usize]) -> Result<LabelSet> {
        let mut out = self.clone();
        for &c in classes {
            if c >= self.num_classes {
                return Err(Error::InvalidLabels(format!("synthetic class {c} out of range")));
            }
            out.labels.push(Some(c));
            out.split.push(Split::Train);
            out.synthetic.push(true);
        }
        Ok(out)
    }

    /// Error unless every listed class has at least one real train node.
    pub fn require_train_classes(&self, classes: &[usize]) -> Result<()> {
        let counts = self.train_counts();
        for &c in classes {
            if counts.get(c).copied().unwrap_or(0) == 0 {
                return Err(Error::InvalidLabels(format!("class {c} has no training node")));
            }
        }
        Ok(())
    }
}

fn argmin(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n < counts[best] {
            best = c;
        }
    }
    best
}

/// Graph, features and labels over the same node set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: SparseGraph,
    pub features: FeatureMatrix,
    pub labels: LabelSet,
}

impl Dataset {
    pub fn new(graph: SparseGraph, features: FeatureMatrix, labels: LabelSet) -> Result<Self> {
        let n = graph.num_nodes();
        if features.rows() != n {
            return Err(Error::DimensionMismatch {
                context: "feature rows vs graph nodes".into(),
                expected: n,
                actual: features.rows(),
            });
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                context: "label count vs graph nodes".into(),
                expected: n,
                actual: labels.len(),
            });
        }
        Ok(Self {
            graph,
            features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    /// Same graph/features with a new split assignment.
    pub fn with_labels(&self, labels: LabelSet) -> Result<Dataset> {
        Dataset::new(self.graph.clone(), self.features.clone(), labels)
    }
}

/// min(count_a, count_b) / max(count_a, count_b) over real labeled nodes.
pub fn imbalance_ratio(labels: &LabelSet, class_a: usize, class_b: usize) -> Result<f64> {
    let counts = labels.labeled_counts();
    let count = |c: usize| -> Result<usize> {
        match counts.get(c) {
            Some(&n) if n > 0 => Ok(n),
            _ => Err(Error::EmptyClass(c)),
        }
    };
    ratio_of_counts(count(class_a)?, count(class_b)?)
}

/// ρ from two raw class counts.
pub fn ratio_of_counts(a: usize, b: usize) -> Result<f64> {
    if a == 0 {
        return Err(Error::EmptyClass(0));
    }
    if b == 0 {
        return Err(Error::EmptyClass(1));
    }
    Ok(a.min(b) as f64 / a.max(b) as f64)
}

/// Class histogram helper keyed by class id.
pub fn class_histogram(labels: &LabelSet) -> BTreeMap<usize, usize> {
    labels.labeled_counts().into_iter().enumerate().collect()
}
