//! Normalized k-hop neighbor propagation and feature-space assembly.
//!
//! `Â = D̃^-1/2 (A + I) D̃^-1/2`, `Q = Â^k H`, `X = [Q | H]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Csr, Dataset, FeatureMatrix, SparseGraph, Split};

/// Symmetrically normalized adjacency with self-loops, canonical CSR.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    csr: Csr,
    num_nodes: usize,
}

impl NormalizedAdjacency {
    /// Identity operator on `n` nodes (the adjacency of an edgeless graph).
    pub fn identity(n: usize) -> Self {
        Self {
            csr: Csr {
                row_offsets: (0..=n).collect(),
                col_indices: (0..n).collect(),
                edge_weights: Some(vec![1.0; n]),
            },
            num_nodes: n,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn csr(&self) -> &Csr {
        &self.csr
    }

    pub fn weights(&self) -> &[f64] {
        self.csr.edge_weights.as_deref().expect("normalized adjacency is weighted")
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let row = self.csr.row(i);
        match row.binary_search(&j) {
            Ok(k) => self.weights()[self.csr.row_offsets[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.num_nodes]; self.num_nodes];
        for (i, row) in out.iter_mut().enumerate() {
            let w = self.csr.row_weights(i).unwrap();
            for (&j, &v) in self.csr.row(i).iter().zip(w) {
                row[j] = v;
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.num_nodes).all(|i| {
            let w = self.csr.row_weights(i).unwrap();
            self.csr
                .row(i)
                .iter()
                .zip(w)
                .all(|(&j, &v)| (self.weight(j, i) - v).abs() <= tol)
        })
    }

    pub fn transpose(&self) -> NormalizedAdjacency {
        let n = self.num_nodes;
        let w = self.weights();
        let mut triples: Vec<(usize, usize, f64)> = Vec::with_capacity(self.csr.nnz());
        for i in 0..n {
            let start = self.csr.row_offsets[i];
            for (k, &j) in self.csr.row(i).iter().enumerate() {
                triples.push((j, i, w[start + k]));
            }
        }
        triples.sort_by_key(|t| (t.0, t.1));
        let mut row_offsets = vec![0usize; n + 1];
        for t in &triples {
            row_offsets[t.0 + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        NormalizedAdjacency {
            csr: Csr {
                row_offsets,
                col_indices: triples.iter().map(|t| t.1).collect(),
                edge_weights: Some(triples.iter().map(|t| t.2).collect()),
            },
            num_nodes: n,
        }
    }

    /// `Â · M` for a dense row-major `rows × cols` block. Each output row is
    /// accumulated in CSR order, so the result does not depend on the
    /// worker count.
    pub fn spmm(&self, data: &[f64], cols: usize) -> Vec<f64> {
        debug_assert_eq!(data.len(), self.num_nodes * cols);
        let mut out = vec![0.0; self.num_nodes * cols];
        if cols == 0 {
            return out;
        }
        let weights = self.weights();
        out.par_chunks_mut(cols).enumerate().for_each(|(i, out_row)| {
            let start = self.csr.row_offsets[i];
            for (k, &j) in self.csr.row(i).iter().enumerate() {
                let w = weights[start + k];
                let src = &data[j * cols..(j + 1) * cols];
                for (o, s) in out_row.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        });
        out
    }
}

/// Build `Â` for one relation. Degrees are row counts of the stored
/// adjacency; isolated nodes get a self-loop of weight 1.
pub fn normalize(graph: &SparseGraph, relation: usize) -> Result<NormalizedAdjacency> {
    let csr = graph.relation(relation).ok_or_else(|| {
        Error::InvalidGraph(format!(
            "relation {relation} does not exist ({} relations)",
            graph.num_relations()
        ))
    })?;
    let n = graph.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((csr.degree(i) + 1) as f64).sqrt()).collect();
    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::with_capacity(csr.nnz() + n);
    let mut weights = Vec::with_capacity(csr.nnz() + n);
    row_offsets.push(0);
    for i in 0..n {
        let row = csr.row(i);
        let split = row.partition_point(|&j| j < i);
        let mut push = |j: usize| {
            col_indices.push(j);
            weights.push(inv_sqrt[i] * inv_sqrt[j]);
        };
        row[..split].iter().for_each(|&j| push(j));
        push(i);
        row[split..].iter().for_each(|&j| push(j));
        row_offsets.push(col_indices.len());
    }
    Ok(NormalizedAdjacency {
        csr: Csr {
            row_offsets,
            col_indices,
            edge_weights: Some(weights),
        },
        num_nodes: n,
    })
}

/// `Â^hops · H`.
pub fn propagate(adj: &NormalizedAdjacency, features: &FeatureMatrix, hops: usize) -> Result<FeatureMatrix> {
    if features.rows() != adj.num_nodes() {
        return Err(Error::DimensionMismatch {
            context: "propagate: feature rows vs adjacency size".into(),
            expected: adj.num_nodes(),
            actual: features.rows(),
        });
    }
    let cols = features.cols();
    let mut cur = features.data().to_vec();
    for _ in 0..hops {
        cur = adj.spmm(&cur, cols);
    }
    FeatureMatrix::new(features.rows(), cols, cur)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub hops: usize,
    pub concat_original: bool,
    /// z-score columns with train-node statistics before propagating.
    pub standardize: bool,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            hops: 2,
            concat_original: true,
            standardize: true,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hops == 0 {
            return Err(Error::InvalidConfig("hops must be at least 1".into()));
        }
        Ok(())
    }

    pub fn output_width(&self, input_width: usize) -> usize {
        if self.concat_original {
            2 * input_width
        } else {
            input_width
        }
    }
}

/// Features as fed to propagation: standardized with train statistics
/// when configured, raw otherwise.
pub fn prepared_features(dataset: &Dataset, cfg: &AggregationConfig) -> FeatureMatrix {
    if cfg.standardize {
        let train = dataset.labels.real_in(Split::Train);
        if !train.is_empty() {
            return dataset.features.standardize_by(&train);
        }
    }
    dataset.features.clone()
}

/// One feature-space matrix `X_r = [Â_r^k H | H]` per relation.
pub fn build_feature_space(dataset: &Dataset, cfg: &AggregationConfig) -> Result<Vec<FeatureMatrix>> {
    cfg.validate()?;
    let h = prepared_features(dataset, cfg);
    feature_space_from(&dataset.graph, &h, cfg)
}

/// [`build_feature_space`] on already-prepared features.
pub fn feature_space_from(graph: &SparseGraph, h: &FeatureMatrix, cfg: &AggregationConfig) -> Result<Vec<FeatureMatrix>> {
    cfg.validate()?;
    (0..graph.num_relations())
        .map(|r| {
            let adj = normalize(graph, r)?;
            let q = propagate(&adj, h, cfg.hops)?;
            if cfg.concat_original {
                q.hconcat(h)
            } else {
                Ok(q)
            }
        })
        .collect()
}
