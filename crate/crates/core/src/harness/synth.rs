//! Two-block stochastic block model with Gaussian class features.

use serde::{Deserialize, Serialize};

use super::split::{stratified_split, SplitFractions};
use crate::error::{Error, Result};
use crate::graph::{Dataset, FeatureMatrix, LabelSet, SparseGraph, Split};
use crate::rng::Rng;

const EDGE_STREAM: u64 = 30;
const FEATURE_STREAM: u64 = 31;

/// Class 0 is the majority block, class 1 the minority block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub rho: f64,
    pub intra_p: f64,
    pub inter_p: f64,
    pub feature_dim: usize,
    pub class_mean_separation: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_nodes: 1000,
            num_classes: 2,
            rho: 0.1,
            intra_p: 0.05,
            inter_p: 0.03,
            feature_dim: 16,
            class_mean_separation: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes != 2 {
            return Err(Error::InvalidConfig("the synthetic benchmark has exactly 2 classes".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidConfig(format!("rho {} outside (0, 1]", self.rho)));
        }
        if !(0.0 <= self.inter_p && self.inter_p < self.intra_p && self.intra_p <= 1.0) {
            return Err(Error::InvalidConfig("need 0 <= inter_p < intra_p <= 1".into()));
        }
        if self.num_nodes < 2 || self.feature_dim == 0 {
            return Err(Error::InvalidConfig("need at least 2 nodes and 1 feature".into()));
        }
        Ok(())
    }

    /// (majority, minority) block sizes: `⌈n / (1 + ρ)⌉` and the rest.
    pub fn class_sizes(&self) -> (usize, usize) {
        let major = ((self.num_nodes as f64 / (1.0 + self.rho)) - 1e-9).ceil() as usize;
        let major = major.min(self.num_nodes - 1);
        (major, self.num_nodes - major)
    }
}

/// Generate the benchmark. Labels carry a stratified 1:1:8 split drawn
/// from the same seed.
pub fn generate_synth(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.num_nodes;
    let (major, _) = spec.class_sizes();
    let class = |i: usize| usize::from(i >= major);

    let mut rng = Rng::derive(seed, EDGE_STREAM);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if class(i) == class(j) { spec.intra_p } else { spec.inter_p };
            if rng.bernoulli(p) {
                edges.push((i, j, 0));
            }
        }
    }
    let graph = SparseGraph::build(n, &edges, true, Some(1))?;

    let mut rng = Rng::derive(seed, FEATURE_STREAM);
    let half = spec.class_mean_separation / 2.0;
    let d = spec.feature_dim;
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let mu = if class(i) == 0 { half } else { -half };
        data.extend((0..d).map(|_| mu + rng.normal()));
    }
    let features = FeatureMatrix::new(n, d, data)?;

    let classes: Vec<usize> = (0..n).map(class).collect();
    let labels = LabelSet::uniform_split(2, &classes, Split::Test)?;
    let labels = stratified_split(&labels, &SplitFractions::default(), seed)?;
    Dataset::new(graph, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::imbalance_ratio;

    #[test]
    fn balanced_sizes() {
        let spec = SynthSpec {
            num_nodes: 100,
            rho: 1.0,
            ..Default::default()
        };
        assert_eq!(spec.class_sizes(), (50, 50));
    }

    #[test]
    fn ten_to_one_sizes() {
        let spec = SynthSpec {
            num_nodes: 1100,
            rho: 0.1,
            ..Default::default()
        };
        let (a, b) = spec.class_sizes();
        assert!((a as i64 - 1000).abs() <= 1 && (b as i64 - 100).abs() <= 1);
    }

    #[test]
    fn no_inter_edges_when_inter_p_zero() {
        let spec = SynthSpec {
            num_nodes: 200,
            rho: 0.5,
            inter_p: 0.0,
            ..Default::default()
        };
        let ds = generate_synth(&spec, 3).unwrap();
        for (s, d, _) in ds.graph.edges() {
            assert_eq!(ds.labels.label(s), ds.labels.label(d));
        }
        assert!(ds.graph.num_stored_edges() > 0);
    }

    #[test]
    fn deterministic_and_near_target_ratio() {
        let spec = SynthSpec {
            num_nodes: 300,
            rho: 0.2,
            ..Default::default()
        };
        let a = generate_synth(&spec, 9).unwrap();
        let b = generate_synth(&spec, 9).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert!((imbalance_ratio(&a.labels, 0, 1).unwrap() - 0.2).abs() < 0.01);
    }

    #[test]
    fn class_means_separate() {
        let spec = SynthSpec {
            num_nodes: 400,
            rho: 1.0,
            class_mean_separation: 2.0,
            ..Default::default()
        };
        let ds = generate_synth(&spec, 1).unwrap();
        let mean0: f64 = (0..200).map(|i| ds.features.get(i, 0)).sum::<f64>() / 200.0;
        let mean1: f64 = (200..400).map(|i| ds.features.get(i, 0)).sum::<f64>() / 200.0;
        assert!((mean0 - 1.0).abs() < 0.25 && (mean1 + 1.0).abs() < 0.25);
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SynthSpec {
            intra_p: 0.01,
            inter_p: 0.02,
            ..Default::default()
        };
        assert!(generate_synth(&spec, 0).is_err());
    }
}
