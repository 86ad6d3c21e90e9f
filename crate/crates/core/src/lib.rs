//! Imbalance-aware node classification on multi-relational graphs.
//!
//! Features are propagated over each relation's normalized adjacency, the
//! minority classes are oversampled with SMOTE in that feature space, and a
//! small per-relation MLP is trained on the balanced set. A GCN baseline, a
//! linear SGC variant, metrics and an experiment harness come along.

pub mod aggregate;
pub mod classifier;
pub mod edgegen;
pub mod error;
pub mod graph;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod oversample;
pub mod rng;

pub use aggregate::{build_feature_space, normalize, propagate, AggregationConfig, NormalizedAdjacency};
pub use classifier::{ClassifierModel, Mode, TrainConfig};
pub use error::{Error, Result};
pub use graph::{Dataset, FeatureMatrix, LabelSet, SparseGraph, Split};
pub use metrics::{evaluate, ConfusionMatrix, MetricsBundle};
pub use oversample::{make_plan, apply_plan, OversampleConfig, SmotePlan};
pub use rng::Rng;
