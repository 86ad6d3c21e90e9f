//! SMOTE in the aggregated feature space.
//!
//! Every synthetic row interpolates a real train node toward one of its
//! same-class train neighbors: `x = (1 - δ)·x_src + δ·x_nbr`. The plan is
//! computed once and can be applied to several aligned channels.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, LabelSet, Split};
use crate::rng::Rng;

/// Jitter scale for classes with a single train node, relative to the
/// per-column train std.
pub const LONELY_JITTER: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoteTriple {
    pub source: usize,
    pub neighbor: usize,
    pub delta: f64,
    pub class: usize,
    /// Unit-normal draws for duplicated-with-jitter rows of single-node
    /// classes; `None` for ordinary interpolation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmotePlan {
    pub triples: Vec<SmoteTriple>,
    pub seed: u64,
}

impl SmotePlan {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.triples.iter().map(|t| t.class).collect()
    }

    /// `source,neighbor,delta,class` CSV. Jitter vectors are not written.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "source,neighbor,delta,class")?;
        for t in &self.triples {
            writeln!(w, "{},{},{},{}", t.source, t.neighbor, t.delta, t.class)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, seed: u64) -> Result<SmotePlan> {
        let mut triples = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if n == 0 || line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: "plan".into(),
                line: n + 1,
                message,
            };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, got {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| parse_err(e.to_string()));
            triples.push(SmoteTriple {
                source: int(f[0])?,
                neighbor: int(f[1])?,
                delta: f[2]
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?,
                class: int(f[3])?,
                jitter: None,
            });
        }
        Ok(SmotePlan { triples, seed })
    }
}

/// How many rows each class should reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BalanceTarget {
    /// Every class reaches the largest real train count.
    #[default]
    Majority,
    /// Every class reaches at least this count.
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OversampleConfig {
    pub k: usize,
    pub target: BalanceTarget,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        Self {
            k: 5,
            target: BalanceTarget::Majority,
        }
    }
}

impl OversampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("SMOTE needs k >= 1".into()));
        }
        Ok(())
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Up to `k` nearest real train nodes of the same class as `node`,
/// sorted by (distance, index).
pub fn knn_same_class(
    features: &FeatureMatrix,
    labels: &LabelSet,
    node: usize,
    k: usize,
) -> Result<Vec<usize>> {
    if node >= features.rows() || node >= labels.len() {
        return Err(Error::IndexOutOfRange {
            index: node,
            len: features.rows().min(labels.len()),
        });
    }
    let class = labels
        .label(node)
        .ok_or_else(|| Error::InvalidLabels(format!("node {node} has no label")))?;
    let peers = labels.train_of_class(class);
    let nn = knn_among(features, node, &peers, k);
    if nn.is_empty() {
        return Err(Error::LonelyClass { node, class });
    }
    Ok(nn)
}

fn knn_among(features: &FeatureMatrix, node: usize, peers: &[usize], k: usize) -> Vec<usize> {
    let query = features.row(node);
    let mut scored: Vec<(f64, usize)> = peers
        .iter()
        .filter(|&&p| p != node)
        .map(|&p| (squared_distance(query, features.row(p)), p))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.into_iter().map(|(_, p)| p).collect()
}

/// Decide which synthetic rows to generate.
///
/// Classes are processed in ascending id. For each synthetic row a source
/// is drawn uniformly (with replacement) from the class's real train nodes,
/// then a neighbor uniformly from its k nearest same-class peers, then
/// `δ ~ U[0, 1)`.
pub fn make_plan(
    features: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &OversampleConfig,
    seed: u64,
) -> Result<SmotePlan> {
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "make_plan: feature rows vs labels".into(),
            expected: labels.len(),
            actual: features.rows(),
        });
    }
    let counts = labels.train_counts();
    let majority = counts.iter().copied().max().unwrap_or(0);
    if majority == 0 {
        return Err(Error::EmptyTrainSet);
    }
    let target = match cfg.target {
        BalanceTarget::Majority => majority,
        BalanceTarget::Count(n) => n,
    };

    let mut rng = Rng::new(seed);
    let mut triples = Vec::new();
    for (class, &have) in counts.iter().enumerate() {
        if have >= target {
            continue;
        }
        let needed = target - have;
        let members = labels.train_of_class(class);
        match members.len() {
            0 => {
                return Err(Error::InvalidLabels(format!(
                    "class {class} has no training node to oversample"
                )))
            }
            1 => {
                log::warn!(
                    "class {class} has a single train node; duplicating it with jitter for {needed} synthetic rows"
                );
                let source = members[0];
                for _ in 0..needed {
                    let jitter = (0..features.cols()).map(|_| rng.normal()).collect();
                    triples.push(SmoteTriple {
                        source,
                        neighbor: source,
                        delta: 0.0,
                        class,
                        jitter: Some(jitter),
                    });
                }
            }
            _ => {
                let mut neighbors: Vec<Option<Vec<usize>>> = vec![None; members.len()];
                for _ in 0..needed {
                    let s = rng.below(members.len());
                    let source = members[s];
                    let nn = neighbors[s]
                        .get_or_insert_with(|| knn_among(features, source, &members, cfg.k));
                    let neighbor = nn[rng.below(nn.len())];
                    let delta = rng.uniform();
                    triples.push(SmoteTriple {
                        source,
                        neighbor,
                        delta,
                        class,
                        jitter: None,
                    });
                }
            }
        }
    }
    Ok(SmotePlan { triples, seed })
}

/// Append the plan's synthetic rows to `features` and matching synthetic
/// train labels to `labels`. Original rows are untouched.
pub fn apply_plan(
    features: &FeatureMatrix,
    labels: &LabelSet,
    plan: &SmotePlan,
) -> Result<(FeatureMatrix, LabelSet)> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "apply_plan: feature rows vs labels".into(),
            expected: labels.len(),
            actual: n,
        });
    }
    let d = features.cols();
    let std = if plan.triples.iter().any(|t| t.jitter.is_some()) {
        features.column_stats(&labels.real_in(Split::Train)).1
    } else {
        Vec::new()
    };

    let mut extra = Vec::with_capacity(plan.len() * d);
    for t in &plan.triples {
        for idx in [t.source, t.neighbor] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        let src = features.row(t.source);
        match &t.jitter {
            Some(z) => {
                if z.len() != d {
                    return Err(Error::DimensionMismatch {
                        context: "apply_plan: jitter width".into(),
                        expected: d,
                        actual: z.len(),
                    });
                }
                extra.extend(
                    src.iter()
                        .zip(z)
                        .zip(&std)
                        .map(|((s, z), sd)| s + LONELY_JITTER * sd * z),
                );
            }
            None => {
                let nbr = features.row(t.neighbor);
                extra.extend(
                    src.iter()
                        .zip(nbr)
                        .map(|(s, u)| (1.0 - t.delta) * s + t.delta * u),
                );
            }
        }
    }
    let x = if plan.is_empty() {
        features.clone()
    } else {
        features.vstack(&extra)?
    };
    let l = labels.append_synthetic(&plan.classes())?;
    Ok((x, l))
}

/// SMOTE across aligned channels: the plan is computed on the column-wise
/// concatenation of all channels, then applied to each one.
pub fn oversample_channels(
    channels: &[FeatureMatrix],
    labels: &LabelSet,
    cfg: &OversampleConfig,
    seed: u64,
) -> Result<(Vec<FeatureMatrix>, LabelSet, SmotePlan)> {
    let joint = match channels {
        [] => return Err(Error::InvalidConfig("no feature channels".into())),
        [only] => only.clone(),
        [first, rest @ ..] => rest
            .iter()
            .try_fold(first.clone(), |acc, x| acc.hconcat(x))?,
    };
    let plan = make_plan(&joint, labels, cfg, seed)?;
    let mut out = Vec::with_capacity(channels.len());
    let mut new_labels = None;
    for x in channels {
        let (xt, lt) = apply_plan(x, labels, &plan)?;
        out.push(xt);
        new_labels.get_or_insert(lt);
    }
    Ok((out, new_labels.expect("at least one channel"), plan))
}
