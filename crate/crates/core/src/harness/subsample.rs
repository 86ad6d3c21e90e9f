use crate::error::{Error, Result};
use crate::graph::{Dataset, Split};
use crate::rng::Rng;

const SUBSAMPLE_STREAM: u64 = 40;

/// Drop uniformly chosen minority-class nodes (and their edges) until the
/// imbalance ratio is at most `rho_target`. Survivors keep their split tags
/// and relative order; the induced graph is rebuilt canonically.
pub fn subsample_to_ratio(dataset: &Dataset, rho_target: f64, seed: u64) -> Result<Dataset> {
    let keep = subsample_keep(dataset, rho_target, seed)?;
    let graph = dataset.graph.induced(&keep);
    graph.validate()?;
    Dataset::new(graph, dataset.features.select_rows(&keep), dataset.labels.select(&keep))
}

/// Ascending indices of the nodes [`subsample_to_ratio`] keeps.
pub fn subsample_keep(dataset: &Dataset, rho_target: f64, seed: u64) -> Result<Vec<usize>> {
    let labels = &dataset.labels;
    let counts = labels.labeled_counts();
    let minority = labels.labeled_minority_class();
    let majority = (0..counts.len()).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap_or(0);
    let (m, big) = (counts[minority], counts[majority]);
    if m == 0 || big == 0 {
        return Err(Error::EmptyClass(if m == 0 { minority } else { majority }));
    }
    let current = m as f64 / big as f64;
    if rho_target > current + 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "target ratio {rho_target} is above the current {current:.4}; subsampling can only increase imbalance"
        )));
    }
    let keep_minor = (rho_target * big as f64 + 1e-9).floor() as usize;
    if keep_minor == 0 {
        return Err(Error::InvalidConfig(format!(
            "target ratio {rho_target} would remove every node of class {minority}"
        )));
    }

    let mut members: Vec<usize> = (0..labels.len())
        .filter(|&i| labels.split(i) != Split::Unlabeled && labels.label(i) == Some(minority))
        .collect();
    Rng::derive(seed, SUBSAMPLE_STREAM).shuffle(&mut members);
    let mut dropped = vec![false; labels.len()];
    for &i in &members[keep_minor..] {
        dropped[i] = true;
    }
    let keep: Vec<usize> = (0..labels.len()).filter(|&i| !dropped[i]).collect();
    if labels.select(&keep).train_counts()[minority] == 0 {
        log::warn!("subsampling left class {minority} with no train node; re-split before training");
    }
    Ok(keep)
}
