//! On-disk formats.
//!
//! * edges: TSV `src<TAB>dst[<TAB>relation_id]`, `#` comments
//! * features: CSV `node_id,f0,f1,...` (optional header) or `IGF1` binary
//!   (magic, u64 rows, u64 cols, f32 row-major) with an optional `.ids`
//!   sidecar of node ids, one per line
//! * labels: CSV `node_id,label,split[,synthetic]`; nodes absent from the
//!   file are unlabeled
//!
//! Node ids are arbitrary strings, mapped densely in feature-file order.

use rustc_hash::FxHashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Edge, FeatureMatrix, LabelSet, SparseGraph, Split};

pub const FEATURE_MAGIC: &[u8; 4] = b"IGF1";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Calls `f(k, line, text)` for each non-empty, non-comment line: `k` counts
/// data lines from 0, `line` is 1-based.
fn for_each_data_line<R: BufRead>(mut r: R, mut f: impl FnMut(usize, usize, &str) -> Result<()>) -> Result<()> {
    let mut buf = String::new();
    let (mut line, mut k) = (0, 0);
    loop {
        buf.clear();
        if r.read_line(&mut buf)? == 0 {
            return Ok(());
        }
        line += 1;
        let t = buf.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        f(k, line, t)?;
        k += 1;
    }
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| file_err(path, source))
}

pub fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| file_err(path, source))
}

fn file_err(path: &Path, source: std::io::Error) -> Error {
    Error::File {
        path: path.display().to_string(),
        source,
    }
}

pub fn ids_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

/// Node id to dense index.
pub type NodeIndex = FxHashMap<String, usize>;

pub fn node_index(ids: &[String]) -> Result<NodeIndex> {
    let mut index = NodeIndex::with_capacity_and_hasher(ids.len(), Default::default());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::InvalidFeatures(format!("node id {id:?} appears twice")));
        }
    }
    Ok(index)
}

/// Features from CSV or `IGF1`, detected by magic.
pub fn read_features(path: &Path) -> Result<(Vec<String>, FeatureMatrix)> {
    let mut f = open(path)?;
    let mut magic = [0u8; 4];
    let n = f.read(&mut magic)?;
    drop(f);
    if n == 4 && &magic == FEATURE_MAGIC {
        let m = read_features_bin(BufReader::new(open(path)?))?;
        let sidecar = ids_sidecar(path);
        let ids = if sidecar.exists() {
            read_ids(&sidecar)?
        } else {
            (0..m.rows()).map(|i| i.to_string()).collect()
        };
        if ids.len() != m.rows() {
            return Err(Error::DimensionMismatch {
                context: format!("{} node ids", sidecar.display()),
                expected: m.rows(),
                actual: ids.len(),
            });
        }
        Ok((ids, m))
    } else {
        read_features_csv(BufReader::new(open(path)?), path)
    }
}

pub fn read_features_csv<R: BufRead>(r: R, path: &Path) -> Result<(Vec<String>, FeatureMatrix)> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut cols = None;
    for_each_data_line(r, |k, line, text| {
        let mut fields = text.split(',').map(str::trim);
        let id = fields.next().unwrap_or_default().to_string();
        let values: std::result::Result<Vec<f64>, _> = fields.clone().map(str::parse::<f64>).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if k == 0 => return Ok(()), // header
            Err(e) => return Err(parse_err(path, line, format!("bad feature value: {e}"))),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, line, "non-finite feature value"));
        }
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(parse_err(path, line, format!("expected {c} features, found {}", values.len())))
            }
            _ => {}
        }
        ids.push(id);
        data.extend(values);
        Ok(())
    })?;
    let cols = cols.ok_or_else(|| Error::InvalidFeatures(format!("{}: no feature rows", path.display())))?;
    if cols == 0 {
        return Err(Error::InvalidFeatures(format!("{}: rows have no feature columns", path.display())));
    }
    let m = FeatureMatrix::new(ids.len(), cols, data)?;
    Ok((ids, m))
}

pub fn read_features_bin<R: Read>(mut r: R) -> Result<FeatureMatrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format("not a binary feature file (bad magic)".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 4 {
        return Err(Error::Format(format!(
            "feature payload is {} bytes, expected {} for {rows}x{cols}",
            bytes.len(),
            rows * cols * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    FeatureMatrix::new(rows, cols, data)
}

/// `IGF1` output; values are narrowed to f32.
pub fn write_features_bin<W: Write>(m: &FeatureMatrix, mut w: W) -> Result<()> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for &v in m.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Binary features plus the `.ids` sidecar.
pub fn save_features_bin(path: &Path, ids: &[String], m: &FeatureMatrix) -> Result<()> {
    write_features_bin(m, BufWriter::new(create(path)?))?;
    write_ids(&ids_sidecar(path), ids)
}

pub fn write_features_csv<W: Write>(ids: &[String], m: &FeatureMatrix, mut w: W) -> Result<()> {
    let header: Vec<String> = (0..m.cols()).map(|j| format!("f{j}")).collect();
    writeln!(w, "node_id,{}", header.join(","))?;
    for (i, id) in ids.iter().enumerate() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{id},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

pub fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    for id in ids {
        writeln!(w, "{id}")?;
    }
    w.flush()?;
    Ok(())
}

fn lookup(index: &NodeIndex, id: &str, path: &Path, line: usize) -> Result<usize> {
    index
        .get(id)
        .copied()
        .ok_or_else(|| parse_err(path, line, format!("node id {id:?} has no feature row")))
}

pub fn read_edges<R: BufRead>(r: R, path: &Path, index: &NodeIndex) -> Result<Vec<Edge>> {
    let mut edges = Vec::new();
    for_each_data_line(r, |_, line, text| {
        let fields: Vec<&str> = text.split('\t').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(path, line, format!("expected 2 or 3 tab-separated fields, found {}", fields.len())));
        }
        let src = lookup(index, fields[0], path, line)?;
        let dst = lookup(index, fields[1], path, line)?;
        let rel = match fields.get(2) {
            Some(r) => r
                .parse::<usize>()
                .map_err(|e| parse_err(path, line, format!("bad relation id {r:?}: {e}")))?,
            None => 0,
        };
        edges.push((src, dst, rel));
        Ok(())
    })?;
    Ok(edges)
}

pub fn write_edges<W: Write>(graph: &SparseGraph, ids: &[String], mut w: W) -> Result<()> {
    writeln!(w, "# src\tdst\trelation")?;
    for (s, d, r) in graph.edges() {
        writeln!(w, "{}\t{}\t{r}", ids[s], ids[d])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" | "" => Some(false),
        _ => None,
    }
}

/// Labels for the `index.len()` nodes. The class count is the largest
/// label plus one (at least 2).
pub fn read_labels<R: BufRead>(r: R, path: &Path, index: &NodeIndex) -> Result<LabelSet> {
    let n = index.len();
    let mut labels = vec![None; n];
    let mut split = vec![Split::Unlabeled; n];
    let mut synthetic = vec![false; n];
    let mut seen = vec![false; n];
    for_each_data_line(r, |k, line, text| {
        let mut fields = [""; 4];
        let mut count = 0;
        for f in text.split(',') {
            if count < 4 {
                fields[count] = f.trim();
            }
            count += 1;
        }
        if k == 0 && count > 1 && fields[1].eq_ignore_ascii_case("label") {
            return Ok(());
        }
        if !(3..=4).contains(&count) {
            return Err(parse_err(path, line, format!("expected 3 or 4 fields, found {count}")));
        }
        let fields = &fields[..count];
        let node = lookup(index, fields[0], path, line)?;
        if std::mem::replace(&mut seen[node], true) {
            return Err(Error::DuplicateLabel(format!("{}:{line}: node {:?}", path.display(), fields[0])));
        }
        let s: Split = fields[2].parse().map_err(|e: Error| parse_err(path, line, e.to_string()))?;
        labels[node] = match fields[1] {
            "" | "-1" if s == Split::Unlabeled => None,
            v => Some(
                v.parse::<usize>()
                    .map_err(|e| parse_err(path, line, format!("bad label {v:?}: {e}")))?,
            ),
        };
        split[node] = s;
        if let Some(flag) = fields.get(3) {
            synthetic[node] =
                parse_bool(flag).ok_or_else(|| parse_err(path, line, format!("bad synthetic flag {flag:?}")))?;
        }
        Ok(())
    })?;
    let num_classes = labels.iter().flatten().max().map_or(2, |&m| (m + 1).max(2));
    LabelSet::with_synthetic(num_classes, labels, split, synthetic)
}

pub fn write_labels<W: Write>(labels: &LabelSet, ids: &[String], mut w: W) -> Result<()> {
    let with_flag = labels.num_synthetic() > 0;
    writeln!(w, "node_id,label,split{}", if with_flag { ",synthetic" } else { "" })?;
    for (i, id) in ids.iter().enumerate() {
        let label = labels.label(i).map_or(String::new(), |c| c.to_string());
        write!(w, "{id},{label},{}", labels.split(i))?;
        if with_flag {
            write!(w, ",{}", u8::from(labels.is_synthetic(i)))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    /// Original id of each dense node index.
    pub node_ids: Vec<String>,
}

pub fn load_dataset(edges: &Path, features: &Path, labels: &Path, symmetrize: bool) -> Result<LoadedDataset> {
    let (node_ids, x) = read_features(features)?;
    let index = node_index(&node_ids)?;
    let e = read_edges(BufReader::new(open(edges)?), edges, &index)?;
    let l = read_labels(BufReader::new(open(labels)?), labels, &index)?;
    let graph = SparseGraph::build(node_ids.len(), &e, symmetrize, None)?;
    log::info!(
        "loaded {} nodes, {} stored edges over {} relation(s), {} features",
        node_ids.len(),
        graph.num_stored_edges(),
        graph.num_relations(),
        x.cols()
    );
    Ok(LoadedDataset {
        dataset: Dataset::new(graph, x, l)?,
        node_ids,
    })
}
