//! CSV ingestion for graph inputs and CSV + JSON-sidecar export of
//! constructed graphs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::construct::{DistanceTable, PoiProfile};
use super::{AdjMatrix, GraphKind};
use crate::error::{Error, Result};

/// Distance assigned to node pairs absent from a distance CSV; the Gaussian
/// kernel maps it to an exact zero weight.
pub const UNREACHABLE: f64 = 1e150;

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    what: &str,
    line: u64,
) -> Result<T> {
    let raw = record.get(idx).ok_or_else(|| {
        Error::Input(format!("line {line}: missing {what} column"))
    })?;
    raw.trim().parse::<T>().map_err(|_| {
        Error::Input(format!("line {line}: cannot parse {what} from '{raw}'"))
    })
}

/// Read `from,to,value` rows into a distance table. Unlisted pairs default
/// to [`UNREACHABLE`]; the diagonal is zero.
pub fn read_distance_csv(path: &Path, n: Option<usize>) -> Result<DistanceTable> {
    let rows = read_triples(path)?;
    let n = infer_n(&rows, n)?;
    let mut d = vec![UNREACHABLE; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
    }
    for (from, to, value, line) in rows {
        check_index(from, n, line)?;
        check_index(to, n, line)?;
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Input(format!(
                "line {line}: distance {value} is negative or non-finite"
            )));
        }
        if from != to {
            d[from * n + to] = value;
        }
    }
    DistanceTable::new(n, d)
}

/// Read `from,to,value` rows into an ordered edge list (values ignored).
pub fn read_edge_list_csv(path: &Path, n: Option<usize>) -> Result<(Vec<(usize, usize)>, usize)> {
    let rows = read_triples(path)?;
    let n = infer_n(&rows, n)?;
    let mut edges = Vec::with_capacity(rows.len());
    for (from, to, _value, line) in rows {
        check_index(from, n, line)?;
        check_index(to, n, line)?;
        edges.push((from, to));
    }
    Ok((edges, n))
}

/// Read `node,category,count` rows into per-node POI vectors.
pub fn read_poi_csv(path: &Path, n: Option<usize>) -> Result<PoiProfile> {
    let mut reader = open(path)?;
    let mut rows: Vec<(usize, usize, f64, u64)> = Vec::new();
    let mut max_node = 0usize;
    let mut max_cat = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        let node: usize = parse_field(&record, 0, "node", line)?;
        let cat: usize = parse_field(&record, 1, "category", line)?;
        let count: f64 = parse_field(&record, 2, "count", line)?;
        max_node = max_node.max(node);
        max_cat = max_cat.max(cat);
        rows.push((node, cat, count, line));
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("{}: no POI rows", path.display())));
    }
    let n = match n {
        Some(n) => n,
        None => max_node + 1,
    };
    let width = max_cat + 1;
    let mut vectors = vec![vec![0.0; width]; n];
    for (node, cat, count, line) in rows {
        check_index(node, n, line)?;
        vectors[node][cat] = count;
    }
    PoiProfile::new(vectors)
}

/// Sidecar metadata recorded beside every exported graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSidecar {
    pub kind: GraphKind,
    pub directed: bool,
    pub n: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Write the weight matrix as plain CSV rows plus a `.json` sidecar holding
/// kind, parameters and seed.
pub fn write_graph_csv(
    adj: &AdjMatrix,
    csv_path: &Path,
    params: BTreeMap<String, String>,
    seed: Option<u64>,
) -> Result<()> {
    let n = adj.n();
    let mut out = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{}", adj.at(i, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(csv_path, out)?;
    let sidecar = GraphSidecar {
        kind: adj.kind(),
        directed: adj.directed(),
        n,
        params,
        seed,
    };
    fs::write(
        sidecar_path(csv_path),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".json");
    std::path::PathBuf::from(p)
}

/// Read a graph back from its CSV matrix and sidecar.
pub fn read_graph_csv(csv_path: &Path) -> Result<AdjMatrix> {
    let sidecar: GraphSidecar = serde_json::from_str(
        &fs::read_to_string(sidecar_path(csv_path)).map_err(|e| {
            Error::Input(format!(
                "missing sidecar for {}: {e}",
                csv_path.display()
            ))
        })?,
    )?;
    let text = fs::read_to_string(csv_path)?;
    let mut weights = Vec::with_capacity(sidecar.n * sidecar.n);
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        for cell in line.split(',') {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Input(format!(
                    "{} line {}: bad weight '{cell}'",
                    csv_path.display(),
                    lineno + 1
                ))
            })?;
            weights.push(v);
        }
    }
    AdjMatrix::new(sidecar.n, weights, sidecar.kind, sidecar.directed)
}

fn open(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn read_triples(path: &Path) -> Result<Vec<(usize, usize, f64, u64)>> {
    let mut reader = open(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        let from: usize = parse_field(&record, 0, "from", line)?;
        let to: usize = parse_field(&record, 1, "to", line)?;
        let value: f64 = parse_field(&record, 2, "value", line)?;
        rows.push((from, to, value, line));
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("{}: no rows", path.display())));
    }
    Ok(rows)
}

fn infer_n(rows: &[(usize, usize, f64, u64)], n: Option<usize>) -> Result<usize> {
    let max_idx = rows.iter().map(|&(f, t, _, _)| f.max(t)).max().unwrap_or(0);
    match n {
        Some(n) => Ok(n),
        None => Ok(max_idx + 1),
    }
}

fn check_index(idx: usize, n: usize, line: u64) -> Result<()> {
    if idx >= n {
        return Err(Error::Input(format!(
            "line {line}: node index {idx} out of range for {n} nodes"
        )));
    }
    Ok(())
}
