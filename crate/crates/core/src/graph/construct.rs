//! Pre-defined graph constructors: thresholded Gaussian distance kernels,
//! binary connectivity, warping-distance similarity, POI cosine similarity
//! and histogram-divergence similarity.

use rayon::prelude::*;

use super::divergence::js_divergence;
use super::dtw::dtw_distance;
use super::{AdjMatrix, GraphKind};
use crate::data::RawSeries;
use crate::error::{Error, Result};

/// Pairwise measured distances d_ij with a zero diagonal.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    n: usize,
    d: Vec<f64>,
}

impl DistanceTable {
    pub fn new(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::Input(format!(
                "distance table of {n} nodes needs {} entries, got {}",
                n * n,
                d.len()
            )));
        }
        if let Some(bad) = d.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Input(format!(
                "distance {bad} is negative or non-finite"
            )));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::Input(format!("distance diagonal nonzero at {i}")));
            }
        }
        Ok(DistanceTable { n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.at(i, j) != self.at(j, i) {
                    return false;
                }
            }
        }
        true
    }
}

/// Per-node nonnegative POI category vectors.
#[derive(Debug, Clone)]
pub struct PoiProfile {
    vectors: Vec<Vec<f64>>,
}

impl PoiProfile {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let width = vectors
            .first()
            .map(|v| v.len())
            .ok_or_else(|| Error::Input("POI profile with zero nodes".into()))?;
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != width {
                return Err(Error::Input(format!(
                    "POI vector {i} has length {}, expected {width}",
                    v.len()
                )));
            }
            if v.iter().any(|&x| !x.is_finite() || x < 0.0) {
                return Err(Error::Input(format!(
                    "POI vector {i} has a negative or non-finite entry"
                )));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::Input(format!("POI vector {i} is all zeros")));
            }
        }
        Ok(PoiProfile { vectors })
    }

    pub fn n(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }
}

/// Thresholded Gaussian kernel: A_ij = exp(-d_ij^2/sigma2) when i != j and
/// the kernel value reaches eps, else 0. Diagonal is zero.
pub fn build_distance_graph(dt: &DistanceTable, sigma2: f64, eps: f64) -> Result<AdjMatrix> {
    if sigma2 <= 0.0 {
        return Err(Error::Input(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Input(format!("eps must lie in [0, 1], got {eps}")));
    }
    let n = dt.n();
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dt.at(i, j);
            let w = (-(d * d) / sigma2).exp();
            if w >= eps {
                weights[i * n + j] = w;
            }
        }
    }
    let directed = !dt.is_symmetric();
    AdjMatrix::new(n, weights, GraphKind::Distance, directed)
}

/// Binary graph from an edge list; undirected lists mirror each pair.
pub fn build_connectivity_graph(
    edges: &[(usize, usize)],
    n: usize,
    directed: bool,
) -> Result<AdjMatrix> {
    let mut weights = vec![0.0; n * n];
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(Error::Input(format!(
                "edge ({i}, {j}) out of range for {n} nodes"
            )));
        }
        if i == j {
            continue;
        }
        weights[i * n + j] = 1.0;
        if !directed {
            weights[j * n + i] = 1.0;
        }
    }
    AdjMatrix::new(n, weights, GraphKind::Connectivity, directed)
}

/// Binary similarity graph: an edge where the warping distance between two
/// node series is at most eps.
pub fn build_semantic_graph(
    x: &RawSeries,
    channel: usize,
    eps: f64,
    band: Option<usize>,
) -> Result<AdjMatrix> {
    if x.steps() < 2 {
        return Err(Error::Input("semantic graph needs at least 2 time steps".into()));
    }
    if eps <= 0.0 {
        return Err(Error::Input(format!("eps must be positive, got {eps}")));
    }
    let n = x.nodes();
    let series: Vec<Vec<f64>> = (0..n).map(|i| x.node_series(i, channel)).collect();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let hits: Vec<((usize, usize), bool)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = dtw_distance(&series[i], &series[j], band)?;
            Ok(((i, j), d <= eps))
        })
        .collect::<Result<_>>()?;
    let mut weights = vec![0.0; n * n];
    for ((i, j), hit) in hits {
        if hit {
            weights[i * n + j] = 1.0;
            weights[j * n + i] = 1.0;
        }
    }
    AdjMatrix::new(n, weights, GraphKind::Semantic, false)
}

/// Cosine similarity of POI vectors; diagonal is 1.
pub fn build_functionality_graph(profiles: &PoiProfile) -> Result<AdjMatrix> {
    let n = profiles.n();
    let norms: Vec<f64> = (0..n)
        .map(|i| {
            profiles
                .vector(i)
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::Input(format!("POI vector {i} has zero norm")));
    }
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        weights[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let dot: f64 = profiles
                .vector(i)
                .iter()
                .zip(profiles.vector(j))
                .map(|(a, b)| a * b)
                .sum();
            let sim = dot / (norms[i] * norms[j]);
            weights[i * n + j] = sim;
            weights[j * n + i] = sim;
        }
    }
    AdjMatrix::new(n, weights, GraphKind::Functionality, false)
}

/// Number of histogram bins used when a caller does not specify one.
pub const DEFAULT_DISTRIBUTION_BINS: usize = 32;

/// Additive smoothing applied to histogram counts before normalization.
pub const HISTOGRAM_SMOOTHING: f64 = 1e-6;

/// Smoothed, normalized equal-width histogram of each node's channel values
/// over the global channel range.
fn node_histograms(x: &RawSeries, channel: usize, bins: usize) -> Result<Vec<Vec<f64>>> {
    let n = x.nodes();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for v in x.node_series(i, channel) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo == hi {
        return Err(Error::Input(format!(
            "channel {channel} is constant ({lo}); histogram range is degenerate"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let mut hists = Vec::with_capacity(n);
    for i in 0..n {
        let mut counts = vec![HISTOGRAM_SMOOTHING; bins];
        for v in x.node_series(i, channel) {
            let mut b = ((v - lo) / width) as usize;
            if b >= bins {
                b = bins - 1;
            }
            counts[b] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        for c in &mut counts {
            *c /= total;
        }
        hists.push(counts);
    }
    Ok(hists)
}

/// Similarity graph A_ij = 1 - JSD(hist_i, hist_j) over per-node value
/// histograms; diagonal is 1.
pub fn build_distribution_graph(x: &RawSeries, channel: usize, bins: usize) -> Result<AdjMatrix> {
    if x.steps() < 2 {
        return Err(Error::Input(
            "distribution graph needs at least 2 time steps".into(),
        ));
    }
    if bins < 2 {
        return Err(Error::Input(format!("bins must be >= 2, got {bins}")));
    }
    let hists = node_histograms(x, channel, bins)?;
    let n = x.nodes();
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        weights[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let sim = (1.0 - js_divergence(&hists[i], &hists[j])?).max(0.0);
            weights[i * n + j] = sim;
            weights[j * n + i] = sim;
        }
    }
    AdjMatrix::new(n, weights, GraphKind::Distribution, false)
}
