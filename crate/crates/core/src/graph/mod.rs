//! Graph construction: pre-defined graphs built from measurements or data
//! statistics, adaptive graphs parameterized by node embeddings, and
//! stochastically sampled graphs.

mod adaptive;
mod construct;
mod divergence;
mod dtw;
pub mod io;

pub use adaptive::{
    adaptive_attention_var, adaptive_direct_var, adaptive_directed_var, adaptive_graph,
    adaptive_undirected_var, adaptive_unidirected_var, derive_seed, gumbel_adjacency_var,
    sample_graph_gumbel, AdaptiveVariant, EmbeddingPair, ProbabilityGraph,
};
pub use construct::{
    build_connectivity_graph, build_distance_graph, build_distribution_graph,
    build_functionality_graph, build_semantic_graph, DistanceTable, PoiProfile,
    DEFAULT_DISTRIBUTION_BINS, HISTOGRAM_SMOOTHING,
};
pub use divergence::js_divergence;
pub use dtw::dtw_distance;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which construction produced an adjacency matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Distance,
    Connectivity,
    Semantic,
    Functionality,
    Distribution,
    AdaptiveDirect,
    AdaptiveUndirected,
    AdaptiveDirected,
    AdaptiveUnidirected,
    AdaptiveAttention,
    Sampled,
}

impl GraphKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GraphKind::Distance => "distance",
            GraphKind::Connectivity => "connectivity",
            GraphKind::Semantic => "semantic",
            GraphKind::Functionality => "functionality",
            GraphKind::Distribution => "distribution",
            GraphKind::AdaptiveDirect => "adaptive-direct",
            GraphKind::AdaptiveUndirected => "adaptive-undirected",
            GraphKind::AdaptiveDirected => "adaptive-directed",
            GraphKind::AdaptiveUnidirected => "adaptive-unidirected",
            GraphKind::AdaptiveAttention => "adaptive-attention",
            GraphKind::Sampled => "sampled",
        }
    }
}

impl std::str::FromStr for GraphKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "distance" => GraphKind::Distance,
            "connectivity" => GraphKind::Connectivity,
            "semantic" => GraphKind::Semantic,
            "functionality" => GraphKind::Functionality,
            "distribution" => GraphKind::Distribution,
            "adaptive-direct" => GraphKind::AdaptiveDirect,
            "adaptive-undirected" => GraphKind::AdaptiveUndirected,
            "adaptive-directed" => GraphKind::AdaptiveDirected,
            "adaptive-unidirected" => GraphKind::AdaptiveUnidirected,
            "adaptive-attention" => GraphKind::AdaptiveAttention,
            "sampled" => GraphKind::Sampled,
            other => return Err(Error::Config(format!("unknown graph kind '{other}'"))),
        })
    }
}

/// Dense nonnegative weighted adjacency matrix with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjMatrix {
    n: usize,
    weights: Vec<f64>,
    kind: GraphKind,
    directed: bool,
}

impl AdjMatrix {
    /// Validate nonnegativity, finiteness and (for undirected graphs)
    /// symmetry to 1e-12.
    pub fn new(n: usize, weights: Vec<f64>, kind: GraphKind, directed: bool) -> Result<Self> {
        if weights.len() != n * n {
            return Err(Error::Input(format!(
                "adjacency of {n} nodes needs {} weights, got {}",
                n * n,
                weights.len()
            )));
        }
        if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Input(format!(
                "adjacency weight {bad} is negative or non-finite"
            )));
        }
        let adj = AdjMatrix {
            n,
            weights,
            kind,
            directed,
        };
        if !directed && !adj.is_symmetric(1e-12) {
            return Err(Error::Input(
                "undirected adjacency is not symmetric within 1e-12".into(),
            ));
        }
        Ok(adj)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if (self.at(i, j) - self.at(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Copy the weights into a square tensor.
    pub fn to_tensor(&self) -> crate::tensor::Tensor {
        crate::tensor::Tensor::from_raw(vec![self.n, self.n], self.weights.clone())
    }

    /// Apply a node permutation: B[p(i)][p(j)] = A[i][j].
    pub fn permuted(&self, perm: &[usize]) -> AdjMatrix {
        let mut weights = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                weights[perm[i] * self.n + perm[j]] = self.at(i, j);
            }
        }
        AdjMatrix {
            n: self.n,
            weights,
            kind: self.kind,
            directed: self.directed,
        }
    }
}
