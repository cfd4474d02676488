//! Adaptive adjacency matrices parameterized by trainable node embeddings,
//! and stochastic adjacency sampling through the Gumbel reparameterization.
//!
//! Each variant has a tape form (`*_var`) whose output entries are
//! differentiable functions of the embeddings, plus a plain wrapper
//! producing an [`AdjMatrix`] snapshot.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};

use super::{AdjMatrix, GraphKind};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Node embedding matrices E1/E2 (equal for single-embedding variants), the
/// saturation factor, and optional attention projections.
#[derive(Debug, Clone)]
pub struct EmbeddingPair {
    pub e1: Tensor,
    pub e2: Tensor,
    pub alpha: f64,
    pub w1: Option<Tensor>,
    pub w2: Option<Tensor>,
}

impl EmbeddingPair {
    pub fn new(e1: Tensor, e2: Tensor, alpha: f64) -> Result<Self> {
        if e1.shape().len() != 2 || e1.shape() != e2.shape() || e1.shape()[1] < 1 {
            return Err(Error::Input(format!(
                "embedding shapes {:?} and {:?} must match and be n x d with d >= 1",
                e1.shape(),
                e2.shape()
            )));
        }
        if alpha <= 0.0 {
            return Err(Error::Input(format!("alpha must be positive, got {alpha}")));
        }
        Ok(EmbeddingPair {
            e1,
            e2,
            alpha,
            w1: None,
            w2: None,
        })
    }

    /// Single shared embedding.
    pub fn single(e: Tensor, alpha: f64) -> Result<Self> {
        EmbeddingPair::new(e.clone(), e, alpha)
    }

    pub fn with_attention(mut self, w1: Tensor, w2: Tensor) -> Self {
        self.w1 = Some(w1);
        self.w2 = Some(w2);
        self
    }

    pub fn n(&self) -> usize {
        self.e1.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.e1.shape()[1]
    }
}

/// The adaptive construction family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptiveVariant {
    /// ReLU(W) with W a free n x n parameter.
    Direct,
    /// ReLU(tanh(alpha * E E^T)); symmetric.
    Undirected,
    /// ReLU(tanh(alpha * E1 E2^T)).
    Directed,
    /// ReLU(tanh(alpha * (E1 E2^T - E2 E1^T))); at most one direction per pair.
    Unidirected,
    /// Row softmax of scaled dot products over [X || E] projections.
    Attention,
}

impl AdaptiveVariant {
    pub fn graph_kind(&self) -> GraphKind {
        match self {
            AdaptiveVariant::Direct => GraphKind::AdaptiveDirect,
            AdaptiveVariant::Undirected => GraphKind::AdaptiveUndirected,
            AdaptiveVariant::Directed => GraphKind::AdaptiveDirected,
            AdaptiveVariant::Unidirected => GraphKind::AdaptiveUnidirected,
            AdaptiveVariant::Attention => GraphKind::AdaptiveAttention,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, AdaptiveVariant::Undirected)
    }
}

impl std::str::FromStr for AdaptiveVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "direct" => AdaptiveVariant::Direct,
            "undirected" => AdaptiveVariant::Undirected,
            "directed" => AdaptiveVariant::Directed,
            "unidirected" => AdaptiveVariant::Unidirected,
            "attention" => AdaptiveVariant::Attention,
            other => {
                return Err(Error::Config(format!(
                    "unknown adaptive variant '{other}'"
                )))
            }
        })
    }
}

pub fn adaptive_direct_var(w: &Var) -> Var {
    w.relu()
}

pub fn adaptive_undirected_var(e: &Var, alpha: f64) -> Result<Var> {
    let gram = e.matmul(&e.transpose()?)?;
    Ok(gram.scale(alpha).tanh().relu())
}

pub fn adaptive_directed_var(e1: &Var, e2: &Var, alpha: f64) -> Result<Var> {
    let m = e1.matmul(&e2.transpose()?)?;
    Ok(m.scale(alpha).tanh().relu())
}

pub fn adaptive_unidirected_var(e1: &Var, e2: &Var, alpha: f64) -> Result<Var> {
    let m12 = e1.matmul(&e2.transpose()?)?;
    let m21 = e2.matmul(&e1.transpose()?)?;
    Ok(m12.sub(&m21)?.scale(alpha).tanh().relu())
}

/// Row-softmax attention adjacency over the concatenation [X || E] projected
/// by W1/W2 and scaled by 1/sqrt(d).
pub fn adaptive_attention_var(x: &Var, e: &Var, w1: &Var, w2: &Var) -> Result<Var> {
    let joint = Var::concat(&[x, e], 1)?;
    let q = joint.matmul(w1)?;
    let k = joint.matmul(w2)?;
    let d = q.shape()[1] as f64;
    let scores = q.matmul(&k.transpose()?)?.scale(1.0 / d.sqrt());
    scores.softmax(1)
}

/// Snapshot an adaptive adjacency from plain embedding values. The attention
/// variant needs per-node features `x` (n rows) plus the pair's projections.
pub fn adaptive_graph(
    variant: AdaptiveVariant,
    emb: &EmbeddingPair,
    x: Option<&Tensor>,
) -> Result<AdjMatrix> {
    let tape = Tape::new();
    let n = emb.n();
    let value = match variant {
        AdaptiveVariant::Direct => {
            if emb.e1.shape() != [n, n] {
                return Err(Error::Contract(format!(
                    "direct variant expects an n x n parameter, got {:?}",
                    emb.e1.shape()
                )));
            }
            adaptive_direct_var(&tape.constant(emb.e1.clone()))
        }
        AdaptiveVariant::Undirected => {
            adaptive_undirected_var(&tape.constant(emb.e1.clone()), emb.alpha)?
        }
        AdaptiveVariant::Directed => adaptive_directed_var(
            &tape.constant(emb.e1.clone()),
            &tape.constant(emb.e2.clone()),
            emb.alpha,
        )?,
        AdaptiveVariant::Unidirected => adaptive_unidirected_var(
            &tape.constant(emb.e1.clone()),
            &tape.constant(emb.e2.clone()),
            emb.alpha,
        )?,
        AdaptiveVariant::Attention => {
            let x = x.ok_or_else(|| {
                Error::Contract("attention variant requires node features".into())
            })?;
            let (w1, w2) = match (&emb.w1, &emb.w2) {
                (Some(w1), Some(w2)) => (w1, w2),
                _ => {
                    return Err(Error::Contract(
                        "attention variant requires projection matrices".into(),
                    ))
                }
            };
            adaptive_attention_var(
                &tape.constant(x.clone()),
                &tape.constant(emb.e1.clone()),
                &tape.constant(w1.clone()),
                &tape.constant(w2.clone()),
            )?
        }
    }
    .value();
    AdjMatrix::new(
        n,
        value.data().to_vec(),
        variant.graph_kind(),
        !variant.is_symmetric(),
    )
}

/// Edge-retention probabilities with a sampling temperature.
#[derive(Debug, Clone)]
pub struct ProbabilityGraph {
    n: usize,
    theta: Vec<f64>,
    temperature: f64,
}

/// Probabilities are clamped this far inside (0, 1) before the logit.
pub const THETA_MARGIN: f64 = 1e-6;

impl ProbabilityGraph {
    pub fn new(n: usize, theta: Vec<f64>, temperature: f64) -> Result<Self> {
        if theta.len() != n * n {
            return Err(Error::Input(format!(
                "probability graph of {n} nodes needs {} entries, got {}",
                n * n,
                theta.len()
            )));
        }
        if temperature <= 0.0 {
            return Err(Error::Input(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite probability entry".into()));
        }
        let theta = theta
            .into_iter()
            .map(|v| v.clamp(THETA_MARGIN, 1.0 - THETA_MARGIN))
            .collect();
        Ok(ProbabilityGraph {
            n,
            theta,
            temperature,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Draw a relaxed adjacency: A_ij = sigmoid((logit(theta_ij) + g1 - g2)/s)
/// with g1, g2 i.i.d. standard Gumbel. Entries lie strictly in (0, 1) and
/// the draw is reproducible under the seed.
pub fn sample_graph_gumbel(pg: &ProbabilityGraph, seed: u64) -> Result<AdjMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gumbel = Gumbel::new(0.0, 1.0).expect("standard Gumbel");
    let n = pg.n();
    let mut weights = vec![0.0; n * n];
    for (w, &theta) in weights.iter_mut().zip(pg.theta().iter()) {
        let g1: f64 = gumbel.sample(&mut rng);
        let g2: f64 = gumbel.sample(&mut rng);
        let logit = (theta / (1.0 - theta)).ln();
        let z = (logit + (g1 - g2)) / pg.temperature();
        *w = 1.0 / (1.0 + (-z).exp());
    }
    AdjMatrix::new(n, weights, GraphKind::Sampled, true)
}

/// Tape form of the Gumbel draw for end-to-end training: the learnable
/// quantity is the logit matrix (so theta = sigmoid(logits)) and the noise
/// enters as a constant.
pub fn gumbel_adjacency_var(
    tape: &Tape,
    logits: &Var,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let shape = logits.shape();
    let gumbel = Gumbel::new(0.0, 1.0).expect("standard Gumbel");
    let numel: usize = shape.iter().product();
    let noise: Vec<f64> = (0..numel)
        .map(|_| {
            let g1: f64 = gumbel.sample(rng);
            let g2: f64 = gumbel.sample(rng);
            g1 - g2
        })
        .collect();
    let noise = tape.constant(Tensor::from_raw(shape, noise));
    Ok(logits.add(&noise)?.scale(1.0 / temperature).sigmoid())
}

/// Deterministic per-draw seed derivation so parallel workers stay
/// reproducible regardless of scheduling.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = base
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(stream.wrapping_add(1)))
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
