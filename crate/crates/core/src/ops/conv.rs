//! Graph convolution operators, all differentiable on the tape.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Chebyshev polynomial filter: sum_k T_k(L~) X Theta_k with the recurrence
/// T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2}.
pub fn cheb_conv(l_scaled: &Var, x: &Var, thetas: &[Var]) -> Result<Var> {
    if thetas.is_empty() {
        return Err(Error::Contract("cheb_conv needs order K >= 1".into()));
    }
    let mut prev = x.clone(); // T_0(L~) X
    let mut acc = prev.matmul(&thetas[0])?;
    if thetas.len() > 1 {
        let mut cur = l_scaled.matmul(x)?; // T_1(L~) X
        acc = acc.add(&cur.matmul(&thetas[1])?)?;
        for theta in thetas.iter().skip(2) {
            let next = l_scaled.matmul(&cur)?.scale(2.0).sub(&prev)?;
            acc = acc.add(&next.matmul(theta)?)?;
            prev = cur;
            cur = next;
        }
    }
    Ok(acc)
}

/// First-order approximation: Z = (I + D^{-1/2} A D^{-1/2}) X W + b, passed
/// the already-normalized neighbor matrix.
pub fn gcn_layer(sym_norm: &Var, x: &Var, w: &Var, b: &Var) -> Result<Var> {
    let mixed = x.add(&sym_norm.matmul(x)?)?;
    mixed.matmul(w)?.add(b)
}

/// Bidirectional diffusion: sum_k (P_f^k X) theta_fwd_k + (P_b^k X)
/// theta_bwd_k over the out-/in-degree transition matrices.
pub fn diffusion_conv(
    t_fwd: &Var,
    t_bwd: &Var,
    x: &Var,
    theta_fwd: &[Var],
    theta_bwd: &[Var],
) -> Result<Var> {
    if theta_fwd.is_empty() || theta_fwd.len() != theta_bwd.len() {
        return Err(Error::Contract(
            "diffusion_conv needs matching theta lists with K >= 1".into(),
        ));
    }
    let mut acc = x.matmul(&theta_fwd[0])?.add(&x.matmul(&theta_bwd[0])?)?;
    let mut pow_f = x.clone();
    let mut pow_b = x.clone();
    for k in 1..theta_fwd.len() {
        pow_f = t_fwd.matmul(&pow_f)?;
        pow_b = t_bwd.matmul(&pow_b)?;
        acc = acc
            .add(&pow_f.matmul(&theta_fwd[k])?)?
            .add(&pow_b.matmul(&theta_bwd[k])?)?;
    }
    Ok(acc)
}

/// How multi-hop states are merged into the layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HopAggregation {
    /// Learnable per-hop weights (initialized uniform 1/K).
    Linear,
    /// Fixed uniform mean over hops.
    Average,
    /// Elementwise maximum over hops.
    Max,
    /// Learnable per-hop scores passed through a softmax.
    Softmax,
}

impl std::str::FromStr for HopAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear" => HopAggregation::Linear,
            "avg" | "average" => HopAggregation::Average,
            "max" => HopAggregation::Max,
            "softmax" | "attention" => HopAggregation::Softmax,
            other => {
                return Err(Error::Config(format!(
                    "unknown hop aggregation '{other}'"
                )))
            }
        })
    }
}

/// Residual multi-hop propagation:
/// H^{k+1} = relu(A~ H^k W_k), then H^{k+1} <- beta H^0 + (1 - beta) A~
/// H^{k+1}, aggregated over hops k = 0..K-1.
///
/// `alphas` is a [1, K] row of hop weights (ignored by Average/Max).
pub fn multi_hop_conv(
    a_tilde: &Var,
    x: &Var,
    ws: &[Var],
    beta: f64,
    alphas: &Var,
    agg: HopAggregation,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Contract(format!(
            "beta must lie in [0, 1], got {beta}"
        )));
    }
    let k_hops = ws.len() + 1;
    if alphas.shape() != vec![1, k_hops] {
        return Err(Error::Contract(format!(
            "alphas shape {:?} does not match K = {k_hops}",
            alphas.shape()
        )));
    }
    let mut states = Vec::with_capacity(k_hops);
    states.push(x.clone());
    let mut h = x.clone();
    for w in ws {
        let propagated = a_tilde.matmul(&h)?.matmul(w)?.relu();
        h = x
            .scale(beta)
            .add(&a_tilde.matmul(&propagated)?.scale(1.0 - beta))?;
        states.push(h.clone());
    }
    let shape = x.shape();
    let weighted_sum = |weights: &[Var]| -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (state, w) in states.iter().zip(weights.iter()) {
            let term = state.mul(&w.broadcast(&shape)?)?;
            acc = Some(match acc {
                Some(a) => a.add(&term)?,
                None => term,
            });
        }
        Ok(acc.expect("K >= 1"))
    };
    match agg {
        HopAggregation::Linear => {
            let weights: Vec<Var> = (0..k_hops)
                .map(|k| alphas.slice(1, k, k + 1))
                .collect::<Result<_>>()?;
            weighted_sum(&weights)
        }
        HopAggregation::Softmax => {
            let soft = alphas.softmax(1)?;
            let weights: Vec<Var> = (0..k_hops)
                .map(|k| soft.slice(1, k, k + 1))
                .collect::<Result<_>>()?;
            weighted_sum(&weights)
        }
        HopAggregation::Average => {
            let mut acc = states[0].clone();
            for state in states.iter().skip(1) {
                acc = acc.add(state)?;
            }
            Ok(acc.scale(1.0 / k_hops as f64))
        }
        HopAggregation::Max => {
            // max(a, b) = a + relu(b - a), folded over hops
            let mut acc = states[0].clone();
            for state in states.iter().skip(1) {
                acc = acc.add(&state.sub(&acc)?.relu())?;
            }
            Ok(acc)
        }
    }
}

/// Per-head parameters of the attention operator.
#[derive(Clone)]
pub struct GatHead<'v> {
    pub w: &'v Var,
    pub attn_self: &'v Var,
    pub attn_neighbor: &'v Var,
}

/// Slope of the LeakyReLU applied to raw attention scores.
pub const GAT_LEAKY_SLOPE: f64 = 0.2;

/// Additive mask value that removes non-neighbors from the softmax.
pub const GAT_MASK: f64 = -1e30;

/// Neighborhood mask (0 on edges and the diagonal, [`GAT_MASK`] elsewhere)
/// built from the adjacency values.
pub fn gat_neighborhood_mask(tape: &Tape, a_values: &Tensor) -> Var {
    let n = a_values.shape()[0];
    let mut data = vec![GAT_MASK; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j || a_values.at(i, j) != 0.0 {
                data[i * n + j] = 0.0;
            }
        }
    }
    tape.constant(Tensor::from_raw(vec![n, n], data))
}

/// Multi-head attention convolution. Scores e_ij = a^T [W h_i || W h_j] are
/// computed over each node's neighborhood plus a self-loop, normalized with
/// a LeakyReLU-softmax, and head outputs are concatenated. `terminal` skips
/// the sigmoid on head outputs.
pub fn gat_layer(mask: &Var, x: &Var, heads: &[GatHead], terminal: bool) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::Contract("gat_layer needs at least one head".into()));
    }
    let n = x.shape()[0];
    let mut outputs = Vec::with_capacity(heads.len());
    for head in heads {
        let h = x.matmul(head.w)?; // [n, head_width]
        let s_self = h.matmul(head.attn_self)?; // [n, 1]
        let s_neigh = h.matmul(head.attn_neighbor)?; // [n, 1]
        let scores = s_self
            .broadcast(&[n, n])?
            .add(&s_neigh.transpose()?)?
            .leaky_relu(GAT_LEAKY_SLOPE);
        let attention = scores.add(mask)?.softmax(1)?;
        let mixed = attention.matmul(&h)?;
        outputs.push(if terminal { mixed } else { mixed.sigmoid() });
    }
    let refs: Vec<&Var> = outputs.iter().collect();
    Var::concat(&refs, 1)
}

/// Unified masked form: H' = ((A + I) ⊙ M) H W.
pub fn masked_attention_conv(tape: &Tape, a: &Var, m: &Var, h: &Var, w: &Var) -> Result<Var> {
    let n = a.shape()[0];
    if m.shape() != vec![n, n] {
        return Err(Error::shape(
            "masked_attention_conv",
            format!("mask {:?} for {n} nodes", m.shape()),
        ));
    }
    let eye = tape.constant(super::laplacian::identity(n));
    a.add(&eye)?.mul(m)?.matmul(h)?.matmul(w)
}
