//! Degree normalizations and the normalized graph Laplacian.
//!
//! Zero-degree convention: any normalization factor for a node without
//! neighbors is 0 rather than a division error, so isolated nodes simply
//! receive no neighbor influence. On the tape this is expressed through a
//! constant indicator mask, which keeps the normalized matrices
//! differentiable with respect to the adjacency entries.

use crate::error::{Error, Result};
use crate::graph::AdjMatrix;
use crate::tensor::{Tape, Tensor, Var};

/// Fixed spectral bound used for the scaled Laplacian; the normalized
/// Laplacian's spectrum never exceeds it.
pub const LAMBDA_MAX: f64 = 2.0;

/// Plain-value normalized Laplacian with its rescaled form
/// 2L/lambda_max - I.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub laplacian: Tensor,
    pub lambda_max: f64,
    pub scaled: Tensor,
}

/// L = I - D^{-1/2} A D^{-1/2} for an undirected adjacency.
pub fn normalized_laplacian(a: &AdjMatrix) -> Result<SpectralBasis> {
    if a.directed() {
        return Err(Error::Contract(
            "normalized_laplacian requires an undirected adjacency".into(),
        ));
    }
    let n = a.n();
    let dinv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg: f64 = (0..n).map(|j| a.at(i, j)).sum();
            if deg > 0.0 {
                1.0 / deg.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let norm = dinv_sqrt[i] * a.at(i, j) * dinv_sqrt[j];
            l[i * n + j] = if i == j { 1.0 - norm } else { -norm };
        }
    }
    let laplacian = Tensor::from_raw(vec![n, n], l);
    let scaled = laplacian.map(|v| 2.0 * v / LAMBDA_MAX).zip(
        &identity(n),
        |v, e| v - e,
    );
    Ok(SpectralBasis {
        laplacian,
        lambda_max: LAMBDA_MAX,
        scaled,
    })
}

pub fn identity(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    Tensor::from_raw(vec![n, n], data)
}

/// Row degree sums of a square tape adjacency, shape [n, 1].
fn degrees(a: &Var) -> Result<Var> {
    a.reduce_sum(Some(1))
}

/// (mask, shifted) where mask is the constant indicator of positive degree
/// and shifted = degree + (1 - mask) so the denominator never vanishes.
fn degree_mask(tape: &Tape, deg: &Var) -> Result<(Var, Var)> {
    let mask_t = deg.value().map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let comp = tape.constant(mask_t.map(|m| 1.0 - m));
    let mask = tape.constant(mask_t);
    let shifted = deg.add(&comp)?;
    Ok((mask, shifted))
}

/// D^{-1/2} A D^{-1/2} on the tape, with the zero-degree convention.
pub fn sym_norm_var(tape: &Tape, a: &Var) -> Result<Var> {
    let n = a.shape()[0];
    let deg = degrees(a)?;
    let (mask, shifted) = degree_mask(tape, &deg)?;
    let dinv_sqrt = mask.div(&shifted.sqrt()?)?; // [n, 1]
    let col = dinv_sqrt.broadcast(&[n, n])?;
    let row = dinv_sqrt.transpose()?; // [1, n], expands implicitly
    col.mul(a)?.mul(&row)
}

/// Scaled Laplacian 2L/lambda_max - I = -D^{-1/2} A D^{-1/2} on the tape
/// (lambda_max fixed at 2).
pub fn scaled_laplacian_var(tape: &Tape, a: &Var) -> Result<Var> {
    Ok(sym_norm_var(tape, a)?.scale(-1.0))
}

/// Out-degree and in-degree transition matrices (D_O^{-1} A, D_I^{-1} A^T)
/// on the tape, zero rows where a degree vanishes.
pub fn transition_var(tape: &Tape, a: &Var) -> Result<(Var, Var)> {
    let n = a.shape()[0];
    let row_normalize = |m: &Var| -> Result<Var> {
        let deg = degrees(m)?;
        let (mask, shifted) = degree_mask(tape, &deg)?;
        let dinv = mask.div(&shifted)?;
        dinv.broadcast(&[n, n])?.mul(m)
    };
    let fwd = row_normalize(a)?;
    let bwd = row_normalize(&a.transpose()?)?;
    Ok((fwd, bwd))
}

/// Row-stochastic D^{-1}(A + I) used by the multi-hop propagation; degrees
/// include the self-loop so every row is positive.
pub fn row_norm_self_var(tape: &Tape, a: &Var) -> Result<Var> {
    let n = a.shape()[0];
    let eye = tape.constant(identity(n));
    let a_tilde = a.add(&eye)?;
    let deg = degrees(&a_tilde)?;
    let dinv = tape.constant(Tensor::ones(&[n, 1])).div(&deg)?;
    dinv.broadcast(&[n, n])?.mul(&a_tilde)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphKind;

    #[test]
    fn zero_adjacency_gives_identity_laplacian() {
        let a = AdjMatrix::new(3, vec![0.0; 9], GraphKind::Connectivity, false).unwrap();
        let basis = normalized_laplacian(&a).unwrap();
        assert_eq!(basis.laplacian, identity(3));
    }

    #[test]
    fn two_node_unit_edge() {
        let a = AdjMatrix::new(
            2,
            vec![0.0, 1.0, 1.0, 0.0],
            GraphKind::Connectivity,
            false,
        )
        .unwrap();
        let basis = normalized_laplacian(&a).unwrap();
        assert_eq!(basis.laplacian.data(), &[1.0, -1.0, -1.0, 1.0]);
        // Hand eigendecomposition: eigenvalues 0 (vector [1,1]) and 2 ([1,-1]).
        let l = &basis.laplacian;
        let ones_img: Vec<f64> = (0..2).map(|i| l.at(i, 0) + l.at(i, 1)).collect();
        assert_eq!(ones_img, vec![0.0, 0.0]);
        let alt_img: Vec<f64> = (0..2).map(|i| l.at(i, 0) - l.at(i, 1)).collect();
        assert_eq!(alt_img, vec![2.0, -2.0]);
    }

    #[test]
    fn directed_input_is_a_contract_error() {
        let a = AdjMatrix::new(
            2,
            vec![0.0, 1.0, 0.0, 0.0],
            GraphKind::Connectivity,
            true,
        )
        .unwrap();
        assert!(normalized_laplacian(&a).is_err());
    }

    #[test]
    fn tape_sym_norm_matches_plain_laplacian() {
        let a = AdjMatrix::new(
            3,
            vec![0.0, 2.0, 0.5, 2.0, 0.0, 0.0, 0.5, 0.0, 0.0],
            GraphKind::Distance,
            false,
        )
        .unwrap();
        let basis = normalized_laplacian(&a).unwrap();
        let tape = Tape::new();
        let av = tape.constant(a.to_tensor());
        let n_sym = sym_norm_var(&tape, &av).unwrap().value();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 } - basis.laplacian.at(i, j);
                assert!((n_sym.at(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transition_rows_are_stochastic_or_zero() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_raw(
            vec![3, 3],
            vec![0.0, 1.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0],
        ));
        let (fwd, bwd) = transition_var(&tape, &a).unwrap();
        for m in [fwd.value(), bwd.value()] {
            for i in 0..3 {
                let sum: f64 = (0..3).map(|j| m.at(i, j)).sum();
                assert!(sum.abs() < 1e-12 || (sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
