//! Shared test utilities: a central finite-difference gradient checker and
//! independent dense oracles the implementation is verified against.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stgf_core::graph::{AdjMatrix, GraphKind};
use stgf_core::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;

/// Build a scalar loss from leaf tensors; rebuilt fresh for every probe.
pub type ScalarFn<'a> = dyn Fn(&Tape, &[Var]) -> stgf_core::Result<Var> + 'a;

fn eval_scalar(inputs: &[Tensor], f: &ScalarFn) -> f64 {
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    f(&tape, &leaves).expect("forward").value().scalar_value()
}

/// Compare the tape gradient of `f` against central finite differences on
/// every coordinate of every input; returns the worst relative error.
pub fn gradcheck(inputs: &[Tensor], f: &ScalarFn) -> f64 {
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&tape, &leaves).expect("forward");
    tape.backward(&root).expect("backward");
    let analytic: Vec<Tensor> = leaves.iter().map(|l| l.grad()).collect();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].clone_from(input);
            let mut data = input.data().to_vec();
            data[j] += FD_STEP;
            plus[i] = Tensor::new(input.shape().to_vec(), data.clone()).unwrap();
            let lp = eval_scalar(&plus, f);
            data[j] -= 2.0 * FD_STEP;
            plus[i] = Tensor::new(input.shape().to_vec(), data).unwrap();
            let lm = eval_scalar(&plus, f);
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic[i].data()[j];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn assert_gradcheck(inputs: &[Tensor], f: &ScalarFn) {
    let worst = gradcheck(inputs, f);
    assert!(
        worst < FD_TOL,
        "finite-difference mismatch: relative error {worst}"
    );
}

/// Random tensor in [-2, 2]; `min_abs` resamples coordinates near zero so
/// kinked activations stay differentiable at the probe point.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], min_abs: f64) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if v.abs() >= min_abs {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Fixed random projection turning an [r, c] output into a scalar loss.
pub fn project_to_scalar(tape: &Tape, out: &Var, rng: &mut ChaCha8Rng) -> stgf_core::Result<Var> {
    let shape = out.shape();
    let w = random_tensor(rng, &shape, 0.0);
    out.mul(&tape.constant(w))?.reduce_sum(None)
}

/// Random symmetric nonnegative adjacency with a zero diagonal.
pub fn random_undirected(rng: &mut ChaCha8Rng, n: usize, density: f64) -> AdjMatrix {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < density {
                let v: f64 = rng.gen_range(0.1..1.5);
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
    }
    AdjMatrix::new(n, w, GraphKind::Distance, false).unwrap()
}

/// Random directed nonnegative adjacency with a zero diagonal.
pub fn random_directed(rng: &mut ChaCha8Rng, n: usize, density: f64) -> AdjMatrix {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < density {
                w[i * n + j] = rng.gen_range(0.1..1.5);
            }
        }
    }
    AdjMatrix::new(n, w, GraphKind::Connectivity, true).unwrap()
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Permute the rows of a matrix tensor: out[perm[i]] = in[i].
pub fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[perm[i] * c + j] = t.at(i, j);
        }
    }
    Tensor::new(vec![r, c], out).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Dense oracles (independent of the tape implementation)
// ---------------------------------------------------------------------------

pub type Mat = Vec<Vec<f64>>;

pub fn mat_from_tensor(t: &Tensor) -> Mat {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| (0..c).map(|j| t.at(i, j)).collect()).collect()
}

pub fn tensor_from_mat(m: &Mat) -> Tensor {
    let r = m.len();
    let c = m[0].len();
    Tensor::new(vec![r, c], m.concat()).unwrap()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (r, k, c) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; c]; r];
    for i in 0..r {
        for p in 0..k {
            for j in 0..c {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

pub fn mat_add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b.iter())
        .map(|(ra, rb)| ra.iter().zip(rb.iter()).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn mat_scale(a: &Mat, s: f64) -> Mat {
    a.iter().map(|r| r.iter().map(|v| v * s).collect()).collect()
}

pub fn mat_eye(n: usize) -> Mat {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn mat_map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

/// Exhaustive warping-path enumeration: minimum front-to-back accumulated
/// |a_i - b_j| over all monotone paths from (0,0) to (n-1,m-1).
pub fn dtw_exhaustive(a: &[f64], b: &[f64]) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).abs();
        if i == a.len() - 1 && j == b.len() - 1 {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

/// Direct-formula JSD oracle: 0.5 sum p log2(2p/(p+q)) + 0.5 sum q
/// log2(2q/(p+q)).
pub fn jsd_direct(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if pi > 0.0 {
            acc += 0.5 * pi * (2.0 * pi / (pi + qi)).log2();
        }
        if qi > 0.0 {
            acc += 0.5 * qi * (2.0 * qi / (pi + qi)).log2();
        }
    }
    acc
}

/// Plain normalized Laplacian for the spectral oracle.
pub fn dense_laplacian(a: &AdjMatrix) -> Mat {
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
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let norm = dinv_sqrt[i] * a.at(i, j) * dinv_sqrt[j];
            l[i][j] = if i == j { 1.0 - norm } else { -norm };
        }
    }
    l
}

/// Spectral-domain Chebyshev filter: U (sum_k T_k(Lambda~) U^T X Theta_k)
/// computed through an explicit eigendecomposition of L.
pub fn cheb_spectral_oracle(a: &AdjMatrix, x: &Tensor, thetas: &[Tensor]) -> Tensor {
    let n = a.n();
    let l = dense_laplacian(a);
    let mut flat = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            flat.push(l[j][i]); // column-major for nalgebra
        }
    }
    let m = nalgebra::DMatrix::from_vec(n, n, flat);
    let eig = nalgebra::SymmetricEigen::new(m);
    let u: Mat = (0..n)
        .map(|i| (0..n).map(|j| eig.eigenvectors[(i, j)]).collect())
        .collect();
    let ut: Mat = (0..n)
        .map(|i| (0..n).map(|j| eig.eigenvectors[(j, i)]).collect())
        .collect();
    // Scaled eigenvalues for lambda_max fixed at 2: 2*lambda/2 - 1.
    let lam: Vec<f64> = (0..n).map(|i| eig.eigenvalues[i] - 1.0).collect();
    let xm = mat_from_tensor(x);
    let utx = mat_mul(&ut, &xm);
    let f_out = thetas[0].shape()[1];
    let mut acc = vec![vec![0.0; f_out]; n];
    let mut t_prev = vec![1.0; n]; // T_0(lam)
    let mut t_cur = lam.clone(); // T_1(lam)
    for (k, theta) in thetas.iter().enumerate() {
        let tk: Vec<f64> = match k {
            0 => t_prev.clone(),
            1 => t_cur.clone(),
            _ => {
                let next: Vec<f64> = (0..n)
                    .map(|i| 2.0 * lam[i] * t_cur[i] - t_prev[i])
                    .collect();
                t_prev = t_cur.clone();
                t_cur = next.clone();
                next
            }
        };
        // diag(T_k) U^T X
        let filtered: Mat = (0..n)
            .map(|i| utx[i].iter().map(|v| v * tk[i]).collect())
            .collect();
        let spatial = mat_mul(&u, &filtered);
        let term = mat_mul(&spatial, &mat_from_tensor(theta));
        acc = mat_add(&acc, &term);
    }
    tensor_from_mat(&acc)
}

/// Dense transition-power diffusion oracle: explicit P_f^k and P_b^k.
pub fn diffusion_dense_oracle(
    a: &AdjMatrix,
    x: &Tensor,
    theta_fwd: &[Tensor],
    theta_bwd: &[Tensor],
) -> Tensor {
    let n = a.n();
    let row_norm = |m: &Mat| -> Mat {
        m.iter()
            .map(|row| {
                let deg: f64 = row.iter().sum();
                if deg > 0.0 {
                    row.iter().map(|v| v / deg).collect()
                } else {
                    vec![0.0; row.len()]
                }
            })
            .collect()
    };
    let am: Mat = (0..n).map(|i| (0..n).map(|j| a.at(i, j)).collect()).collect();
    let at: Mat = (0..n).map(|i| (0..n).map(|j| a.at(j, i)).collect()).collect();
    let pf = row_norm(&am);
    let pb = row_norm(&at);
    let xm = mat_from_tensor(x);
    let f_out = theta_fwd[0].shape()[1];
    let mut acc = vec![vec![0.0; f_out]; n];
    let mut pow_f = mat_eye(n);
    let mut pow_b = mat_eye(n);
    for k in 0..theta_fwd.len() {
        if k > 0 {
            pow_f = mat_mul(&pf, &pow_f);
            pow_b = mat_mul(&pb, &pow_b);
        }
        acc = mat_add(
            &acc,
            &mat_mul(&mat_mul(&pow_f, &xm), &mat_from_tensor(&theta_fwd[k])),
        );
        acc = mat_add(
            &acc,
            &mat_mul(&mat_mul(&pow_b, &xm), &mat_from_tensor(&theta_bwd[k])),
        );
    }
    tensor_from_mat(&acc)
}

/// Literal step-by-step multi-hop oracle.
pub fn multi_hop_dense_oracle(
    a: &AdjMatrix,
    x: &Tensor,
    ws: &[Tensor],
    beta: f64,
    alphas: &[f64],
) -> Tensor {
    let n = a.n();
    let mut a_tilde: Mat = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| a.at(i, j) + if i == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    for row in &mut a_tilde {
        let deg: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= deg;
        }
    }
    let x0 = mat_from_tensor(x);
    let mut states = vec![x0.clone()];
    let mut h = x0.clone();
    for w in ws {
        let prop = mat_map(
            &mat_mul(&mat_mul(&a_tilde, &h), &mat_from_tensor(w)),
            |v| v.max(0.0),
        );
        h = mat_add(&mat_scale(&x0, beta), &mat_scale(&mat_mul(&a_tilde, &prop), 1.0 - beta));
        states.push(h.clone());
    }
    let mut acc = vec![vec![0.0; x0[0].len()]; n];
    for (state, &alpha) in states.iter().zip(alphas.iter()) {
        acc = mat_add(&acc, &mat_scale(state, alpha));
    }
    tensor_from_mat(&acc)
}
