//! Structural invariants: node-permutation equivariance of every operator
//! and every forecast archetype, spectral bounds, degree-normalization
//! bounds, and randomized properties of the data plumbing.

mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stgf_core::data::{make_windows, masked_metrics, RawSeries, Scaler};
use stgf_core::graph::{
    adaptive_graph, dtw_distance, js_divergence, AdaptiveVariant, AdjMatrix, EmbeddingPair,
    GraphKind,
};
use stgf_core::model::{Archetype, Model, ModelSpec};
use stgf_core::ops::{
    cheb_conv, diffusion_conv, gat_layer, gcn_layer, multi_hop_conv, normalized_laplacian,
    GatHead, GraphCtx, HopAggregation,
};
use stgf_core::tensor::{Tape, Tensor};

const EQUIV_TOL: f64 = 1e-10;

fn apply_op(
    name: &str,
    adj: &AdjMatrix,
    x: &Tensor,
    params: &[Tensor],
) -> Tensor {
    let tape = Tape::new();
    let ctx = GraphCtx::new(&tape, tape.constant(adj.to_tensor()), adj.directed());
    let xv = tape.constant(x.clone());
    let pv: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
    match name {
        "gcn" => gcn_layer(&ctx.sym_norm().unwrap(), &xv, &pv[0], &pv[1]).unwrap(),
        "cheb" => cheb_conv(&ctx.scaled_laplacian().unwrap(), &xv, &pv).unwrap(),
        "diffusion" => {
            let (tf, tb) = ctx.transitions().unwrap();
            let k = pv.len() / 2;
            diffusion_conv(&tf, &tb, &xv, &pv[..k], &pv[k..]).unwrap()
        }
        "multihop" => {
            let alphas = pv.last().unwrap();
            multi_hop_conv(
                &ctx.row_norm().unwrap(),
                &xv,
                &pv[..pv.len() - 1],
                0.3,
                alphas,
                HopAggregation::Linear,
            )
            .unwrap()
        }
        "gat" => {
            let head = GatHead {
                w: &pv[0],
                attn_self: &pv[1],
                attn_neighbor: &pv[2],
            };
            gat_layer(&ctx.gat_mask(), &xv, &[head], false).unwrap()
        }
        other => panic!("unknown op {other}"),
    }
    .value()
}

/// op(P A P^T, P X) = P op(A, X) for every operator, random P, n <= 8.
#[test]
fn operators_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for trial in 0..12 {
        let n = rng.gen_range(3..=8);
        let f = rng.gen_range(1..=3);
        let undirected = random_undirected(&mut rng, n, 0.6);
        let directed = random_directed(&mut rng, n, 0.5);
        let x = random_tensor(&mut rng, &[n, f], 0.0);
        let perm = random_permutation(&mut rng, n);

        let cases: Vec<(&str, &AdjMatrix, Vec<Tensor>)> = vec![
            (
                "gcn",
                &undirected,
                vec![
                    random_tensor(&mut rng, &[f, 2], 0.0),
                    random_tensor(&mut rng, &[1, 2], 0.0),
                ],
            ),
            (
                "cheb",
                &undirected,
                (0..3).map(|_| random_tensor(&mut rng, &[f, 2], 0.0)).collect(),
            ),
            (
                "diffusion",
                &directed,
                (0..4).map(|_| random_tensor(&mut rng, &[f, 2], 0.0)).collect(),
            ),
            ("multihop", &undirected, {
                let mut p: Vec<Tensor> =
                    (0..2).map(|_| random_tensor(&mut rng, &[f, f], 0.0)).collect();
                p.push(random_tensor(&mut rng, &[1, 3], 0.0));
                p
            }),
            (
                "gat",
                &directed,
                vec![
                    random_tensor(&mut rng, &[f, 2], 0.0),
                    random_tensor(&mut rng, &[2, 1], 0.0),
                    random_tensor(&mut rng, &[2, 1], 0.0),
                ],
            ),
        ];
        for (name, adj, params) in cases {
            let base = apply_op(name, adj, &x, &params);
            let permuted = apply_op(name, &adj.permuted(&perm), &permute_rows(&x, &perm), &params);
            let diff = max_abs_diff(&permute_rows(&base, &perm), &permuted);
            assert!(
                diff < EQUIV_TOL,
                "{name} not equivariant (trial {trial}): {diff}"
            );
        }
    }
}

/// The full forward pass of each archetype is node-permutation equivariant.
#[test]
fn forecast_paths_are_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for archetype in [Archetype::Rnn, Archetype::Cnn, Archetype::Attention] {
        let n = 6;
        let (p, q, d) = (4, 3, 2);
        let adj = random_undirected(&mut rng, n, 0.6);
        let perm = random_permutation(&mut rng, n);
        let mut spec = ModelSpec::default_for(archetype, n, d, p, q);
        spec.hidden = 8;
        spec.dilations = vec![1, 2];
        spec.heads = 2;
        let model = Model::new(spec.clone(), &adj, 11).unwrap();
        let model_p = Model::new(spec, &adj.permuted(&perm), 11).unwrap();
        let frames: Vec<Tensor> = (0..p).map(|_| random_tensor(&mut rng, &[n, d], 0.0)).collect();
        let permuted_frames: Vec<Tensor> = frames.iter().map(|f| permute_rows(f, &perm)).collect();
        let base = model.forecast(&frames, 0).unwrap();
        let permuted = model_p.forecast(&permuted_frames, 0).unwrap();
        for (b, pr) in base.iter().zip(permuted.iter()) {
            let diff = max_abs_diff(&permute_rows(b, &perm), pr);
            assert!(
                diff < EQUIV_TOL,
                "{} forecast not equivariant: {diff}",
                archetype.name()
            );
        }
    }
}

/// Eigenvalues of the normalized Laplacian lie in [0, 2] and the spectral
/// radius of the normalized adjacency is at most 1 (checked with an
/// independent eigendecomposition on small instances).
#[test]
fn laplacian_spectrum_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let n = rng.gen_range(2..=6);
        let adj = random_undirected(&mut rng, n, 0.6);
        let basis = normalized_laplacian(&adj).unwrap();
        let mut flat = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                flat.push(basis.laplacian.at(j, i));
            }
        }
        let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_vec(n, n, flat));
        for i in 0..n {
            let lambda = eig.eigenvalues[i];
            assert!(
                (-1e-10..=2.0 + 1e-10).contains(&lambda),
                "eigenvalue {lambda} outside [0, 2]"
            );
        }
    }
}

/// Row sums of the degree-normalized transition matrices never exceed 1
/// (they are exactly 1 on rows with any neighbor, 0 otherwise).
#[test]
fn transition_rows_are_substochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..20 {
        let n = rng.gen_range(2..=6);
        let adj = random_directed(&mut rng, n, 0.5);
        let tape = Tape::new();
        let ctx = GraphCtx::new(&tape, tape.constant(adj.to_tensor()), true);
        let (tf, tb) = ctx.transitions().unwrap();
        for m in [tf.value(), tb.value()] {
            for i in 0..n {
                let sum: f64 = (0..n).map(|j| m.at(i, j)).sum();
                assert!(sum <= 1.0 + 1e-12);
            }
        }
    }
}

/// min(A_ij, A_ji) = 0 for the uni-directed adaptive construction.
#[test]
fn unidirected_adaptive_keeps_one_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..10 {
        let n = rng.gen_range(2..=8);
        let d = rng.gen_range(1..=4);
        let pair = EmbeddingPair::new(
            random_tensor(&mut rng, &[n, d], 0.0),
            random_tensor(&mut rng, &[n, d], 0.0),
            3.0,
        )
        .unwrap();
        let a = adaptive_graph(AdaptiveVariant::Unidirected, &pair, None).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(a.at(i, j).min(a.at(j, i)), 0.0);
            }
        }
    }
}

/// Softmax lanes on finite inputs sum to 1 within 1e-12 and stay positive.
#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..50 {
        let (r, c) = (rng.gen_range(1..=6), rng.gen_range(2..=8));
        let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![r, c], data).unwrap());
        let y = x.softmax(1).unwrap().value();
        for i in 0..r {
            let sum: f64 = (0..c).map(|j| y.at(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!((0..c).all(|j| y.at(i, j) > 0.0));
        }
    }
}

fn series_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dtw_is_symmetric_nonnegative(a in series_strategy(), b in series_strategy()) {
        let ab = dtw_distance(&a, &b, None).unwrap();
        let ba = dtw_distance(&b, &a, None).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(dtw_distance(&a, &a, None).unwrap(), 0.0);
    }

    #[test]
    fn jsd_is_symmetric_and_bounded(
        raw_p in prop::collection::vec(0.01f64..1.0, 2..8),
        raw_q in prop::collection::vec(0.01f64..1.0, 2..8),
    ) {
        let len = raw_p.len().min(raw_q.len());
        let norm = |raw: &[f64]| {
            let s: f64 = raw[..len].iter().sum();
            raw[..len].iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let p = norm(&raw_p);
        let q = norm(&raw_q);
        let d = js_divergence(&p, &q).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - js_divergence(&q, &p).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn window_count_matches_formula(
        t in 2usize..200,
        p in 1usize..12,
        q in 1usize..12,
    ) {
        let data: Vec<f64> = (0..t).map(|i| i as f64 + 1.0).collect();
        let rs = RawSeries::new(data, t, 1, 1, 5, None, None).unwrap();
        let windows = make_windows(&rs, p, q);
        if t >= p + q {
            let w = windows.unwrap();
            prop_assert_eq!(w.len(), t - p - q + 1);
            for (k, sample) in w.iter().enumerate() {
                prop_assert_eq!(sample.start, k);
            }
        } else {
            prop_assert!(windows.is_err());
        }
    }

    #[test]
    fn masked_metrics_ignore_masked_cells_and_permutation(
        truth in prop::collection::vec(prop::option::weighted(0.8, 1.0f64..60.0), 2..24),
        noise in prop::collection::vec(-5.0f64..5.0, 24),
        seed in 0u64..1000,
    ) {
        let y: Vec<f64> = truth.iter().map(|v| v.unwrap_or(0.0)).collect();
        if y.iter().all(|&v| v == 0.0) {
            return Ok(());
        }
        let yhat: Vec<f64> = y.iter().zip(noise.iter().cycle()).map(|(&t, &n)| t + n).collect();
        let base = masked_metrics(&y, &yhat).unwrap();

        // Mutating predictions at masked cells changes nothing.
        let mut tampered = yhat.clone();
        for (i, &t) in y.iter().enumerate() {
            if t == 0.0 {
                tampered[i] = 1e9;
            }
        }
        let after = masked_metrics(&y, &tampered).unwrap();
        prop_assert_eq!(base, after);

        // Simultaneous permutation leaves metrics unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perm = random_permutation(&mut rng, y.len());
        let mut yp = vec![0.0; y.len()];
        let mut yhp = vec![0.0; y.len()];
        for (i, &pi) in perm.iter().enumerate() {
            yp[pi] = y[i];
            yhp[pi] = yhat[i];
        }
        let permuted = masked_metrics(&yp, &yhp).unwrap();
        prop_assert!((base.mae - permuted.mae).abs() < 1e-9);
        prop_assert!((base.rmse - permuted.rmse).abs() < 1e-9);
        prop_assert!((base.mape - permuted.mape).abs() < 1e-9);
    }

    #[test]
    fn zscore_round_trips(
        data in prop::collection::vec(1.0f64..100.0, 20..60),
        train_frac in 0.3f64..0.9,
    ) {
        let t = data.len();
        let rs = RawSeries::new(data.clone(), t, 1, 1, 5, None, None).unwrap();
        let train_end = ((t as f64) * train_frac) as usize;
        prop_assume!(train_end >= 2);
        let head: Vec<f64> = data[..train_end].to_vec();
        let spread = head.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - head.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-6);
        let scaler = Scaler::fit(&rs, train_end).unwrap();
        for (t_idx, &v) in data.iter().enumerate() {
            let round = scaler.inverse_value(0, scaler.transform_value(0, rs.at(t_idx, 0, 0)));
            prop_assert!((round - v).abs() < 1e-9);
        }
    }

    #[test]
    fn distance_graph_weights_are_bounded(
        dists in prop::collection::vec(0.0f64..100.0, 6),
        sigma2 in 1.0f64..200.0,
        eps in 0.0f64..1.0,
    ) {
        // Symmetric 3-node distance table from 3 off-diagonal values.
        let n = 3;
        let mut d = vec![0.0; 9];
        let pairs = [(0, 1), (0, 2), (1, 2)];
        for (k, &(i, j)) in pairs.iter().enumerate() {
            d[i * n + j] = dists[k];
            d[j * n + i] = dists[k];
        }
        let table = stgf_core::graph::DistanceTable::new(n, d).unwrap();
        let a = stgf_core::graph::build_distance_graph(&table, sigma2, eps).unwrap();
        for i in 0..n {
            prop_assert_eq!(a.at(i, i), 0.0);
            for j in 0..n {
                let w = a.at(i, j);
                prop_assert!((0.0..=1.0).contains(&w));
                prop_assert!(w == 0.0 || w >= eps);
            }
        }
        prop_assert!(a.is_symmetric(1e-12));
    }
}

/// Connectivity, semantic, functionality and distribution graphs are
/// symmetric with finite nonnegative weights.
#[test]
fn constructors_yield_finite_nonnegative_symmetric_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let n = 5;
    let t = 40;
    let mut data = vec![0.0; t * n];
    for (i, v) in data.iter_mut().enumerate() {
        *v = 10.0 + ((i / n) as f64 * 0.7).sin() * 3.0 + rng.gen_range(-0.5..0.5) * ((i % n) as f64 + 1.0);
    }
    let rs = RawSeries::new(data, t, n, 1, 5, None, None).unwrap();
    let semantic = stgf_core::graph::build_semantic_graph(&rs, 0, 15.0, None).unwrap();
    let distribution = stgf_core::graph::build_distribution_graph(&rs, 0, 8).unwrap();
    let functionality = stgf_core::graph::build_functionality_graph(
        &stgf_core::graph::PoiProfile::new(
            (0..n)
                .map(|_| (0..4).map(|_| rng.gen_range(0.0..5.0) + 0.1).collect())
                .collect(),
        )
        .unwrap(),
    )
    .unwrap();
    let connectivity =
        stgf_core::graph::build_connectivity_graph(&[(0, 1), (2, 3), (1, 4)], n, false).unwrap();
    for (name, g) in [
        ("semantic", &semantic),
        ("distribution", &distribution),
        ("functionality", &functionality),
        ("connectivity", &connectivity),
    ] {
        assert!(g.is_symmetric(1e-12), "{name} asymmetric");
        assert!(
            g.weights().iter().all(|w| w.is_finite() && *w >= 0.0),
            "{name} has invalid weights"
        );
        assert_eq!(g.kind(), g.kind(), "{name}");
    }
    assert_eq!(semantic.kind(), GraphKind::Semantic);
    assert_eq!(distribution.kind(), GraphKind::Distribution);
}
