//! Differentiable graph convolutions and a unified layer that dispatches
//! between them inside models.

mod conv;
pub mod laplacian;

pub use conv::{
    cheb_conv, diffusion_conv, gat_layer, gat_neighborhood_mask, gcn_layer, masked_attention_conv,
    multi_hop_conv, GatHead, HopAggregation, GAT_LEAKY_SLOPE, GAT_MASK,
};
pub use laplacian::{
    identity, normalized_laplacian, row_norm_self_var, scaled_laplacian_var, sym_norm_var,
    transition_var, SpectralBasis, LAMBDA_MAX,
};

use std::cell::RefCell;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Operator selection plus its structural hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphConvKind {
    Gcn,
    Cheb { k: usize },
    Diffusion { k: usize },
    MultiHop { k: usize, beta: f64, agg: HopAggregation },
    Gat { heads: usize },
}

impl GraphConvKind {
    pub fn name(&self) -> &'static str {
        match self {
            GraphConvKind::Gcn => "gcn",
            GraphConvKind::Cheb { .. } => "cheb",
            GraphConvKind::Diffusion { .. } => "diffusion",
            GraphConvKind::MultiHop { .. } => "multihop",
            GraphConvKind::Gat { .. } => "gat",
        }
    }

    /// Whether the operator's normalization needs a symmetric adjacency.
    pub fn requires_undirected(&self) -> bool {
        matches!(self, GraphConvKind::Gcn | GraphConvKind::Cheb { .. })
    }
}

#[derive(Default)]
struct CtxCache {
    sym_norm: Option<Var>,
    scaled_laplacian: Option<Var>,
    transitions: Option<(Var, Var)>,
    row_norm: Option<Var>,
    gat_mask: Option<Var>,
}

/// Per-forward normalization context over one (possibly trainable)
/// adjacency; each derived matrix is computed on the tape once and shared
/// by every layer and time step of the pass.
pub struct GraphCtx {
    tape: Tape,
    a: Var,
    directed: bool,
    cache: RefCell<CtxCache>,
}

impl GraphCtx {
    pub fn new(tape: &Tape, a: Var, directed: bool) -> Self {
        GraphCtx {
            tape: tape.clone(),
            a,
            directed,
            cache: RefCell::new(CtxCache::default()),
        }
    }

    pub fn adjacency(&self) -> &Var {
        &self.a
    }

    pub fn n(&self) -> usize {
        self.a.shape()[0]
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn sym_norm(&self) -> Result<Var> {
        if self.directed {
            return Err(Error::Contract(
                "symmetric normalization requires an undirected graph".into(),
            ));
        }
        let mut cache = self.cache.borrow_mut();
        if cache.sym_norm.is_none() {
            cache.sym_norm = Some(sym_norm_var(&self.tape, &self.a)?);
        }
        Ok(cache.sym_norm.clone().unwrap())
    }

    pub fn scaled_laplacian(&self) -> Result<Var> {
        if self.directed {
            return Err(Error::Contract(
                "the normalized Laplacian requires an undirected graph".into(),
            ));
        }
        let mut cache = self.cache.borrow_mut();
        if cache.scaled_laplacian.is_none() {
            cache.scaled_laplacian = Some(scaled_laplacian_var(&self.tape, &self.a)?);
        }
        Ok(cache.scaled_laplacian.clone().unwrap())
    }

    pub fn transitions(&self) -> Result<(Var, Var)> {
        let mut cache = self.cache.borrow_mut();
        if cache.transitions.is_none() {
            cache.transitions = Some(transition_var(&self.tape, &self.a)?);
        }
        Ok(cache.transitions.clone().unwrap())
    }

    pub fn row_norm(&self) -> Result<Var> {
        let mut cache = self.cache.borrow_mut();
        if cache.row_norm.is_none() {
            cache.row_norm = Some(row_norm_self_var(&self.tape, &self.a)?);
        }
        Ok(cache.row_norm.clone().unwrap())
    }

    pub fn gat_mask(&self) -> Var {
        let mut cache = self.cache.borrow_mut();
        if cache.gat_mask.is_none() {
            cache.gat_mask = Some(gat_neighborhood_mask(&self.tape, &self.a.value()));
        }
        cache.gat_mask.clone().unwrap()
    }
}

enum LayerParams {
    Gcn {
        w: usize,
        b: usize,
    },
    Cheb {
        thetas: Vec<usize>,
        b: usize,
    },
    Diffusion {
        fwd: Vec<usize>,
        bwd: Vec<usize>,
        b: usize,
    },
    MultiHop {
        ws: Vec<usize>,
        alphas: usize,
        proj: usize,
        b: usize,
    },
    Gat {
        heads: Vec<(usize, usize, usize)>,
        b: usize,
    },
}

/// One graph-convolution layer mapping `[n, f_in]` to `[n, f_out]`, with
/// parameters registered in a [`ParamStore`].
pub struct GraphConvLayer {
    kind: GraphConvKind,
    params: LayerParams,
    terminal: bool,
}

impl GraphConvLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        kind: GraphConvKind,
        f_in: usize,
        f_out: usize,
        terminal: bool,
    ) -> Result<Self> {
        let params = match kind {
            GraphConvKind::Gcn => LayerParams::Gcn {
                w: store.register_uniform(&format!("{prefix}.w"), &[f_in, f_out], f_in, rng),
                b: store.register_zeros(&format!("{prefix}.b"), &[1, f_out]),
            },
            GraphConvKind::Cheb { k } => {
                if k < 1 {
                    return Err(Error::Contract("cheb order K must be >= 1".into()));
                }
                LayerParams::Cheb {
                    thetas: (0..k)
                        .map(|i| {
                            store.register_uniform(
                                &format!("{prefix}.theta{i}"),
                                &[f_in, f_out],
                                f_in * k,
                                rng,
                            )
                        })
                        .collect(),
                    b: store.register_zeros(&format!("{prefix}.b"), &[1, f_out]),
                }
            }
            GraphConvKind::Diffusion { k } => {
                if k < 1 {
                    return Err(Error::Contract("diffusion order K must be >= 1".into()));
                }
                LayerParams::Diffusion {
                    fwd: (0..k)
                        .map(|i| {
                            store.register_uniform(
                                &format!("{prefix}.fwd{i}"),
                                &[f_in, f_out],
                                f_in * k,
                                rng,
                            )
                        })
                        .collect(),
                    bwd: (0..k)
                        .map(|i| {
                            store.register_uniform(
                                &format!("{prefix}.bwd{i}"),
                                &[f_in, f_out],
                                f_in * k,
                                rng,
                            )
                        })
                        .collect(),
                    b: store.register_zeros(&format!("{prefix}.b"), &[1, f_out]),
                }
            }
            GraphConvKind::MultiHop { k, beta, .. } => {
                if k < 1 {
                    return Err(Error::Contract("multi-hop K must be >= 1".into()));
                }
                if !(0.0..=1.0).contains(&beta) {
                    return Err(Error::Contract(format!(
                        "multi-hop beta must lie in [0, 1], got {beta}"
                    )));
                }
                let alphas_init =
                    Tensor::from_raw(vec![1, k], vec![1.0 / k as f64; k]);
                LayerParams::MultiHop {
                    ws: (0..k.saturating_sub(1))
                        .map(|i| {
                            store.register_uniform(
                                &format!("{prefix}.hop{i}"),
                                &[f_in, f_in],
                                f_in,
                                rng,
                            )
                        })
                        .collect(),
                    alphas: store.register(&format!("{prefix}.alphas"), alphas_init),
                    proj: store.register_uniform(
                        &format!("{prefix}.proj"),
                        &[f_in, f_out],
                        f_in,
                        rng,
                    ),
                    b: store.register_zeros(&format!("{prefix}.b"), &[1, f_out]),
                }
            }
            GraphConvKind::Gat { heads } => {
                if heads < 1 {
                    return Err(Error::Contract("gat needs at least one head".into()));
                }
                if f_out % heads != 0 {
                    return Err(Error::Config(format!(
                        "gat output width {f_out} is not divisible by {heads} heads"
                    )));
                }
                let hw = f_out / heads;
                LayerParams::Gat {
                    heads: (0..heads)
                        .map(|h| {
                            (
                                store.register_uniform(
                                    &format!("{prefix}.h{h}.w"),
                                    &[f_in, hw],
                                    f_in,
                                    rng,
                                ),
                                store.register_uniform(
                                    &format!("{prefix}.h{h}.a_self"),
                                    &[hw, 1],
                                    hw,
                                    rng,
                                ),
                                store.register_uniform(
                                    &format!("{prefix}.h{h}.a_nb"),
                                    &[hw, 1],
                                    hw,
                                    rng,
                                ),
                            )
                        })
                        .collect(),
                    b: store.register_zeros(&format!("{prefix}.b"), &[1, f_out]),
                }
            }
        };
        Ok(GraphConvLayer {
            kind,
            params,
            terminal,
        })
    }

    pub fn kind(&self) -> GraphConvKind {
        self.kind
    }

    pub fn forward(&self, ctx: &GraphCtx, leaves: &[Var], x: &Var) -> Result<Var> {
        match (&self.params, self.kind) {
            (LayerParams::Gcn { w, b }, _) => {
                gcn_layer(&ctx.sym_norm()?, x, &leaves[*w], &leaves[*b])
            }
            (LayerParams::Cheb { thetas, b }, _) => {
                let theta_vars: Vec<Var> = thetas.iter().map(|&i| leaves[i].clone()).collect();
                cheb_conv(&ctx.scaled_laplacian()?, x, &theta_vars)?.add(&leaves[*b])
            }
            (LayerParams::Diffusion { fwd, bwd, b }, _) => {
                let (t_fwd, t_bwd) = ctx.transitions()?;
                let f: Vec<Var> = fwd.iter().map(|&i| leaves[i].clone()).collect();
                let bk: Vec<Var> = bwd.iter().map(|&i| leaves[i].clone()).collect();
                diffusion_conv(&t_fwd, &t_bwd, x, &f, &bk)?.add(&leaves[*b])
            }
            (
                LayerParams::MultiHop {
                    ws,
                    alphas,
                    proj,
                    b,
                },
                GraphConvKind::MultiHop { beta, agg, .. },
            ) => {
                let w_vars: Vec<Var> = ws.iter().map(|&i| leaves[i].clone()).collect();
                let mixed = multi_hop_conv(
                    &ctx.row_norm()?,
                    x,
                    &w_vars,
                    beta,
                    &leaves[*alphas],
                    agg,
                )?;
                mixed.matmul(&leaves[*proj])?.add(&leaves[*b])
            }
            (LayerParams::Gat { heads, b }, _) => {
                let head_refs: Vec<GatHead> = heads
                    .iter()
                    .map(|&(w, a1, a2)| GatHead {
                        w: &leaves[w],
                        attn_self: &leaves[a1],
                        attn_neighbor: &leaves[a2],
                    })
                    .collect();
                gat_layer(&ctx.gat_mask(), x, &head_refs, self.terminal)?.add(&leaves[*b])
            }
            _ => unreachable!("params always match kind"),
        }
    }
}
