//! Gated temporal convolution blocks interleaved with graph convolutions,
//! with a direct multi-horizon projection head.
//!
//! Each block runs a causal dilated convolution whose output splits into a
//! tanh branch gated by a sigmoid branch, feeds the gated features through
//! one graph convolution, and adds a residual. Dilations double per block so
//! the stack's receptive field covers the input window.

use rand_chacha::ChaCha8Rng;

use super::ModelSpec;
use crate::error::Result;
use crate::ops::{GraphConvLayer, GraphCtx};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

struct StBlock {
    taps: Vec<usize>,
    bias: usize,
    gc: GraphConvLayer,
    dilation: usize,
}

pub struct CnnParams {
    lift_w: usize,
    lift_b: usize,
    blocks: Vec<StBlock>,
    out_w: usize,
    out_b: usize,
}

impl CnnParams {
    pub fn new(spec: &ModelSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let c = spec.hidden;
        let lift_w = store.register_uniform("lift.w", &[spec.d, c], spec.d, rng);
        let lift_b = store.register_zeros("lift.b", &[1, c]);
        let mut blocks = Vec::with_capacity(spec.dilations.len());
        for (i, &dilation) in spec.dilations.iter().enumerate() {
            let taps = (0..spec.kernel)
                .map(|tap| {
                    store.register_uniform(
                        &format!("block{i}.tap{tap}"),
                        &[c, 2 * c],
                        c * spec.kernel,
                        rng,
                    )
                })
                .collect();
            let bias = store.register_zeros(&format!("block{i}.b"), &[1, 2 * c]);
            let gc = GraphConvLayer::new(
                store,
                rng,
                &format!("block{i}.gc"),
                spec.conv,
                c,
                c,
                true,
            )?;
            blocks.push(StBlock {
                taps,
                bias,
                gc,
                dilation,
            });
        }
        Ok(CnnParams {
            lift_w,
            lift_b,
            blocks,
            out_w: store.register_uniform("out.w", &[c, spec.q * spec.d], c, rng),
            out_b: store.register_zeros("out.b", &[1, spec.q * spec.d]),
        })
    }

    pub fn forward(
        &self,
        spec: &ModelSpec,
        tape: &Tape,
        ctx: &GraphCtx,
        leaves: &[Var],
        input: &[Tensor],
    ) -> Result<Vec<Var>> {
        let seq = self.forward_features(spec, tape, ctx, leaves, input)?;
        let features = seq.last().expect("P >= 1");
        let flat = features
            .matmul(&leaves[self.out_w])?
            .add(&leaves[self.out_b])?;
        (0..spec.q)
            .map(|h| flat.slice(1, h * spec.d, (h + 1) * spec.d))
            .collect()
    }

    /// Per-position features after all blocks; position t only ever sees
    /// inputs at times <= t.
    pub fn forward_features(
        &self,
        spec: &ModelSpec,
        tape: &Tape,
        ctx: &GraphCtx,
        leaves: &[Var],
        input: &[Tensor],
    ) -> Result<Vec<Var>> {
        let c = spec.hidden;
        let zero = tape.constant(Tensor::zeros(&[spec.n, c]));
        let mut seq: Vec<Var> = input
            .iter()
            .map(|frame| {
                tape.constant(frame.clone())
                    .matmul(&leaves[self.lift_w])?
                    .add(&leaves[self.lift_b])
            })
            .collect::<Result<_>>()?;
        for block in &self.blocks {
            let mut gated = Vec::with_capacity(seq.len());
            for t in 0..seq.len() {
                // Causal taps look back tap*dilation steps; zeros before the
                // window start.
                let mut acc: Option<Var> = None;
                for (tap, w) in block.taps.iter().enumerate() {
                    let offset = tap * block.dilation;
                    let source = if t >= offset { &seq[t - offset] } else { &zero };
                    let term = source.matmul(&leaves[*w])?;
                    acc = Some(match acc {
                        Some(a) => a.add(&term)?,
                        None => term,
                    });
                }
                let z = acc.expect("kernel >= 1").add(&leaves[block.bias])?;
                let filter = z.slice(1, 0, c)?.tanh();
                let gate = z.slice(1, c, 2 * c)?.sigmoid();
                gated.push(filter.mul(&gate)?);
            }
            for t in 0..seq.len() {
                let spatial = block.gc.forward(ctx, leaves, &gated[t])?;
                seq[t] = seq[t].add(&spatial)?;
            }
        }
        Ok(seq)
    }
}
