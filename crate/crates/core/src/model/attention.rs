//! Per-node scaled dot-product self-attention over the input positions,
//! interleaved with graph convolutions over nodes, mean-pooled into a direct
//! multi-horizon projection.

use rand_chacha::ChaCha8Rng;

use super::ModelSpec;
use crate::error::Result;
use crate::ops::{GraphConvLayer, GraphCtx};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

struct AttnHead {
    wq: usize,
    wk: usize,
    wv: usize,
}

struct AttnBlock {
    heads: Vec<AttnHead>,
    merge_w: usize,
    merge_b: usize,
    gc: GraphConvLayer,
}

pub struct AttnParams {
    lift_w: usize,
    lift_b: usize,
    positional: Tensor,
    blocks: Vec<AttnBlock>,
    out_w: usize,
    out_b: usize,
}

/// Fixed sinusoidal encoding over the P input positions, one [1, width] row
/// per position.
fn sinusoidal_encoding(positions: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; positions * width];
    for t in 0..positions {
        for i in 0..width {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let angle = t as f64 / rate;
            data[t * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::from_raw(vec![positions, width], data)
}

impl AttnParams {
    pub fn new(spec: &ModelSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let c = spec.hidden;
        let dk = c / spec.heads;
        let lift_w = store.register_uniform("lift.w", &[spec.d, c], spec.d, rng);
        let lift_b = store.register_zeros("lift.b", &[1, c]);
        let mut blocks = Vec::with_capacity(spec.attn_blocks);
        for bi in 0..spec.attn_blocks {
            let heads = (0..spec.heads)
                .map(|h| AttnHead {
                    wq: store.register_uniform(&format!("blk{bi}.h{h}.wq"), &[c, dk], c, rng),
                    wk: store.register_uniform(&format!("blk{bi}.h{h}.wk"), &[c, dk], c, rng),
                    wv: store.register_uniform(&format!("blk{bi}.h{h}.wv"), &[c, dk], c, rng),
                })
                .collect();
            blocks.push(AttnBlock {
                heads,
                merge_w: store.register_uniform(&format!("blk{bi}.merge.w"), &[c, c], c, rng),
                merge_b: store.register_zeros(&format!("blk{bi}.merge.b"), &[1, c]),
                gc: GraphConvLayer::new(
                    store,
                    rng,
                    &format!("blk{bi}.gc"),
                    spec.conv,
                    c,
                    c,
                    true,
                )?,
            });
        }
        Ok(AttnParams {
            lift_w,
            lift_b,
            positional: sinusoidal_encoding(spec.p, c),
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
        let with_positions = spec.positional_encoding;
        let c = spec.hidden;
        let p = input.len();
        let dk = c / spec.heads;
        let mut seq: Vec<Var> = Vec::with_capacity(p);
        for (t, frame) in input.iter().enumerate() {
            let mut h = tape
                .constant(frame.clone())
                .matmul(&leaves[self.lift_w])?
                .add(&leaves[self.lift_b])?;
            if with_positions {
                let row = Tensor::from_raw(
                    vec![1, c],
                    self.positional.data()[t * c..(t + 1) * c].to_vec(),
                );
                h = h.add(&tape.constant(row))?;
            }
            seq.push(h);
        }
        for block in &self.blocks {
            let mut merged: Vec<Option<Var>> = vec![None; p];
            for head in &block.heads {
                let q: Vec<Var> = seq
                    .iter()
                    .map(|h| h.matmul(&leaves[head.wq]))
                    .collect::<Result<_>>()?;
                let k: Vec<Var> = seq
                    .iter()
                    .map(|h| h.matmul(&leaves[head.wk]))
                    .collect::<Result<_>>()?;
                let v: Vec<Var> = seq
                    .iter()
                    .map(|h| h.matmul(&leaves[head.wv]))
                    .collect::<Result<_>>()?;
                for t1 in 0..p {
                    // Per-node scores against every key position.
                    let cols: Vec<Var> = (0..p)
                        .map(|t2| q[t1].mul(&k[t2])?.reduce_sum(Some(1)))
                        .collect::<Result<_>>()?;
                    let col_refs: Vec<&Var> = cols.iter().collect();
                    let scores = Var::concat(&col_refs, 1)?.scale(1.0 / (dk as f64).sqrt());
                    let attn = scores.softmax(1)?; // [n, p]
                    let mut out: Option<Var> = None;
                    for (t2, value) in v.iter().enumerate() {
                        let weight = attn.slice(1, t2, t2 + 1)?.broadcast(&[spec.n, dk])?;
                        let term = weight.mul(value)?;
                        out = Some(match out {
                            Some(acc) => acc.add(&term)?,
                            None => term,
                        });
                    }
                    let out = out.expect("p >= 1");
                    merged[t1] = Some(match merged[t1].take() {
                        Some(acc) => Var::concat(&[&acc, &out], 1)?,
                        None => out,
                    });
                }
            }
            for t in 0..p {
                let attended = merged[t]
                    .take()
                    .expect("heads >= 1")
                    .matmul(&leaves[block.merge_w])?
                    .add(&leaves[block.merge_b])?;
                let h = seq[t].add(&attended)?;
                let spatial = block.gc.forward(ctx, leaves, &h)?;
                seq[t] = h.add(&spatial)?;
            }
        }
        let mut pooled = seq[0].clone();
        for h in seq.iter().skip(1) {
            pooled = pooled.add(h)?;
        }
        let pooled = pooled.scale(1.0 / p as f64);
        let flat = pooled
            .matmul(&leaves[self.out_w])?
            .add(&leaves[self.out_b])?;
        (0..spec.q)
            .map(|h| flat.slice(1, h * spec.d, (h + 1) * spec.d))
            .collect()
    }
}
