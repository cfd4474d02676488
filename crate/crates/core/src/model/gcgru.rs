//! Graph-convolutional GRU cells and the seq2seq forecast path.
//!
//! Every gate transform is a graph convolution over the concatenation of the
//! step input and the previous hidden state, with independent parameters per
//! gate. The decoder unrolls Q steps feeding back its own projected output
//! (or teacher frames when supplied during training).

use rand_chacha::ChaCha8Rng;

use super::{ModelSpec, SampleCtx};
use crate::error::Result;
use crate::ops::{GraphConvKind, GraphConvLayer, GraphCtx};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// One recurrent cell: reset/update/candidate gates as graph convolutions.
pub struct GcGruCell {
    reset: GraphConvLayer,
    update: GraphConvLayer,
    candidate: GraphConvLayer,
}

impl GcGruCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        conv: GraphConvKind,
        input_width: usize,
        hidden: usize,
    ) -> Result<Self> {
        let f_in = input_width + hidden;
        Ok(GcGruCell {
            reset: GraphConvLayer::new(store, rng, &format!("{prefix}.r"), conv, f_in, hidden, true)?,
            update: GraphConvLayer::new(store, rng, &format!("{prefix}.u"), conv, f_in, hidden, true)?,
            candidate: GraphConvLayer::new(
                store,
                rng,
                &format!("{prefix}.c"),
                conv,
                f_in,
                hidden,
                true,
            )?,
        })
    }

    /// r = sigmoid(GC[x || h]), u = sigmoid(GC[x || h]),
    /// c = tanh(GC[x || r*h]), h' = u*h + (1 - u)*c.
    pub fn step(&self, ctx: &GraphCtx, leaves: &[Var], x: &Var, h_prev: &Var) -> Result<Var> {
        let xh = Var::concat(&[x, h_prev], 1)?;
        let r = self.reset.forward(ctx, leaves, &xh)?.sigmoid();
        let u = self.update.forward(ctx, leaves, &xh)?.sigmoid();
        let xrh = Var::concat(&[x, &r.mul(h_prev)?], 1)?;
        let c = self.candidate.forward(ctx, leaves, &xrh)?.tanh();
        // u*h + (1 - u)*c, written as u*h + c - u*c
        u.mul(h_prev)?.add(&c)?.sub(&u.mul(&c)?)
    }
}

pub struct RnnParams {
    encoder: Vec<GcGruCell>,
    decoder: Vec<GcGruCell>,
    out_w: usize,
    out_b: usize,
}

impl RnnParams {
    pub fn new(spec: &ModelSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut encoder = Vec::with_capacity(spec.rnn_layers);
        let mut decoder = Vec::with_capacity(spec.rnn_layers);
        for layer in 0..spec.rnn_layers {
            let input_width = if layer == 0 { spec.d } else { spec.hidden };
            encoder.push(GcGruCell::new(
                store,
                rng,
                &format!("enc{layer}"),
                spec.conv,
                input_width,
                spec.hidden,
            )?);
            decoder.push(GcGruCell::new(
                store,
                rng,
                &format!("dec{layer}"),
                spec.conv,
                input_width,
                spec.hidden,
            )?);
        }
        Ok(RnnParams {
            encoder,
            decoder,
            out_w: store.register_uniform("out.w", &[spec.hidden, spec.d], spec.hidden, rng),
            out_b: store.register_zeros("out.b", &[1, spec.d]),
        })
    }

    pub fn forward(
        &self,
        spec: &ModelSpec,
        tape: &Tape,
        ctx: &GraphCtx,
        leaves: &[Var],
        input: &[Tensor],
        sample: &SampleCtx,
    ) -> Result<Vec<Var>> {
        let zero_h = Tensor::zeros(&[spec.n, spec.hidden]);
        let mut hidden: Vec<Var> = (0..spec.rnn_layers)
            .map(|_| tape.constant(zero_h.clone()))
            .collect();
        for frame in input {
            let mut x = tape.constant(frame.clone());
            for (layer, cell) in self.encoder.iter().enumerate() {
                hidden[layer] = cell.step(ctx, leaves, &x, &hidden[layer])?;
                x = hidden[layer].clone();
            }
        }
        let mut outputs = Vec::with_capacity(spec.q);
        let mut feedback = tape.constant(Tensor::zeros(&[spec.n, spec.d]));
        for step in 0..spec.q {
            let mut x = feedback.clone();
            for (layer, cell) in self.decoder.iter().enumerate() {
                hidden[layer] = cell.step(ctx, leaves, &x, &hidden[layer])?;
                x = hidden[layer].clone();
            }
            let pred = x.matmul(&leaves[self.out_w])?.add(&leaves[self.out_b])?;
            feedback = match sample.teacher {
                Some(teacher) => tape.constant(teacher[step].clone()),
                None => pred.clone(),
            };
            outputs.push(pred);
        }
        Ok(outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{AdjMatrix, GraphKind};
    use crate::ops::GraphCtx;
    use rand::{Rng, SeedableRng};

    fn cell_fixture(n: usize, d: usize, h: usize) -> (ParamStore, GcGruCell, AdjMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let cell =
            GcGruCell::new(&mut store, &mut rng, "cell", GraphConvKind::Gcn, d, h).unwrap();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    w[i * n + j] = 1.0;
                }
            }
        }
        let adj = AdjMatrix::new(n, w, GraphKind::Connectivity, false).unwrap();
        (store, cell, adj)
    }

    #[test]
    fn saturated_update_gate_carries_hidden_state() {
        let (mut store, cell, adj) = cell_fixture(3, 2, 4);
        // Saturate the update-gate bias so u -> 1 and H_t = H_prev.
        let bias_id = store
            .params()
            .iter()
            .position(|p| p.name == "cell.u.b")
            .unwrap();
        store.set_value(bias_id, Tensor::new(vec![1, 4], vec![60.0; 4]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::new(vec![3, 2], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let h_prev =
            Tensor::new(vec![3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let tape = Tape::new();
        let leaves = store.leaves(&tape);
        let ctx = GraphCtx::new(&tape, tape.constant(adj.to_tensor()), false);
        let h = cell
            .step(&ctx, &leaves, &tape.constant(x), &tape.constant(h_prev.clone()))
            .unwrap()
            .value();
        let drift: f64 = h
            .data()
            .iter()
            .zip(h_prev.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-12, "drift {drift}");
    }

    #[test]
    fn zero_graph_reduces_to_plain_gru() {
        let (store, cell, _) = cell_fixture(2, 1, 2);
        let adj = AdjMatrix::new(2, vec![0.0; 4], GraphKind::Connectivity, false).unwrap();
        let x = Tensor::new(vec![2, 1], vec![0.4, -0.3]).unwrap();
        let h_prev = Tensor::new(vec![2, 2], vec![0.1, -0.2, 0.5, 0.7]).unwrap();
        let tape = Tape::new();
        let leaves = store.leaves(&tape);
        let ctx = GraphCtx::new(&tape, tape.constant(adj.to_tensor()), false);
        let got = cell
            .step(&ctx, &leaves, &tape.constant(x.clone()), &tape.constant(h_prev.clone()))
            .unwrap()
            .value();

        // Plain GRU: gate(z) = z W + b with z = [x || h].
        let mat = |name: &str| {
            store
                .params()
                .iter()
                .find(|p| p.name == name)
                .unwrap()
                .value
                .clone()
        };
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        for node in 0..2 {
            let z = [x.at(node, 0), h_prev.at(node, 0), h_prev.at(node, 1)];
            let lin = |w: &Tensor, b: &Tensor, col: usize| {
                z.iter()
                    .enumerate()
                    .map(|(k, &v)| v * w.at(k, col))
                    .sum::<f64>()
                    + b.at(0, col)
            };
            let (wr, br) = (mat("cell.r.w"), mat("cell.r.b"));
            let (wu, bu) = (mat("cell.u.w"), mat("cell.u.b"));
            let (wc, bc) = (mat("cell.c.w"), mat("cell.c.b"));
            for col in 0..2 {
                let r = sigmoid(lin(&wr, &br, col));
                let u = sigmoid(lin(&wu, &bu, col));
                let zc = [
                    x.at(node, 0),
                    {
                        let r0 = sigmoid(lin(&wr, &br, 0));
                        r0 * h_prev.at(node, 0)
                    },
                    {
                        let r1 = sigmoid(lin(&wr, &br, 1));
                        r1 * h_prev.at(node, 1)
                    },
                ];
                let _ = r;
                let c = (zc
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| v * wc.at(k, col))
                    .sum::<f64>()
                    + bc.at(0, col))
                .tanh();
                let want = u * h_prev.at(node, col) + (1.0 - u) * c;
                assert!((got.at(node, col) - want).abs() < 1e-12);
            }
        }
    }
}
