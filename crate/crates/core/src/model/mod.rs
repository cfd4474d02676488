//! Trainable forecast models: a graph-convolutional GRU encoder-decoder, a
//! gated temporal-convolution stack, and a temporal self-attention stack,
//! each over a fixed, adaptive or sampled graph source.

mod attention;
mod gcgru;
mod stconv;

pub use gcgru::GcGruCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    adaptive_attention_var, adaptive_direct_var, adaptive_directed_var, adaptive_undirected_var,
    adaptive_unidirected_var, gumbel_adjacency_var, AdaptiveVariant, AdjMatrix,
};
use crate::ops::{GraphConvKind, GraphCtx, HopAggregation};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

/// Temporal modeling family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Rnn,
    Cnn,
    Attention,
}

impl std::str::FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rnn" => Archetype::Rnn,
            "cnn" => Archetype::Cnn,
            "attention" => Archetype::Attention,
            other => return Err(Error::Config(format!("unknown archetype '{other}'"))),
        })
    }
}

impl Archetype {
    pub fn name(&self) -> &'static str {
        match self {
            Archetype::Rnn => "rnn",
            Archetype::Cnn => "cnn",
            Archetype::Attention => "attention",
        }
    }
}

/// Where the adjacency feeding the convolutions comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphSourceSpec {
    /// The externally supplied adjacency, held constant.
    Fixed,
    /// Trainable node embeddings re-evaluated every forward pass.
    Adaptive {
        variant: AdaptiveVariant,
        dim: usize,
        alpha: f64,
    },
    /// Trainable edge logits sampled through Gumbel noise every pass.
    Sampled { temperature: f64 },
}

impl GraphSourceSpec {
    /// Whether the produced adjacency is symmetric.
    fn undirected_for(&self, adj: &AdjMatrix) -> bool {
        match self {
            GraphSourceSpec::Fixed => !adj.directed(),
            GraphSourceSpec::Adaptive { variant, .. } => variant.is_symmetric(),
            GraphSourceSpec::Sampled { .. } => false,
        }
    }

    pub fn is_trainable(&self) -> bool {
        !matches!(self, GraphSourceSpec::Fixed)
    }

    pub fn name(&self) -> String {
        match self {
            GraphSourceSpec::Fixed => "fixed".into(),
            GraphSourceSpec::Adaptive { variant, .. } => {
                format!("adaptive-{}", match variant {
                    AdaptiveVariant::Direct => "direct",
                    AdaptiveVariant::Undirected => "undirected",
                    AdaptiveVariant::Directed => "directed",
                    AdaptiveVariant::Unidirected => "unidirected",
                    AdaptiveVariant::Attention => "attention",
                })
            }
            GraphSourceSpec::Sampled { .. } => "sampled".into(),
        }
    }
}

/// Complete structural description of one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub archetype: Archetype,
    pub conv: GraphConvKind,
    pub graph_source: GraphSourceSpec,
    pub hidden: usize,
    /// Stacked recurrent layers (rnn).
    pub rnn_layers: usize,
    /// Temporal kernel size (cnn).
    pub kernel: usize,
    /// Per-block dilation factors (cnn).
    pub dilations: Vec<usize>,
    /// Attention block count.
    pub attn_blocks: usize,
    /// Attention heads.
    pub heads: usize,
    /// Additive sinusoidal position information (attention archetype).
    pub positional_encoding: bool,
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub d: usize,
}

impl ModelSpec {
    /// A small speed-oriented default; callers override what they need.
    pub fn default_for(archetype: Archetype, n: usize, d: usize, p: usize, q: usize) -> Self {
        ModelSpec {
            archetype,
            conv: GraphConvKind::Gcn,
            graph_source: GraphSourceSpec::Fixed,
            hidden: 32,
            rnn_layers: 1,
            kernel: 2,
            dilations: vec![1, 2, 4, 8],
            attn_blocks: 2,
            heads: 4,
            positional_encoding: true,
            p,
            q,
            n,
            d,
        }
    }

    /// Receptive field of the dilated temporal stack.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|d| (self.kernel - 1) * d)
            .sum::<usize>()
    }

    /// Smallest number of doubling blocks whose receptive field covers `p`.
    fn required_blocks(&self) -> usize {
        let mut blocks = 1;
        loop {
            let rf = 1 + (self.kernel - 1) * ((1 << blocks) - 1);
            if rf >= self.p {
                return blocks;
            }
            blocks += 1;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 1 || self.q < 1 {
            return Err(Error::Config("P and Q must be >= 1".into()));
        }
        if self.n < 1 || self.d < 1 || self.hidden < 1 {
            return Err(Error::Config("n, d and hidden must be >= 1".into()));
        }
        match self.archetype {
            Archetype::Rnn => {
                if self.rnn_layers < 1 {
                    return Err(Error::Config("rnn needs at least one layer".into()));
                }
            }
            Archetype::Cnn => {
                if self.dilations.is_empty() {
                    return Err(Error::Config("cnn needs a nonempty dilation list".into()));
                }
                if self.kernel < 2 {
                    return Err(Error::Config("temporal kernel must be >= 2".into()));
                }
                let rf = self.receptive_field();
                if rf < self.p {
                    return Err(Error::Config(format!(
                        "receptive field {rf} < window {}; need at least {} doubling blocks (e.g. dilations 1,2,4,...)",
                        self.p,
                        self.required_blocks()
                    )));
                }
            }
            Archetype::Attention => {
                if self.attn_blocks < 1 {
                    return Err(Error::Config("attention needs at least one block".into()));
                }
                if self.heads < 1 || self.hidden % self.heads != 0 {
                    return Err(Error::Config(format!(
                        "head count {} must divide model width {}",
                        self.heads, self.hidden
                    )));
                }
            }
        }
        if let GraphSourceSpec::Adaptive { dim, alpha, .. } = self.graph_source {
            if dim < 1 {
                return Err(Error::Config("embedding dimension must be >= 1".into()));
            }
            if alpha <= 0.0 {
                return Err(Error::Config("saturation alpha must be positive".into()));
            }
        }
        if let GraphSourceSpec::Sampled { temperature } = self.graph_source {
            if temperature <= 0.0 {
                return Err(Error::Config("temperature must be positive".into()));
            }
        }
        if let GraphConvKind::MultiHop { beta, .. } = self.conv {
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::Config(format!(
                    "multi-hop beta must lie in [0, 1], got {beta}"
                )));
            }
        }
        Ok(())
    }
}

enum GraphSourceParams {
    Fixed,
    AdaptiveSingle {
        variant: AdaptiveVariant,
        e: usize,
        alpha: f64,
    },
    AdaptivePair {
        variant: AdaptiveVariant,
        e1: usize,
        e2: usize,
        alpha: f64,
    },
    AdaptiveAttention {
        e: usize,
        w1: usize,
        w2: usize,
    },
    Sampled {
        logits: usize,
        temperature: f64,
    },
}

enum ArchParams {
    Rnn(gcgru::RnnParams),
    Cnn(stconv::CnnParams),
    Attention(attention::AttnParams),
}

/// Per-sample forward context: the seed for any stochastic graph draw and
/// optional teacher frames for the decoder.
pub struct SampleCtx<'a> {
    pub gumbel_seed: u64,
    pub teacher: Option<&'a [Tensor]>,
}

impl Default for SampleCtx<'_> {
    fn default() -> Self {
        SampleCtx {
            gumbel_seed: 0,
            teacher: None,
        }
    }
}

/// A constructed model: parameters plus the adjacency it was built against.
pub struct Model {
    spec: ModelSpec,
    store: ParamStore,
    graph: GraphSourceParams,
    arch: ArchParams,
    adjacency: AdjMatrix,
}

impl Model {
    /// Build and initialize a model (weights uniform in ±1/√fan_in, biases
    /// zero, seed-controlled).
    pub fn new(spec: ModelSpec, adj: &AdjMatrix, init_seed: u64) -> Result<Model> {
        spec.validate()?;
        if adj.n() != spec.n {
            return Err(Error::Config(format!(
                "adjacency has {} nodes, spec declares {}",
                adj.n(),
                spec.n
            )));
        }
        if spec.conv.requires_undirected() && !spec.graph_source.undirected_for(adj) {
            return Err(Error::Config(format!(
                "{} needs an undirected graph; source '{}' is directed",
                spec.conv.name(),
                spec.graph_source.name()
            )));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let graph = match spec.graph_source {
            GraphSourceSpec::Fixed => GraphSourceParams::Fixed,
            GraphSourceSpec::Adaptive {
                variant,
                dim,
                alpha,
            } => match variant {
                AdaptiveVariant::Direct => GraphSourceParams::AdaptiveSingle {
                    variant,
                    e: store.register_uniform("graph.w", &[spec.n, spec.n], spec.n, &mut rng),
                    alpha,
                },
                AdaptiveVariant::Undirected => GraphSourceParams::AdaptiveSingle {
                    variant,
                    e: store.register_uniform("graph.e", &[spec.n, dim], dim, &mut rng),
                    alpha,
                },
                AdaptiveVariant::Directed | AdaptiveVariant::Unidirected => {
                    GraphSourceParams::AdaptivePair {
                        variant,
                        e1: store.register_uniform("graph.e1", &[spec.n, dim], dim, &mut rng),
                        e2: store.register_uniform("graph.e2", &[spec.n, dim], dim, &mut rng),
                        alpha,
                    }
                }
                AdaptiveVariant::Attention => GraphSourceParams::AdaptiveAttention {
                    e: store.register_uniform("graph.e", &[spec.n, dim], dim, &mut rng),
                    w1: store.register_uniform(
                        "graph.w1",
                        &[spec.d + dim, dim],
                        spec.d + dim,
                        &mut rng,
                    ),
                    w2: store.register_uniform(
                        "graph.w2",
                        &[spec.d + dim, dim],
                        spec.d + dim,
                        &mut rng,
                    ),
                },
            },
            GraphSourceSpec::Sampled { temperature } => {
                let init = Tensor::from_raw(
                    vec![spec.n, spec.n],
                    (0..spec.n * spec.n)
                        .map(|_| rng.gen_range(-0.1..0.1))
                        .collect(),
                );
                GraphSourceParams::Sampled {
                    logits: store.register("graph.logits", init),
                    temperature,
                }
            }
        };
        let arch = match spec.archetype {
            Archetype::Rnn => ArchParams::Rnn(gcgru::RnnParams::new(&spec, &mut store, &mut rng)?),
            Archetype::Cnn => ArchParams::Cnn(stconv::CnnParams::new(&spec, &mut store, &mut rng)?),
            Archetype::Attention => {
                ArchParams::Attention(attention::AttnParams::new(&spec, &mut store, &mut rng)?)
            }
        };
        Ok(Model {
            spec,
            store,
            graph,
            arch,
            adjacency: adj.clone(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn adjacency(&self) -> &AdjMatrix {
        &self.adjacency
    }

    /// Exact count of scalar learnables.
    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Evaluate the graph source on the tape. Trainable sources re-enter the
    /// gradient flow here on every pass.
    pub fn graph_var(
        &self,
        tape: &Tape,
        leaves: &[Var],
        input: &[Tensor],
        gumbel_seed: u64,
    ) -> Result<Var> {
        match &self.graph {
            GraphSourceParams::Fixed => Ok(tape.constant(self.adjacency.to_tensor())),
            GraphSourceParams::AdaptiveSingle { variant, e, alpha } => match variant {
                AdaptiveVariant::Direct => Ok(adaptive_direct_var(&leaves[*e])),
                _ => adaptive_undirected_var(&leaves[*e], *alpha),
            },
            GraphSourceParams::AdaptivePair {
                variant,
                e1,
                e2,
                alpha,
            } => match variant {
                AdaptiveVariant::Unidirected => {
                    adaptive_unidirected_var(&leaves[*e1], &leaves[*e2], *alpha)
                }
                _ => adaptive_directed_var(&leaves[*e1], &leaves[*e2], *alpha),
            },
            GraphSourceParams::AdaptiveAttention { e, w1, w2 } => {
                let mut mean = Tensor::zeros(&[self.spec.n, self.spec.d]);
                for frame in input {
                    mean.add_assign(frame);
                }
                let mean = mean.map(|v| v / input.len() as f64);
                adaptive_attention_var(
                    &tape.constant(mean),
                    &leaves[*e],
                    &leaves[*w1],
                    &leaves[*w2],
                )
            }
            GraphSourceParams::Sampled {
                logits,
                temperature,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(gumbel_seed);
                gumbel_adjacency_var(tape, &leaves[*logits], *temperature, &mut rng)
            }
        }
    }

    /// Squared Frobenius deviation of the trainable graph from a prior;
    /// `None` when the source is fixed. Sampled sources compare their mean
    /// adjacency sigmoid(logits) rather than a noisy draw.
    pub fn graph_deviation_var(
        &self,
        tape: &Tape,
        leaves: &[Var],
        prior: &Tensor,
    ) -> Result<Option<Var>> {
        let mean_graph = match &self.graph {
            GraphSourceParams::Fixed => return Ok(None),
            GraphSourceParams::Sampled { logits, .. } => leaves[*logits].sigmoid(),
            _ => self.graph_var(tape, leaves, &[], 0)?,
        };
        let diff = mean_graph.sub(&tape.constant(prior.clone()))?;
        Ok(Some(diff.mul(&diff)?.reduce_sum(None)?))
    }

    /// Run one window through the network: `input` holds P scaled `[n, d]`
    /// frames, the result holds Q predicted scaled frames.
    pub fn forward(
        &self,
        tape: &Tape,
        leaves: &[Var],
        input: &[Tensor],
        sample: &SampleCtx,
    ) -> Result<Vec<Var>> {
        if input.len() != self.spec.p {
            return Err(Error::shape(
                "forward",
                format!("{} input frames, expected {}", input.len(), self.spec.p),
            ));
        }
        for frame in input {
            if frame.shape() != [self.spec.n, self.spec.d] {
                return Err(Error::shape(
                    "forward",
                    format!(
                        "frame shape {:?}, expected [{}, {}]",
                        frame.shape(),
                        self.spec.n,
                        self.spec.d
                    ),
                ));
            }
        }
        let a = self.graph_var(tape, leaves, input, sample.gumbel_seed)?;
        let undirected = self.spec.graph_source.undirected_for(&self.adjacency);
        let ctx = GraphCtx::new(tape, a, !undirected);
        match &self.arch {
            ArchParams::Rnn(p) => p.forward(&self.spec, tape, &ctx, leaves, input, sample),
            ArchParams::Cnn(p) => p.forward(&self.spec, tape, &ctx, leaves, input),
            ArchParams::Attention(p) => p.forward(&self.spec, tape, &ctx, leaves, input),
        }
    }

    /// Value-only forecast on a fresh tape.
    pub fn forecast(&self, input: &[Tensor], gumbel_seed: u64) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let leaves = self.store.leaves(&tape);
        let sample = SampleCtx {
            gumbel_seed,
            teacher: None,
        };
        let out = self.forward(&tape, &leaves, input, &sample)?;
        Ok(out.into_iter().map(|v| v.value()).collect())
    }
}

/// Exact scalar learnable count for a spec (graph-source parameters
/// included), independent of any concrete adjacency.
pub fn count_parameters(spec: &ModelSpec) -> Result<usize> {
    let placeholder = AdjMatrix::new(
        spec.n,
        vec![0.0; spec.n * spec.n],
        crate::graph::GraphKind::Connectivity,
        false,
    )?;
    Ok(Model::new(spec.clone(), &placeholder, 0)?.param_count())
}

/// Default multi-hop aggregation used when a config does not choose one.
pub fn default_hop_aggregation() -> HopAggregation {
    HopAggregation::Linear
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphKind;

    fn ring(n: usize) -> AdjMatrix {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            let j = (i + 1) % n;
            w[i * n + j] = 1.0;
            w[j * n + i] = 1.0;
        }
        AdjMatrix::new(n, w, GraphKind::Connectivity, false).unwrap()
    }

    fn frames(n: usize, d: usize, p: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..p)
            .map(|_| {
                Tensor::from_raw(
                    vec![n, d],
                    (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn all_archetypes_emit_q_frames() {
        let adj = ring(5);
        for archetype in [Archetype::Rnn, Archetype::Cnn, Archetype::Attention] {
            let mut spec = ModelSpec::default_for(archetype, 5, 2, 6, 4);
            spec.hidden = 8;
            spec.dilations = vec![1, 2, 4];
            spec.heads = 2;
            let model = Model::new(spec, &adj, 3).unwrap();
            let out = model.forecast(&frames(5, 2, 6, 1), 0).unwrap();
            assert_eq!(out.len(), 4);
            for frame in &out {
                assert_eq!(frame.shape(), &[5, 2]);
            }
        }
    }

    #[test]
    fn fixed_seed_gives_identical_forecasts() {
        let adj = ring(4);
        let spec = ModelSpec {
            hidden: 6,
            ..ModelSpec::default_for(Archetype::Rnn, 4, 1, 4, 3)
        };
        let a = Model::new(spec.clone(), &adj, 7).unwrap();
        let b = Model::new(spec, &adj, 7).unwrap();
        let x = frames(4, 1, 4, 2);
        assert_eq!(a.forecast(&x, 0).unwrap(), b.forecast(&x, 0).unwrap());
    }

    #[test]
    fn zeroed_parameters_predict_zero() {
        let adj = ring(4);
        for archetype in [Archetype::Rnn, Archetype::Cnn, Archetype::Attention] {
            let mut spec = ModelSpec::default_for(archetype, 4, 1, 4, 3);
            spec.hidden = 8;
            spec.dilations = vec![1, 2];
            spec.heads = 2;
            let mut model = Model::new(spec, &adj, 1).unwrap();
            for i in 0..model.store().len() {
                let shape = model.store().value(i).shape().to_vec();
                model.store_mut().set_value(i, Tensor::zeros(&shape));
            }
            let out = model.forecast(&frames(4, 1, 4, 5), 0).unwrap();
            for frame in out {
                assert!(frame.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn receptive_field_formula() {
        let mut spec = ModelSpec::default_for(Archetype::Cnn, 4, 1, 8, 2);
        spec.kernel = 2;
        spec.dilations = vec![1, 2, 4];
        assert_eq!(spec.receptive_field(), 8);
        assert!(spec.validate().is_ok());
        spec.p = 9;
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("blocks"), "{err}");
    }

    #[test]
    fn head_width_must_divide_model_width() {
        let mut spec = ModelSpec::default_for(Archetype::Attention, 4, 1, 4, 2);
        spec.hidden = 10;
        spec.heads = 4;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn directed_source_rejected_for_spectral_convs() {
        let mut spec = ModelSpec::default_for(Archetype::Rnn, 4, 1, 4, 2);
        spec.graph_source = GraphSourceSpec::Sampled { temperature: 0.5 };
        assert!(matches!(
            Model::new(spec, &ring(4), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn adaptive_undirected_source_adds_embedding_params() {
        let base = ModelSpec {
            hidden: 8,
            ..ModelSpec::default_for(Archetype::Rnn, 6, 1, 4, 2)
        };
        let fixed = count_parameters(&base).unwrap();
        let adaptive = count_parameters(&ModelSpec {
            graph_source: GraphSourceSpec::Adaptive {
                variant: AdaptiveVariant::Undirected,
                dim: 10,
                alpha: 3.0,
            },
            ..base
        })
        .unwrap();
        assert_eq!(adaptive - fixed, 6 * 10);
    }

    #[test]
    fn gcn_gate_parameter_count_is_exact() {
        // Per GCN gate: (d + h) x h weights plus h biases; three gates per
        // cell, encoder and decoder cells, plus the d x (h + 1) output head.
        let spec = ModelSpec {
            hidden: 16,
            ..ModelSpec::default_for(Archetype::Rnn, 5, 1, 4, 2)
        };
        let (d, h) = (1, 16);
        let gate = (d + h) * h + h;
        let expected = 6 * gate + h * d + d;
        assert_eq!(count_parameters(&spec).unwrap(), expected);
    }

    #[test]
    fn doubling_hidden_width_nearly_quadruples_gate_params() {
        // With the input concatenated into every gate the exact ratio is
        // 2(d + 2h + 1)/(d + h + 1) < 4, approaching 4 as h grows.
        let count_gates = |h: usize| {
            let spec = ModelSpec {
                hidden: h,
                ..ModelSpec::default_for(Archetype::Rnn, 5, 1, 4, 2)
            };
            let total = count_parameters(&spec).unwrap();
            total - (h * 1 + 1) // drop the output head
        };
        let small = count_gates(128);
        let big = count_gates(256);
        let ratio = big as f64 / small as f64;
        assert!(ratio > 3.9 && ratio < 4.0, "ratio {ratio}");
    }
}
