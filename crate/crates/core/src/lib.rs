//! Spatial-temporal graph forecasting toolkit.
//!
//! Builds adjacency structure from data or priors ([`graph`]), runs
//! differentiable graph convolutions over it ([`ops`]), assembles them into
//! trainable forecast models ([`model`]), and wraps the whole thing in a
//! dataset pipeline ([`data`]) and a training/evaluation harness ([`train`]).
//! All numerics run on a small dense f64 tensor engine with reverse-mode
//! automatic differentiation ([`tensor`]).

pub mod data;
pub mod error;
pub mod graph;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use data::{MaskedMetrics, RawSeries, Scaler, SplitSpec, WindowedDataset};
pub use error::{Error, Result};
pub use graph::{AdjMatrix, GraphKind};
pub use model::{Archetype, GraphSourceSpec, Model, ModelSpec};
pub use ops::GraphConvKind;
pub use tensor::{Adam, ParamStore, Tape, Tensor, Var};
pub use train::{RunRecord, TrainConfig};
