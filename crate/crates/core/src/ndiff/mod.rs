//! Dense `f64` tensors with tape-based reverse-mode differentiation and the
//! neural layers the model is assembled from.

mod gat;
pub mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;
mod transformer;

pub use gat::{EdgeIndex, GatLayer, GatOutput};
pub use layers::{LayerNorm, Linear, Mlp};
pub use params::{ParamId, ParamStore, Rng, Session, CHECKPOINT_MAGIC};
pub use tape::{sigmoid, Gradients, Tape, Unary, Var};
pub use tensor::Tensor;
pub use transformer::{EncodeOutput, TokenBatch, TransformerConfig, TransformerEncoder, UNK_ID};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data of length {len} does not fill shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("segment {0} is empty")]
    EmptySegment(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
