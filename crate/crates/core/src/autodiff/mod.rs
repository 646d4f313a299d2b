//! Minimal reverse-mode autodiff over dense `f64` tensors, enough to train
//! small MLPs with Adam.

mod adam;
mod checkpoint;
mod graph;
mod mlp;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub(crate) use checkpoint::read_tensors;
pub use checkpoint::{decode_tensors, encode_tensors, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use graph::{sigmoid, Activation, Graph, Var};
pub use mlp::{BoundMlp, Layer, MlpParams};
pub use tensor::Tensor;
