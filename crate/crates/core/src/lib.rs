//! Rectified activations (ReLU, leaky, parametric, randomized) and the
//! small convolutional-network stack needed to compare them: tensors,
//! layers, two reference architectures, dataset loaders and an SGD trainer.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod param;
pub mod rectifier;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use graph::{Layer, LayerDef, ModelSpec, Network};
pub use rectifier::{ActivationConfig, Mode};
pub use rng::RngStream;
pub use tensor::{Shape, Tensor};
