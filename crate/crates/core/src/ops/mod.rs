//! Differentiable layers other than the rectifiers.

pub mod concat;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod loss;
pub mod pool;
pub mod spp;

pub use concat::{concat_backward, concat_forward, split_backward, split_forward};
pub use conv::{conv_backward, conv_forward, Conv2d, ConvGrads, ConvSpec};
pub use dense::{dense_backward, dense_forward, Dense};
pub use dropout::{apply_mask, dropout_backward, dropout_forward, dropout_mask, Dropout, DropoutSpec};
pub use loss::{softmax, softmax_xent, softmax_xent_backward, LossOutput};
pub use pool::{pool_backward, pool_forward, Pool2d, PoolCache, PoolKind, PoolSpec};
pub use spp::{spp_backward, spp_forward, Spp, SppCache, SppSpec};
