//! Layer forward passes and their hand-derived backward passes.
//!
//! All volumetric layers take `[N, C, T, H, W]` inputs.

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod loss;
mod pool;

pub use activation::{relu, relu_backward};
pub use batchnorm::{BatchNorm3d, BnCache, BnGrads, BN_EPS, BN_MOMENTUM};
pub use conv::{conv_output_extent, Conv3d, ConvGrads};
pub use linear::{Linear, LinearGrads};
pub use loss::{softmax, softmax_cross_entropy, LossOutput};
pub use pool::{global_avgpool, global_avgpool_backward, MaxPool3d, PoolCache};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) fn expect_rank5(op: &'static str, shape: &[usize]) -> Result<[usize; 5]> {
    <[usize; 5]>::try_from(shape)
        .map_err(|_| Error::invalid(format!("{op}: expected an [N,C,T,H,W] input, got {shape:?}")))
}
