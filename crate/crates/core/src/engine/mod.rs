//! Deterministic dense-tensor layer kernels: forward and backward passes
//! plus the SGD update.

pub mod activation;
pub mod border;
pub mod conv;
pub mod dense;
pub mod init;
pub mod loss;
pub mod pool;
pub mod sgd;

pub use activation::{relu_backward, relu_forward};
pub use border::PadCrop;
pub use conv::{
    conv2d_backward, conv2d_backward_naive, conv2d_forward, conv2d_forward_naive, output_side,
    ConvGrads, ConvLayerParams,
};
pub use dense::{fc_backward, fc_forward, flatten_backward, flatten_forward, FcGrads, FcLayerParams};
pub use init::{init_uniform, init_uniform_bound, mix_seed};
pub use loss::{argmax_rows, softmax_xent, softmax_xent_backward, SoftmaxXent};
pub use pool::{maxpool_backward, maxpool_forward};
pub use sgd::{sgd_step, SgdState};
