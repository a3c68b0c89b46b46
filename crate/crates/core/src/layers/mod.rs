//! Forward and backward kernels for every layer kind of the network.
//!
//! Each kernel is a free function over [`Tensor`](crate::tensor::Tensor)s;
//! whatever a backward pass needs from its forward pass (masks, switches,
//! inputs) is returned by the forward call and handed back explicitly.

mod conv;
mod dense;
mod dropout;
mod pool;
mod relu;
mod softmax;

pub use conv::{conv2d_backward_input, conv2d_backward_weights, conv2d_forward, conv_output_hw};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use dropout::{check_rate, dropout_backward, dropout_train};
pub use pool::{
    maxpool2_backward, maxpool2_forward, maxpool_output_hw, quadrantpool_backward, quadrantpool_forward,
    PoolSwitches,
};
pub use relu::{relu_backward, relu_forward};
pub use softmax::{softmax, softmax_xent, SoftmaxOutput};
