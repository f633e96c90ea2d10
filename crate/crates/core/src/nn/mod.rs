//! A small deterministic tensor engine: causal masked 3D convolutions with
//! 64-bit accumulation, elementwise ops, the occupancy loss, Adam, and the
//! portable weight format.

mod adam;
pub(crate) mod conv;
mod mask;
mod ops;
mod tensor;
mod weights;

pub use adam::Adam;
pub use conv::{ConvGrads, MaskedConv3d};
pub use mask::{MaskKind, MaskSpec};
pub use ops::{
    add_residual, cross_entropy_bits, occupancy_loss, relu, relu_backward, softmax2,
    softmax2_pair, EPSILON,
};
pub use tensor::{Region, Tensor};
pub use weights::{fnv1a64, LayerWeights, ModelWeights};
