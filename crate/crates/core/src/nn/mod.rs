//! Dense tensors, reverse-mode differentiation and transformer blocks.

pub mod attention;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use attention::{
    attention_stack, cross_attention, cross_attention_block, AttentionBlockVars,
    AttentionBlockWeights,
};
pub use layers::{Activation, LinearVars, LinearWeights, MlpVars, MlpWeights};
pub use params::{Bound, ParamStore};
pub use tape::{BackwardCtx, BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;
