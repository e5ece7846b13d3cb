//! Small differentiable building blocks: rectified MLPs, set encoders,
//! pooling, likelihood losses and an adaptive-moment optimiser.

mod adam;
mod encoder;
mod mlp;
mod ops;
mod params;

pub use adam::Adam;
pub use encoder::{EncoderNet, EncoderShape, EncoderTape, InputGrad, NetInput};
pub use mlp::{Linear, Mlp, MlpTape};
pub use ops::{
    bce, clamped_sigmoid, log_clamped_sigmoid, log_softmax, log_softmax_masked, maxpool_set, segment_maxpool,
    segment_maxpool_backward, sigmoid, softmax_nll, softmax_nll_masked, SetBatch, PROB_FLOOR,
};
pub use params::{export, import, ParamMap, Parameters, Tensor};
