//! Minimal differentiable building blocks for the actor and critic.

mod encoder;
mod params;
mod tape;

pub use encoder::{
    encode_features, EmbeddingEncoder, SequenceEncoder, TransformerConfig, TransformerEncoder,
};
pub use params::{uniform, xavier, Adam, AdamConfig, Grads, Matrix, ParamId, ParamStore};
pub use tape::{Tape, Var, LAYER_NORM_EPS};
