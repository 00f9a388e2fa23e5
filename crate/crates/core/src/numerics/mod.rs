//! Dense differentiable linear algebra.

mod attention;
mod checkpoint;
mod gradcheck;
mod matrix;
mod optim;
mod params;
mod tape;

pub use attention::{
    attention, check_heads, AttentionTrace, LayerNorm, Linear, MultiHeadAttention, SelfAttentionLayer,
    SelfAttentionStack,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{
    central_difference, finite_difference_grad, max_relative_error, max_relative_error_above_noise, relative_error,
    roundoff_bound, DEFAULT_EPS,
};
pub use matrix::{cosine, dot, norm, order_invariant_sum, Matrix};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
