//! Differentiable layers and the assembled classifier. Forward and backward
//! passes are analytic; [`gradcheck`] validates every one of them against
//! central finite differences.

pub mod conv;
pub mod gat;
pub mod gradcheck;
pub mod gru;
pub mod layers;
pub mod math;
pub mod model;

pub use conv::{conv1d_backward, conv1d_forward, ConvLayer};
pub use gat::{gat_forward, Attention, GatLayer};
pub use gru::{gru_sequence, gru_step, GruLayer};
pub use layers::{dense_sigmoid, dropout, mean_pool};
pub use math::Mat;
pub use model::{
    array_specs, backward, forward, forward_backward_batch, forward_explain, predict,
    DenseLayer, Explanation, ForwardPass, Mode, ModelConfig, ModelParams,
};
