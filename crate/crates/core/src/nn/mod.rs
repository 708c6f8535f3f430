//! Dense layers, stacked GRU cells, masked categorical distributions and Adam,
//! with tape-based reverse-mode gradients.

mod dist;
mod layers;
mod params;
mod tape;

pub use dist::{argmax, categorical_logprob, categorical_sample, masked_softmax};
pub use layers::{GruStack, GruStackSpec, Mlp, MlpSpec};
pub use params::{AdamConfig, Gradients, ParamId, ParameterStore};
pub use tape::{log_softmax, Tape, Var};
