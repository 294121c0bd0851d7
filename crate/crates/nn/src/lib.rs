//! Eager tape-based reverse-mode autodiff over row-major `f64` buffers.
//!
//! A [`Tape`] is built fresh for every forward pass. Parameters live in a
//! [`ParamStore`] and are copied onto the tape on first use; after
//! [`Tape::backward`] their gradients are handed to [`Adam`].

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

mod error;

pub use error::{NnError, Result};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use loss::{contrastive_loss, cosine_sim, ContrastiveVariant};
pub use optim::{adam_step, Adam, AdamConfig, OptimState};
pub use params::{Init, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{EmbeddingBatch, Tensor};
