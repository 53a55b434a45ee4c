//! Minimal reverse-mode differentiable array engine.

pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
mod tape;
mod tensor;

pub use optim::{Adam, AdamConfig};
pub use params::{BoundParams, Checkpoint, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{argmax, Tensor};
