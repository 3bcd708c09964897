//! Minimal dense-tensor neural substrate: 64-bit tensors, a reverse-mode
//! tape, an adaptive-moment optimizer, layer builders, a finite-difference
//! gradient checker, and a bit-exact text checkpoint format.
//!
//! Everything is 64-bit and deterministic: forward evaluation is
//! referentially transparent, parameter init is seeded, and training steps
//! mutate a [`ParamStore`] sequentially.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod math;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_against, GradCheckReport};
pub use layers::{Activation, GruParams, GruRefs, Layer, Stack};
pub use params::{glorot, ParamStore, TrainConfig};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
