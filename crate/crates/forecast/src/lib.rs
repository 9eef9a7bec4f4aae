//! Desk-scale transformer forecaster over token sequences.
//!
//! The encoder is trained with a small reverse-mode tape in double
//! precision. Positional information enters through a learned rank table,
//! rotary attention with a fixed or per-layer learnable base, or both.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod input;
pub mod model;
pub mod optim;
pub mod revin;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Phase, TokenWindow};
pub use train::{train, TrainConfig, TrainOutcome, TrainState};
