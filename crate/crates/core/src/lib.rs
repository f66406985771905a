//! Adversarial-training engine for spiking networks built from scratch:
//! a reverse-mode tape with a surrogate-gradient spike node, leaky
//! integrate-and-fire dynamics unrolled through time, sign-gradient attacks
//! against whole-network and per-timestep objectives, the temporal
//! self-ensemble training loss with AT/TRADES baselines, and the
//! cross-timestep transferability analysis that motivates it.

pub mod analysis;
pub mod attacks;
pub mod data;
pub mod error;
pub mod objectives;
pub mod rng;
pub mod snn;
pub mod surrogate;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
