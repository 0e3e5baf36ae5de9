//! Single-channel speech enhancement with a dual-path network of
//! bidirectional selective state-space layers and time/frequency multi-head
//! attention, on top of a small reverse-mode autodiff engine.

pub mod attention;
pub mod bench;
pub mod datagen;
pub mod dsp;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod parallel;
pub mod runtime;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, ParamId, ParamStore, Tensor, Var};
