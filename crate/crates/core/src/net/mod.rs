//! The enhancement network: encoder, dual-path blocks, mask and phase
//! decoders, parameter counting and checkpoints.

mod block;
mod checkpoint;
mod codec;
mod config;
mod count;
mod layers;
mod model;

pub use block::{AttentionSite, BlockParams, LayerNormParams, PathParams};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use codec::{DecoderTrunk, Encoder, MaskDecoder, PhaseDecoder};
pub use config::{ModelConfig, Variant};
pub use count::{count_parameters, parameter_breakdown};
pub use layers::{Conv2dLayer, ConvBlock, DenseBlock, NormAct};
pub use model::{batch_features, ForwardOutput, Model};
