use super::block::BlockParams;
use super::codec::{Encoder, MaskDecoder, PhaseDecoder};
use super::config::ModelConfig;

/// Trainable scalar count of a model built from `cfg`, in closed form.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    Encoder::param_count(cfg)
        + cfg.layers * BlockParams::param_count(cfg)
        + MaskDecoder::param_count(cfg)
        + PhaseDecoder::param_count(cfg)
}

/// Per-component breakdown, `(name, count)`.
pub fn parameter_breakdown(cfg: &ModelConfig) -> Vec<(&'static str, usize)> {
    vec![
        ("encoder", Encoder::param_count(cfg)),
        ("blocks", cfg.layers * BlockParams::param_count(cfg)),
        ("mask_decoder", MaskDecoder::param_count(cfg)),
        ("phase_decoder", PhaseDecoder::param_count(cfg)),
    ]
}
