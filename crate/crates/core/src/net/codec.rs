//! Feature encoder and the two decoders.

use rand::Rng;

use super::config::ModelConfig;
use super::layers::{Conv2dLayer, ConvBlock, DenseBlock, NormAct};
use crate::error::{Error, Result};
use crate::tensor::{Conv2dGeometry, Graph, ParamId, ParamStore, Var};

fn halve() -> Conv2dGeometry {
    Conv2dGeometry::default().with_stride(1, 2)
}

/// `[M, 2, T, F] -> [M, K, T, F']`: 1x1 conv block, dense block, then a
/// 1x3 conv block with frequency stride 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub input: ConvBlock,
    pub dense: DenseBlock,
    pub down: ConvBlock,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let k = cfg.channels;
        let input = ConvBlock {
            conv: Conv2dLayer::new(store, "enc.in", 2, k, (1, 1), Conv2dGeometry::default(), rng),
            act: NormAct::new(store, "enc.in", k),
        };
        let dense = DenseBlock::new(store, "enc.dense", k, cfg.dense_depth, rng);
        let down = ConvBlock {
            conv: Conv2dLayer::new(store, "enc.down", k, k, (1, 3), halve(), rng),
            act: NormAct::new(store, "enc.down", k),
        };
        Self { input, dense, down }
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let k = cfg.channels;
        (2 * k + k + 3 * k) + DenseBlock::param_count(k, cfg.dense_depth) + (3 * k * k + k + 3 * k)
    }

    /// Encode compressed magnitude and phase, both `[M, T, F]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mag_c: Var, phase: Var) -> Result<Var> {
        let s = g.shape(mag_c).to_vec();
        if s.len() != 3 || g.shape(phase) != s.as_slice() {
            return Err(Error::shape(
                "feature_encode",
                format!("magnitude {s:?} and phase {:?} must both be [M, T, F]", g.shape(phase)),
            ));
        }
        if s[2] < 3 {
            return Err(Error::shape("feature_encode", format!("need F >= 3 frequency bins, got {}", s[2])));
        }
        let four = [s[0], 1, s[1], s[2]];
        let m = g.reshape(mag_c, &four)?;
        let p = g.reshape(phase, &four)?;
        let x = g.concat(&[m, p], 1)?;
        let x = self.input.forward(g, store, x)?;
        let x = self.dense.forward(g, store, x)?;
        self.down.forward(g, store, x)
    }
}

/// Dense block, 1x3 transposed conv with frequency stride 2, instance norm, PReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderTrunk {
    pub dense: DenseBlock,
    pub up: ConvBlock,
}

impl DecoderTrunk {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut R) -> Self {
        let k = cfg.channels;
        let dense = DenseBlock::new(store, &format!("{name}.dense"), k, cfg.dense_depth, rng);
        let up = ConvBlock {
            conv: Conv2dLayer::transposed(store, &format!("{name}.up"), k, k, (1, 3), halve(), rng),
            act: NormAct::new(store, &format!("{name}.up"), k),
        };
        Self { dense, up }
    }

    fn param_count(cfg: &ModelConfig) -> usize {
        let k = cfg.channels;
        DenseBlock::param_count(k, cfg.dense_depth) + 3 * k * k + k + 3 * k
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, freq_bins: usize) -> Result<Var> {
        let y = self.dense.forward(g, store, x)?;
        let y = self.up.forward(g, store, y)?;
        let f = g.shape(y)[3];
        if f != freq_bins {
            return Err(Error::shape(
                "decoder",
                format!("transposed conv restored F = {f}, expected {freq_bins}"),
            ));
        }
        Ok(y)
    }
}

/// Compressed-domain mask `beta * sigmoid(alpha_f * z)`, `[M, T, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskDecoder {
    pub trunk: DecoderTrunk,
    pub squeeze: ConvBlock,
    pub out: Conv2dLayer,
    /// Per-frequency slope of the learnable sigmoid.
    pub alpha: ParamId,
    pub beta: f64,
}

impl MaskDecoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let k = cfg.channels;
        let trunk = DecoderTrunk::new(store, "mask", cfg, rng);
        let squeeze = ConvBlock {
            conv: Conv2dLayer::new(store, "mask.squeeze", k, 1, (1, 1), Conv2dGeometry::default(), rng),
            act: NormAct::new(store, "mask.squeeze", 1),
        };
        let out = Conv2dLayer::new(store, "mask.out", 1, 1, (1, 1), Conv2dGeometry::default(), rng);
        let alpha = store.add_full("mask.alpha", &[cfg.freq_bins()], 1.0);
        Self {
            trunk,
            squeeze,
            out,
            alpha,
            beta: cfg.sigmoid_beta,
        }
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        DecoderTrunk::param_count(cfg) + (cfg.channels + 1 + 3) + 2 + cfg.freq_bins()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, freq_bins: usize) -> Result<Var> {
        let y = self.trunk.forward(g, store, x, freq_bins)?;
        let y = self.squeeze.forward(g, store, y)?;
        let y = self.out.forward(g, store, y)?;
        let s = g.shape(y).to_vec();
        let y = g.reshape(y, &[s[0], s[2], s[3]])?;
        let alpha = g.param(store, self.alpha);
        let y = g.mul(y, alpha)?;
        let y = g.sigmoid(y)?;
        g.scale(y, self.beta)
    }
}

/// Wrapped phase `atan2(I, R)` from two parallel 1x1 convolutions, `[M, T, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDecoder {
    pub trunk: DecoderTrunk,
    pub real: Conv2dLayer,
    pub imag: Conv2dLayer,
}

impl PhaseDecoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let k = cfg.channels;
        let trunk = DecoderTrunk::new(store, "phase", cfg, rng);
        let real = Conv2dLayer::new(store, "phase.real", k, 1, (1, 1), Conv2dGeometry::default(), rng);
        let imag = Conv2dLayer::new(store, "phase.imag", k, 1, (1, 1), Conv2dGeometry::default(), rng);
        Self { trunk, real, imag }
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        DecoderTrunk::param_count(cfg) + 2 * (cfg.channels + 1)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, freq_bins: usize) -> Result<Var> {
        let y = self.trunk.forward(g, store, x, freq_bins)?;
        let r = self.real.forward(g, store, y)?;
        let i = self.imag.forward(g, store, y)?;
        let s = g.shape(r).to_vec();
        let r = g.reshape(r, &[s[0], s[2], s[3]])?;
        let i = g.reshape(i, &[s[0], s[2], s[3]])?;
        g.atan2(i, r)
    }
}
