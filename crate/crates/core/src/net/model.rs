use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::block::BlockParams;
use super::codec::{Encoder, MaskDecoder, PhaseDecoder};
use super::config::ModelConfig;
use crate::dsp::{stft, GraphStft};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Handles produced by one forward pass, all batched over `M` signals.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Enhanced waveform `[M, len]`.
    pub wave: Var,
    /// Enhanced magnitude `[M, T, F]`.
    pub mag: Var,
    /// Enhanced compressed magnitude `[M, T, F]`.
    pub mag_c: Var,
    /// Enhanced wrapped phase `[M, T, F]`.
    pub phase: Var,
    /// Compressed-domain mask `[M, T, F]`.
    pub mask: Var,
    /// Real and imaginary parts of the enhanced compressed spectrum.
    pub re_c: Var,
    pub im_c: Var,
    /// Noisy input features (constants).
    pub noisy_mag_c: Var,
    pub noisy_phase: Var,
}

/// Compressed magnitude and phase of a batch of signals, each `[M, T, F]`.
pub fn batch_features(cfg: &ModelConfig, signals: &Tensor) -> Result<(Tensor, Tensor)> {
    let [m, len] = *signals.shape() else {
        return Err(Error::shape("features", format!("expected [M, len], got {:?}", signals.shape())));
    };
    let mut mags = Vec::new();
    let mut phases = Vec::new();
    let mut t = 0;
    for row in signals.data().chunks(len.max(1)).take(m) {
        let s = stft(row, &cfg.stft)?;
        t = s.n_frames();
        mags.extend(s.magnitude.data().iter().map(|v| v.powf(cfg.compression)));
        phases.extend_from_slice(s.phase.data());
    }
    let shape = vec![m, t, cfg.freq_bins()];
    Ok((Tensor::new(shape.clone(), mags)?, Tensor::new(shape, phases)?))
}

/// The full enhancement network and its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub blocks: Vec<BlockParams>,
    pub mask: MaskDecoder,
    pub phase: PhaseDecoder,
    stft: GraphStft,
}

impl Model {
    /// Fresh model with fan-in uniform initialisation drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config, &mut rng);
        let blocks = (0..config.layers)
            .map(|i| BlockParams::new(&mut store, &format!("block{i}"), &config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mask = MaskDecoder::new(&mut store, &config, &mut rng);
        let phase = PhaseDecoder::new(&mut store, &config, &mut rng);
        Ok(Self {
            stft: GraphStft::new(config.stft)?,
            config,
            store,
            encoder,
            blocks,
            mask,
            phase,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn graph_stft(&self) -> &GraphStft {
        &self.stft
    }

    /// Latent grid `[M, K, T, F']` after the encoder and all blocks.
    pub fn encode(&self, g: &mut Graph, mag_c: Var, phase: Var) -> Result<Var> {
        let mut z = self.encoder.forward(g, &self.store, mag_c, phase)?;
        for b in &self.blocks {
            z = b.forward(g, &self.store, z)?;
        }
        Ok(z)
    }

    /// Enhance a batch `noisy: [M, len]`.
    pub fn forward(&self, g: &mut Graph, noisy: &Tensor) -> Result<ForwardOutput> {
        let len = noisy.shape().get(1).copied().unwrap_or(0);
        let (mag_c, pha) = batch_features(&self.config, noisy)?;
        let noisy_mag_c = g.constant(mag_c);
        let noisy_phase = g.constant(pha);
        let z = self.encode(g, noisy_mag_c, noisy_phase)?;
        let f = self.config.freq_bins();
        let mask = self.mask.forward(g, &self.store, z, f)?;
        let phase = self.phase.forward(g, &self.store, z, f)?;
        let mag_c = g.mul(noisy_mag_c, mask)?;
        let mag = g.pow(mag_c, 1.0 / self.config.compression)?;
        let (cos, sin) = (g.cos(phase)?, g.sin(phase)?);
        let re_c = g.mul(mag_c, cos)?;
        let im_c = g.mul(mag_c, sin)?;
        let re = g.mul(mag, cos)?;
        let im = g.mul(mag, sin)?;
        let wave = self.stft.inverse(g, re, im, len)?;
        Ok(ForwardOutput {
            wave,
            mag,
            mag_c,
            phase,
            mask,
            re_c,
            im_c,
            noisy_mag_c,
            noisy_phase,
        })
    }

    /// Enhance one waveform without recording gradients.
    pub fn enhance(&self, noisy: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = Tensor::new(vec![1, noisy.len()], noisy.to_vec())?;
        let out = self.forward(&mut g, &x)?;
        let y = g.value(out.wave).data().to_vec();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("enhanced waveform is not finite".into()));
        }
        Ok(y)
    }
}
