//! Training objectives: waveform, magnitude, complex, phase and consistency
//! losses, the metric discriminator with its two adversarial losses, and the
//! weighted generator total.
//!
//! All losses are graph operations returning scalar [`Var`]s; expectations
//! are means over batch elements and array entries.

use rand::Rng;

use crate::dsp::GraphStft;
use crate::error::{Error, Result};
use crate::metrics::si_sdr;
use crate::net::{Conv2dLayer, ConvBlock, NormAct};
use crate::tensor::{Conv2dGeometry, Graph, ParamStore, Var};

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

fn mse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.square(d)?;
    g.mean_all(d)
}

/// Mean absolute error between waveforms.
pub fn loss_time(g: &mut Graph, clean: Var, enhanced: Var) -> Result<Var> {
    same_shape(g, "loss_time", clean, enhanced)?;
    let d = g.sub(clean, enhanced)?;
    let d = g.abs(d)?;
    g.mean_all(d)
}

/// Mean squared error between magnitude spectra.
pub fn loss_mag(g: &mut Graph, clean: Var, enhanced: Var) -> Result<Var> {
    same_shape(g, "loss_mag", clean, enhanced)?;
    mse(g, clean, enhanced)
}

/// Sum of the mean squared errors of the real and the imaginary parts.
pub fn loss_complex(g: &mut Graph, clean: (Var, Var), enhanced: (Var, Var)) -> Result<Var> {
    same_shape(g, "loss_complex", clean.0, enhanced.0)?;
    same_shape(g, "loss_complex", clean.1, enhanced.1)?;
    let re = mse(g, clean.0, enhanced.0)?;
    let im = mse(g, clean.1, enhanced.1)?;
    g.add(re, im)
}

/// Forward difference along `axis`, with the one-sided backward difference
/// repeated at the far edge so the output keeps the input's shape. A
/// length-1 axis differences to zero.
pub fn finite_difference(g: &mut Graph, x: Var, axis: usize) -> Result<Var> {
    let n = g.shape(x)[axis];
    let ax = axis as isize;
    if n < 2 {
        return g.scale(x, 0.0);
    }
    let hi = g.slice(x, ax, 1, n)?;
    let lo = g.slice(x, ax, 0, n - 1)?;
    let d = g.sub(hi, lo)?;
    let last = g.slice(d, ax, n - 2, n - 1)?;
    g.concat(&[d, last], ax)
}

/// The three phase terms: instantaneous phase, group delay (difference along
/// frequency) and instantaneous angular frequency (difference along time).
#[derive(Clone, Copy, Debug)]
pub struct PhaseLoss {
    pub ip: Var,
    pub gd: Var,
    pub iaf: Var,
    /// `ip + gd + iaf`
    pub total: Var,
}

/// Anti-wrapped phase losses on `[.., T, F]` phase arrays.
pub fn loss_phase(g: &mut Graph, clean: Var, enhanced: Var) -> Result<PhaseLoss> {
    same_shape(g, "loss_phase", clean, enhanced)?;
    let nd = g.shape(clean).len();
    if nd < 2 {
        return Err(Error::shape("loss_phase", "phase needs time and frequency axes"));
    }
    let term = |g: &mut Graph, a: Var, b: Var| -> Result<Var> {
        let d = g.sub(a, b)?;
        let d = g.anti_wrap(d)?;
        g.mean_all(d)
    };
    let ip = term(g, clean, enhanced)?;
    let (cf, ef) = (finite_difference(g, clean, nd - 1)?, finite_difference(g, enhanced, nd - 1)?);
    let gd = term(g, cf, ef)?;
    let (ct, et) = (finite_difference(g, clean, nd - 2)?, finite_difference(g, enhanced, nd - 2)?);
    let iaf = term(g, ct, et)?;
    let s = g.add(ip, gd)?;
    let total = g.add(s, iaf)?;
    Ok(PhaseLoss { ip, gd, iaf, total })
}

/// Distance between a spectrum `[M, T, F]` and the STFT of its own inverse
/// STFT (signal length `len`): the summed mean squared errors of the real and
/// imaginary parts. Zero for any spectrum that came from a real signal.
pub fn loss_consistency(g: &mut Graph, stft: &GraphStft, re: Var, im: Var, len: usize) -> Result<Var> {
    let wave = stft.inverse(g, re, im, len)?;
    let (re2, im2) = stft.forward(g, wave)?;
    loss_complex(g, (re, im), (re2, im2))
}

/// Metric discriminator: three strided conv blocks (2 -> 16 -> 32 -> 64
/// channels, 3x3, stride 2, instance norm, PReLU), a final strided 64 -> 1
/// convolution, a global mean and a sigmoid.
#[derive(Clone, Debug)]
pub struct DiscriminatorParams {
    pub store: ParamStore,
    pub blocks: Vec<ConvBlock>,
    pub head: Conv2dLayer,
}

pub const DISCRIMINATOR_CHANNELS: [usize; 4] = [16, 32, 64, 1];

impl DiscriminatorParams {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let geo = Conv2dGeometry::default().with_stride(2, 2).with_padding(1, 1);
        let mut cin = 2;
        let mut blocks = Vec::new();
        for (i, &c) in DISCRIMINATOR_CHANNELS[..3].iter().enumerate() {
            let name = format!("disc.{i}");
            blocks.push(ConvBlock {
                conv: Conv2dLayer::new(&mut store, &name, cin, c, (3, 3), geo, rng),
                act: NormAct::new(&mut store, &name, c),
            });
            cin = c;
        }
        let head = Conv2dLayer::new(&mut store, "disc.3", cin, 1, (3, 3), geo, rng);
        Self { store, blocks, head }
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }
}

/// Per-example scores `[M]` in (0, 1) for magnitude pairs `[M, T, F]`.
pub fn discriminator_forward(g: &mut Graph, d: &DiscriminatorParams, reference: Var, candidate: Var) -> Result<Var> {
    same_shape(g, "discriminator", reference, candidate)?;
    let s = g.shape(reference).to_vec();
    if s.len() != 3 {
        return Err(Error::shape("discriminator", format!("expected [M, T, F] magnitudes, got {s:?}")));
    }
    let four = [s[0], 1, s[1], s[2]];
    let a = g.reshape(reference, &four)?;
    let b = g.reshape(candidate, &four)?;
    let mut x = g.concat(&[a, b], 1)?;
    for blk in &d.blocks {
        x = blk.forward(g, &d.store, x)?;
    }
    x = d.head.forward(g, &d.store, x)?;
    let x = g.mean(x, &[1, 2, 3])?;
    g.sigmoid(x)
}

fn check_quality(q: &[f64], m: usize) -> Result<()> {
    if q.len() != m {
        return Err(Error::shape("quality", format!("{} scores for a batch of {m}", q.len())));
    }
    if let Some(v) = q.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid("quality", format!("score {v} outside [0, 1]")));
    }
    Ok(())
}

/// `mean((D(X, X) - 1)^2 + (D(X, X_hat) - Q)^2)` from the per-example scores
/// `d_clean = D(X, X)` and `d_enhanced = D(X, X_hat)`, each `[M]`.
pub fn loss_discriminator(g: &mut Graph, d_clean: Var, d_enhanced: Var, quality: &[f64]) -> Result<Var> {
    same_shape(g, "loss_discriminator", d_clean, d_enhanced)?;
    check_quality(quality, g.value(d_clean).numel())?;
    let one = g.add_scalar(d_clean, -1.0)?;
    let one = g.square(one)?;
    let q = g.constant(crate::Tensor::new(g.shape(d_enhanced).to_vec(), quality.to_vec())?);
    let e = g.sub(d_enhanced, q)?;
    let e = g.square(e)?;
    let s = g.add(one, e)?;
    g.mean_all(s)
}

/// `mean((D(X, X_hat) - 1)^2)`.
pub fn loss_adversarial_generator(g: &mut Graph, d_enhanced: Var) -> Result<Var> {
    let e = g.add_scalar(d_enhanced, -1.0)?;
    let e = g.square(e)?;
    g.mean_all(e)
}

/// Normalized quality score in [0, 1] standing in for PESQ.
pub trait QualityOracle {
    fn score(&self, clean: &[f64], enhanced: &[f64]) -> Result<f64>;
}

/// `sigmoid((si_sdr - 10) / 5)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SiSdrQuality;

impl QualityOracle for SiSdrQuality {
    fn score(&self, clean: &[f64], enhanced: &[f64]) -> Result<f64> {
        let v = si_sdr(clean, enhanced)?;
        Ok(1.0 / (1.0 + (-(v - 10.0) / 5.0).exp()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub time: f64,
    pub mag: f64,
    pub complex: f64,
    pub phase: f64,
    pub consistency: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            time: 0.2,
            mag: 0.9,
            complex: 0.1,
            phase: 0.3,
            consistency: 0.1,
            adversarial: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }

    /// Weights in term order: time, mag, complex, phase, consistency, adversarial.
    pub fn as_array(&self) -> [f64; 6] {
        [self.time, self.mag, self.complex, self.phase, self.consistency, self.adversarial]
    }

    /// Weighted sum of plain term values, in the order of [`Self::as_array`].
    pub fn combine(&self, terms: &[f64; 6]) -> f64 {
        self.as_array().iter().zip(terms).map(|(w, t)| w * t).sum()
    }
}

/// The six generator terms of one step.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorTerms {
    pub time: Var,
    pub mag: Var,
    pub complex: Var,
    pub phase: Var,
    pub consistency: Var,
    pub adversarial: Var,
}

impl GeneratorTerms {
    pub fn as_array(&self) -> [Var; 6] {
        [self.time, self.mag, self.complex, self.phase, self.consistency, self.adversarial]
    }
}

/// Weighted generator loss.
pub fn generator_total(g: &mut Graph, terms: &GeneratorTerms, w: &LossWeights) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (t, wt) in terms.as_array().into_iter().zip(w.as_array()) {
        if !g.value(t).data().iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite loss term {:?}", g.value(t).data())));
        }
        let s = g.scale(t, wt)?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    Ok(total.expect("six terms"))
}
