use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::ops::wrapped_atan2;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: 400,
            win_length: 400,
            hop: 100,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.win_length || self.win_length > self.n_fft || self.n_fft < 2 {
            return Err(Error::invalid(
                "stft",
                format!(
                    "need 0 < hop <= win_length <= n_fft, got hop {}, win_length {}, n_fft {}",
                    self.hop, self.win_length, self.n_fft
                ),
            ));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Reflection padding applied at both ends.
    pub fn pad(&self) -> usize {
        self.n_fft / 2
    }

    pub fn n_frames(&self, len: usize) -> usize {
        1 + (len + 2 * self.pad() - self.n_fft) / self.hop
    }

    /// Analysis window of length `n_fft`: a periodic Hann of `win_length`
    /// centred with zeros on both sides.
    pub fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let off = (self.n_fft - self.win_length) / 2;
        w[off..off + self.win_length].copy_from_slice(&hann_periodic(self.win_length));
        w
    }

    fn check_len(&self, len: usize) -> Result<()> {
        self.validate()?;
        if len < self.win_length || len <= self.pad() {
            return Err(Error::invalid(
                "stft",
                format!("signal of {len} samples is shorter than one window ({})", self.win_length.max(self.pad() + 1)),
            ));
        }
        Ok(())
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided magnitude/phase spectrogram, both `[T, F]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub magnitude: Tensor,
    pub phase: Tensor,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.magnitude.shape()[0]
    }

    /// Real and imaginary parts.
    pub fn to_complex(&self) -> (Tensor, Tensor) {
        let re = self.magnitude.data().iter().zip(self.phase.data()).map(|(m, p)| m * p.cos()).collect();
        let im = self.magnitude.data().iter().zip(self.phase.data()).map(|(m, p)| m * p.sin()).collect();
        let sh = self.magnitude.shape().to_vec();
        (Tensor::new(sh.clone(), re).unwrap(), Tensor::new(sh, im).unwrap())
    }

    pub fn from_complex(re: &Tensor, im: &Tensor, config: StftConfig) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape("spectrogram", format!("real {:?} vs imaginary {:?}", re.shape(), im.shape())));
        }
        let mag = re.data().iter().zip(im.data()).map(|(r, i)| r.hypot(*i)).collect();
        let pha = re.data().iter().zip(im.data()).map(|(r, i)| wrapped_atan2(*i, *r)).collect();
        Ok(Self {
            magnitude: Tensor::new(re.shape().to_vec(), mag)?,
            phase: Tensor::new(re.shape().to_vec(), pha)?,
            config,
        })
    }
}

fn planner_fft(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut p = FftPlanner::new();
    if inverse {
        p.plan_fft_inverse(n)
    } else {
        p.plan_fft_forward(n)
    }
}

/// Real and imaginary parts of the one-sided STFT, each `[T, F]`.
pub fn stft_complex(x: &[f64], cfg: &StftConfig) -> Result<(Tensor, Tensor)> {
    cfg.check_len(x.len())?;
    let (n, pad, f) = (cfg.n_fft, cfg.pad(), cfg.n_bins());
    let t = cfg.n_frames(x.len());
    let win = cfg.window();
    let fft = planner_fft(n, false);
    let mut buf = vec![Complex64::default(); n];
    let (mut re, mut im) = (Vec::with_capacity(t * f), Vec::with_capacity(t * f));
    for ti in 0..t {
        for (j, b) in buf.iter_mut().enumerate() {
            let q = ti * cfg.hop + j;
            *b = Complex64::new(x[crate::tensor::ops::reflect_index(q, pad, x.len())] * win[j], 0.0);
        }
        fft.process(&mut buf);
        for b in &buf[..f] {
            re.push(b.re);
            im.push(b.im);
        }
    }
    Ok((Tensor::new(vec![t, f], re)?, Tensor::new(vec![t, f], im)?))
}

pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    let (re, im) = stft_complex(x, cfg)?;
    Spectrogram::from_complex(&re, &im, *cfg)
}

/// Weighted overlap-add synthesis with window-square normalisation. `len`
/// defaults to `(T - 1) * hop`, the length of a signal whose STFT has `T`
/// frames when it is a multiple of the hop.
pub fn istft(s: &Spectrogram, len: Option<usize>) -> Result<Vec<f64>> {
    let (re, im) = s.to_complex();
    istft_complex(&re, &im, &s.config, len)
}

pub(crate) fn istft_complex(re: &Tensor, im: &Tensor, cfg: &StftConfig, len: Option<usize>) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (n, pad, f) = (cfg.n_fft, cfg.pad(), cfg.n_bins());
    let [t, fb] = *re.shape() else {
        return Err(Error::shape("istft", format!("spectrogram must be [T, F], got {:?}", re.shape())));
    };
    if fb != f || im.shape() != re.shape() {
        return Err(Error::shape("istft", format!("expected F = {f} bins, got {:?} / {:?}", re.shape(), im.shape())));
    }
    if t == 0 {
        return Err(Error::invalid("istft", "spectrogram has no frames"));
    }
    let full = (t - 1) * cfg.hop + n;
    let len = len.unwrap_or((t - 1) * cfg.hop);
    if pad + len > full {
        return Err(Error::invalid("istft", format!("{t} frames cannot produce {len} samples")));
    }
    let win = cfg.window();
    let fft = planner_fft(n, true);
    let mut buf = vec![Complex64::default(); n];
    let mut acc = vec![0.0; full];
    let mut wsum = vec![0.0; full];
    for ti in 0..t {
        buf.fill(Complex64::default());
        for k in 0..f {
            let v = Complex64::new(re.data()[ti * f + k], im.data()[ti * f + k]);
            buf[k] = v;
            if k > 0 && n - k != k {
                buf[n - k] = v.conj();
            }
        }
        // DC and Nyquist are real in a real signal's spectrum
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        fft.process(&mut buf);
        for j in 0..n {
            acc[ti * cfg.hop + j] += buf[j].re / n as f64 * win[j];
            wsum[ti * cfg.hop + j] += win[j] * win[j];
        }
    }
    Ok((pad..pad + len)
        .map(|q| if wsum[q] > 1e-11 { acc[q] / wsum[q] } else { acc[q] })
        .collect())
}

/// STFT and inverse STFT as graph operations on batched signals, built from
/// framing, a window multiply and matrix products with DFT bases.
#[derive(Clone, Debug)]
pub struct GraphStft {
    pub config: StftConfig,
    window: Tensor,
    cos_fwd: Tensor,
    sin_fwd: Tensor,
    cos_inv: Tensor,
    sin_inv: Tensor,
}

impl GraphStft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let (n, f) = (config.n_fft, config.n_bins());
        let mut cf = vec![0.0; n * f];
        let mut sf = vec![0.0; n * f];
        let mut ci = vec![0.0; f * n];
        let mut si = vec![0.0; f * n];
        for j in 0..n {
            for k in 0..f {
                let ang = 2.0 * PI * ((j * k) % n) as f64 / n as f64;
                let (s, c) = ang.sin_cos();
                cf[j * f + k] = c;
                sf[j * f + k] = -s;
                let w = if k == 0 || 2 * k == n { 1.0 } else { 2.0 } / n as f64;
                ci[k * n + j] = w * c;
                si[k * n + j] = -w * s;
            }
        }
        Ok(Self {
            config,
            window: Tensor::from_vec(config.window()),
            cos_fwd: Tensor::new(vec![n, f], cf)?,
            sin_fwd: Tensor::new(vec![n, f], sf)?,
            cos_inv: Tensor::new(vec![f, n], ci)?,
            sin_inv: Tensor::new(vec![f, n], si)?,
        })
    }

    /// `x: [M, len]` to real and imaginary parts `[M, T, F]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let xs = g.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(Error::shape("stft", format!("expected [M, len], got {xs:?}")));
        }
        self.config.check_len(xs[1])?;
        let c = &self.config;
        let frames = g.frame(x, c.n_fft, c.hop, c.pad())?;
        let w = g.constant(self.window.clone());
        let frames = g.mul(frames, w)?;
        let cb = g.constant(self.cos_fwd.clone());
        let sb = g.constant(self.sin_fwd.clone());
        Ok((g.matmul(frames, cb)?, g.matmul(frames, sb)?))
    }

    /// Real and imaginary parts `[M, T, F]` to `[M, len]`.
    pub fn inverse(&self, g: &mut Graph, re: Var, im: Var, len: usize) -> Result<Var> {
        let rs = g.shape(re).to_vec();
        let c = &self.config;
        if rs.len() != 3 || rs[2] != c.n_bins() || g.shape(im) != rs.as_slice() {
            return Err(Error::shape(
                "istft",
                format!("expected [M, T, {}] real/imaginary parts, got {rs:?} / {:?}", c.n_bins(), g.shape(im)),
            ));
        }
        let t = rs[1];
        if t == 0 {
            return Err(Error::invalid("istft", "spectrogram has no frames"));
        }
        let cb = g.constant(self.cos_inv.clone());
        let sb = g.constant(self.sin_inv.clone());
        let a = g.matmul(re, cb)?;
        let b = g.matmul(im, sb)?;
        let frames = g.add(a, b)?;
        let w = g.constant(self.window.clone());
        let frames = g.mul(frames, w)?;
        let y = g.overlap_add(frames, c.hop, c.pad(), len)?;
        let norm = g.constant(Tensor::from_vec(self.inv_wsum(t, len)));
        g.mul(y, norm)
    }

    fn inv_wsum(&self, t: usize, len: usize) -> Vec<f64> {
        let c = &self.config;
        let win = c.window();
        let full = (t - 1) * c.hop + c.n_fft;
        let mut ws = vec![0.0; full];
        for ti in 0..t {
            for j in 0..c.n_fft {
                ws[ti * c.hop + j] += win[j] * win[j];
            }
        }
        (c.pad()..c.pad() + len)
            .map(|q| if ws[q] > 1e-11 { 1.0 / ws[q] } else { 1.0 })
            .collect()
    }
}
