use super::vad::active_frames;
use crate::error::{Error, Result};
use crate::metrics::{frame_starts, SSNR_FRAME, SSNR_HOP};

/// Activity threshold applied to the clean signal when mixing.
pub const MIX_THRESHOLD_DB: f64 = 35.0;

/// A noisy mixture; `noise` is exactly `noisy - clean`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub noisy: Vec<f64>,
    pub noise: Vec<f64>,
    pub gain: f64,
}

/// `noise` repeated cyclically (or cut) to `len` samples.
pub fn fit_length(noise: &[f64], len: usize) -> Vec<f64> {
    noise.iter().cycle().take(len).cloned().collect()
}

/// Energies of `clean` and `other` summed over the frames (512/256) where
/// the clean signal is active.
pub fn active_energies(clean: &[f64], other: &[f64]) -> (f64, f64) {
    let act = active_frames(clean, SSNR_FRAME, SSNR_HOP, MIX_THRESHOLD_DB);
    let mut ec = 0.0;
    let mut eo = 0.0;
    for (s, a) in frame_starts(clean.len(), SSNR_FRAME, SSNR_HOP).zip(act) {
        if a {
            let e = (s + SSNR_FRAME).min(clean.len());
            ec += clean[s..e].iter().map(|v| v * v).sum::<f64>();
            eo += other[s..e].iter().map(|v| v * v).sum::<f64>();
        }
    }
    (ec, eo)
}

/// Active-frame SNR of `clean` against an additive `noise` of equal length.
pub fn measured_snr(clean: &[f64], noise: &[f64]) -> Result<f64> {
    if clean.len() != noise.len() {
        return Err(Error::shape("snr", format!("{} clean vs {} noise samples", clean.len(), noise.len())));
    }
    let (ec, en) = active_energies(clean, noise);
    if ec == 0.0 {
        return Err(Error::invalid("snr", "clean signal has no active frame"));
    }
    Ok(10.0 * (ec / en).log10())
}

/// Scale `noise` (cycled to the clean length) so the active-frame SNR equals
/// `target_db`, and add it to `clean`.
pub fn mix_at_ssnr(clean: &[f64], noise: &[f64], target_db: f64) -> Result<Mixture> {
    if !target_db.is_finite() {
        return Err(Error::invalid("mix", format!("target SNR {target_db} dB is not finite")));
    }
    if noise.is_empty() {
        return Err(Error::invalid("mix", "empty noise"));
    }
    let n = fit_length(noise, clean.len());
    let (ec, en) = active_energies(clean, &n);
    if ec == 0.0 {
        return Err(Error::invalid("mix", "clean signal has no active energy"));
    }
    if en == 0.0 {
        return Err(Error::invalid("mix", "noise is silent over the active clean frames"));
    }
    let gain = (ec / (en * 10f64.powf(target_db / 10.0))).sqrt();
    let noisy: Vec<f64> = clean.iter().zip(&n).map(|(c, v)| c + gain * v).collect();
    let noise = noisy.iter().zip(clean).map(|(y, c)| y - c).collect();
    Ok(Mixture { noisy, noise, gain })
}
