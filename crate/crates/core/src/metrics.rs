//! Objective evaluation: SI-SDR, segmental SNR and ESTOI, plus a CSV report.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::dsp::{hann_periodic, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Upper cap for SI-SDR; identical signals would otherwise give +inf.
pub const SI_SDR_CAP: f64 = 100.0;
/// Lower floor, for estimates orthogonal to the reference.
pub const SI_SDR_FLOOR: f64 = -100.0;

pub const SSNR_FRAME: usize = 512;
pub const SSNR_HOP: usize = 256;
pub const SSNR_MIN_DB: f64 = -10.0;
pub const SSNR_MAX_DB: f64 = 35.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_lengths(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("reference has {} samples, estimate {}", a.len(), b.len())));
    }
    Ok(())
}

/// Scale-invariant SDR in dB, clamped to `[SI_SDR_FLOOR, SI_SDR_CAP]`.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_lengths("si_sdr", reference, estimate)?;
    let rr = dot(reference, reference);
    if rr == 0.0 {
        return Err(Error::invalid("si_sdr", "reference is all zeros"));
    }
    let alpha = dot(estimate, reference) / rr;
    let target = alpha * alpha * rr;
    let residual: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    let v = if residual == 0.0 {
        SI_SDR_CAP
    } else if target == 0.0 {
        SI_SDR_FLOOR
    } else {
        10.0 * (target / residual).log10()
    };
    Ok(v.clamp(SI_SDR_FLOOR, SI_SDR_CAP))
}

/// Start offsets of the `frame`/`hop` frames of a `len`-sample signal. A
/// signal shorter than one frame is a single (short) frame.
pub(crate) fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    let n = if len <= frame { 1 } else { 1 + (len - frame) / hop };
    (0..n).map(move |i| i * hop)
}

/// Per-frame segmental SNRs (rectangular 512/256 framing, clamped to
/// [-10, 35] dB); frames with a silent reference are skipped.
pub fn ssnr_frames(reference: &[f64], estimate: &[f64]) -> Result<Vec<f64>> {
    check_lengths("ssnr", reference, estimate)?;
    let mut out = Vec::new();
    for s in frame_starts(reference.len(), SSNR_FRAME, SSNR_HOP) {
        let e = (s + SSNR_FRAME).min(reference.len());
        let r = &reference[s..e];
        let sig = dot(r, r);
        if sig == 0.0 {
            continue;
        }
        let noise: f64 = r.iter().zip(&estimate[s..e]).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = if noise == 0.0 { SSNR_MAX_DB } else { 10.0 * (sig / noise).log10() };
        out.push(db.clamp(SSNR_MIN_DB, SSNR_MAX_DB));
    }
    Ok(out)
}

/// Segmental SNR in dB: the mean of [`ssnr_frames`].
pub fn ssnr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    let frames = ssnr_frames(reference, estimate)?;
    if frames.is_empty() {
        return Err(Error::invalid("ssnr", "reference has no frame with nonzero energy"));
    }
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

pub const ESTOI_FRAME: usize = 512;
pub const ESTOI_HOP: usize = 256;
pub const ESTOI_BANDS: usize = 15;
pub const ESTOI_LOWEST_CENTER_HZ: f64 = 150.0;
/// Frames per intermediate-intelligibility segment.
pub const ESTOI_SEGMENT: usize = 30;
/// Frames more than this far below the loudest reference frame are dropped.
pub const ESTOI_DYNAMIC_RANGE_DB: f64 = 40.0;

/// FFT bin ranges `[lo, hi)` of the one-third-octave bands.
fn third_octave_bins(fs: f64, n_fft: usize) -> Vec<(usize, usize)> {
    let bin_hz = fs / n_fft as f64;
    let nearest = |f: f64| ((f / bin_hz).round() as usize).min(n_fft / 2 + 1);
    (0..ESTOI_BANDS)
        .map(|k| {
            let cf = ESTOI_LOWEST_CENTER_HZ * 2f64.powf(k as f64 / 3.0);
            (nearest(cf * 2f64.powf(-1.0 / 6.0)), nearest(cf * 2f64.powf(1.0 / 6.0)))
        })
        .collect()
}

/// Mean-removal then unit-norm scaling; a zero vector stays zero.
fn normalize(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Band envelopes `[frames][bands]` of the given frames.
fn band_envelopes(x: &[f64], starts: &[usize], win: &[f64], bins: &[(usize, usize)], fft: &Arc<dyn Fft<f64>>) -> Vec<Vec<f64>> {
    let mut buf = vec![Complex64::default(); ESTOI_FRAME];
    starts
        .iter()
        .map(|&s| {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(x[s + j] * win[j], 0.0);
            }
            fft.process(&mut buf);
            bins.iter()
                .map(|&(lo, hi)| buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

/// Extended short-time objective intelligibility. Silent frames (by the
/// reference) are removed, each remaining 512-sample Hann frame is reduced to
/// 15 one-third-octave band envelopes, and every run of 30 consecutive frames
/// is scored by row- then column-normalizing both envelope matrices and
/// averaging the column inner products. The result is the mean over runs.
pub fn estoi(reference: &[f64], estimate: &[f64], fs: u32) -> Result<f64> {
    check_lengths("estoi", reference, estimate)?;
    if fs != SAMPLE_RATE {
        return Err(Error::invalid("estoi", format!("sample rate {fs} Hz, expected {SAMPLE_RATE}")));
    }
    let win = hann_periodic(ESTOI_FRAME);
    let all: Vec<usize> = if reference.len() < ESTOI_FRAME {
        Vec::new()
    } else {
        frame_starts(reference.len(), ESTOI_FRAME, ESTOI_HOP).collect()
    };
    let energy_db: Vec<f64> = all
        .iter()
        .map(|&s| {
            let e: f64 = (0..ESTOI_FRAME).map(|j| (reference[s + j] * win[j]).powi(2)).sum();
            10.0 * (e + 1e-300).log10()
        })
        .collect();
    let loudest = energy_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = all
        .iter()
        .zip(&energy_db)
        .filter(|(_, &e)| e > loudest - ESTOI_DYNAMIC_RANGE_DB)
        .map(|(&s, _)| s)
        .collect();
    if kept.len() < ESTOI_SEGMENT {
        return Err(Error::invalid(
            "estoi",
            format!(
                "{} active frames of {ESTOI_FRAME} samples after silence removal, need {ESTOI_SEGMENT}",
                kept.len()
            ),
        ));
    }
    let fft = FftPlanner::new().plan_fft_forward(ESTOI_FRAME);
    let bins = third_octave_bins(fs as f64, ESTOI_FRAME);
    let xr = band_envelopes(reference, &kept, &win, &bins, &fft);
    let xe = band_envelopes(estimate, &kept, &win, &bins, &fft);

    let n = ESTOI_SEGMENT;
    let segments = kept.len() - n + 1;
    let mut total = 0.0;
    for m in 0..segments {
        // [bands][frames] matrices; rows are band trajectories over the segment
        let take = |env: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let mut rows: Vec<Vec<f64>> = (0..ESTOI_BANDS).map(|b| (m..m + n).map(|t| env[t][b]).collect()).collect();
            rows.iter_mut().for_each(|r| normalize(r));
            let mut cols: Vec<Vec<f64>> = (0..n).map(|t| rows.iter().map(|r| r[t]).collect()).collect();
            cols.iter_mut().for_each(|c| normalize(c));
            cols
        };
        let (cr, ce) = (take(&xr), take(&xe));
        total += cr.iter().zip(&ce).map(|(a, b)| dot(a, b)).sum::<f64>() / n as f64;
    }
    Ok(total / segments as f64)
}

/// Per-file metric values plus corpus mean and (population) standard
/// deviation. Missing values are NaN and excluded from the summary.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MetricReport {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, id: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::shape(
                "metric report",
                format!("{} values for {} columns", values.len(), self.columns.len()),
            ));
        }
        self.rows.push((id.into(), values));
        Ok(())
    }

    fn finite_column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |(_, v)| v[c]).filter(|v| v.is_finite())
    }

    /// Mean of each column over files with a finite value (NaN if none).
    pub fn mean(&self) -> Vec<f64> {
        (0..self.columns.len())
            .map(|c| {
                let (s, n) = self.finite_column(c).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                if n == 0 {
                    f64::NAN
                } else {
                    s / n as f64
                }
            })
            .collect()
    }

    pub fn std(&self) -> Vec<f64> {
        let mean = self.mean();
        (0..self.columns.len())
            .map(|c| {
                let (s, n) = self
                    .finite_column(c)
                    .fold((0.0, 0usize), |(s, n), v| (s + (v - mean[c]).powi(2), n + 1));
                if n == 0 {
                    f64::NAN
                } else {
                    (s / n as f64).sqrt()
                }
            })
            .collect()
    }

    /// `id,<columns...>` header, one row per file, then `mean` and `std` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> std::result::Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string()];
        header.extend(self.columns.iter().cloned());
        out.write_record(&header)?;
        let fmt = |v: &f64| if v.is_nan() { "NaN".to_string() } else { format!("{v}") };
        for (id, vals) in &self.rows {
            out.write_record(std::iter::once(id.clone()).chain(vals.iter().map(fmt)))?;
        }
        out.write_record(std::iter::once("mean".to_string()).chain(self.mean().iter().map(fmt)))?;
        out.write_record(std::iter::once("std".to_string()).chain(self.std().iter().map(fmt)))?;
        out.flush()?;
        Ok(())
    }
}
