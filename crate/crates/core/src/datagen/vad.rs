//! Energy-threshold voice activity detection.

use crate::metrics::frame_starts;

/// Frames more than this far below the loudest frame count as silence.
pub const VAD_THRESHOLD_DB: f64 = 35.0;
/// 25 ms / 10 ms at 16 kHz.
pub const VAD_FRAME: usize = 400;
pub const VAD_HOP: usize = 160;

/// Rectangular-frame energies of `x`.
pub fn frame_energies(x: &[f64], frame: usize, hop: usize) -> Vec<f64> {
    frame_starts(x.len(), frame, hop)
        .map(|s| x[s..(s + frame).min(x.len())].iter().map(|v| v * v).sum())
        .collect()
}

/// Activity flag per frame: energy within `threshold_db` of the loudest
/// frame. An all-zero signal has no active frame.
pub fn active_frames(x: &[f64], frame: usize, hop: usize, threshold_db: f64) -> Vec<bool> {
    let e = frame_energies(x, frame, hop);
    let loudest = e.iter().cloned().fold(0.0, f64::max);
    let floor = loudest * 10f64.powf(-threshold_db / 10.0);
    e.iter().map(|&v| loudest > 0.0 && v > floor).collect()
}

/// Drop the hop-sized blocks whose frame is inactive (25 ms frames, 10 ms
/// hop, 35 dB threshold). Samples past the last frame start belong to the
/// last frame.
pub fn remove_silence(x: &[f64]) -> Vec<f64> {
    let act = active_frames(x, VAD_FRAME, VAD_HOP, VAD_THRESHOLD_DB);
    x.iter()
        .enumerate()
        .filter(|(i, _)| act[(i / VAD_HOP).min(act.len() - 1)])
        .map(|(_, v)| *v)
        .collect()
}
