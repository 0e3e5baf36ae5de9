//! Synthetic "speech" and noise sources.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::babble::{gen_babble, BABBLE_TALKERS};
use super::lpc::{gen_ssn, rms};
use super::mix::fit_length;
use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Peak level after normalisation.
pub const PEAK: f64 = 0.95;

/// Scale `x` so its peak magnitude is [`PEAK`]; silence is left alone.
pub fn peak_normalize(x: &mut [f64]) {
    let p = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if p > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / p);
    }
}

/// Two-pole resonator at `fc` Hz with pole radius `r`, run over `x`.
fn resonate(x: &[f64], fc: f64, r: f64) -> Vec<f64> {
    let w = 2.0 * PI * fc / SAMPLE_RATE as f64;
    let (a1, a2) = (-2.0 * r * w.cos(), r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = (1.0 - r) * v - a1 * y1 - a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

/// A voiced-speech stand-in: 3-8 harmonics of a 80-300 Hz fundamental with
/// slow pitch drift, amplitude-modulated at a 2-8 Hz syllabic rate, plus
/// band-limited aspiration noise. Peak-normalised.
pub fn synth_speech<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let f0 = rng.random_range(80.0..300.0);
    let harmonics = rng.random_range(3..=8);
    let amps: Vec<f64> = (1..=harmonics).map(|k| rng.random_range(0.5..1.0) / k as f64).collect();
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let (drift_rate, drift_phase) = (rng.random_range(0.2..1.0), rng.random_range(0.0..2.0 * PI));
    let (syll, syll_phase) = (rng.random_range(2.0..8.0), rng.random_range(0.0..2.0 * PI));
    let breath = rng.random_range(0.05..0.15);
    let noise: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    let aspiration = resonate(&noise, rng.random_range(2000.0..4000.0), 0.9);

    let mut theta = 0.0;
    let mut out = Vec::with_capacity(len);
    for (i, asp) in aspiration.iter().enumerate() {
        let t = i as f64 / fs;
        let f = f0 * (1.0 + 0.05 * (2.0 * PI * drift_rate * t + drift_phase).sin());
        theta += 2.0 * PI * f / fs;
        let voiced: f64 = amps
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(k, (a, p))| a * ((k + 1) as f64 * theta + p).sin())
            .sum();
        let env = 0.5 - 0.5 * (2.0 * PI * syll * t + syll_phase).cos();
        out.push(env * (voiced + breath * asp));
    }
    peak_normalize(&mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseType {
    Ssn,
    Babble,
    White,
    TonalHarmonic,
}

impl NoiseType {
    pub const ALL: [NoiseType; 4] = [NoiseType::Ssn, NoiseType::Babble, NoiseType::White, NoiseType::TonalHarmonic];
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseType::Ssn => "ssn",
            NoiseType::Babble => "babble",
            NoiseType::White => "white",
            NoiseType::TonalHarmonic => "tonal-harmonic",
        })
    }
}

impl FromStr for NoiseType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        NoiseType::ALL
            .into_iter()
            .find(|n| n.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise type `{s}`")))
    }
}

/// LPC order of speech-shaped noise.
pub const SSN_ORDER: usize = 12;

/// Unit-RMS noise of the given type, fully determined by `seed`.
pub fn gen_noise(kind: NoiseType, len: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = match kind {
        NoiseType::White => (0..len).map(|_| StandardNormal.sample(&mut rng)).collect(),
        NoiseType::Ssn => {
            let source = synth_speech(len.max(SAMPLE_RATE as usize), &mut rng);
            gen_ssn(&source, SSN_ORDER, len, rng.random())?
        }
        NoiseType::Babble => {
            // silence removal shortens each talker; generate with slack
            let talkers: Vec<Vec<f64>> = (0..BABBLE_TALKERS).map(|_| synth_speech(2 * len + 4000, &mut rng)).collect();
            fit_length(&gen_babble(&talkers)?, len)
        }
        NoiseType::TonalHarmonic => {
            let f0 = rng.random_range(50.0..400.0);
            let tones: Vec<(f64, f64, f64)> = (1..=rng.random_range(2..=6))
                .map(|k| (k as f64 * f0, rng.random_range(0.2..1.0), rng.random_range(0.0..2.0 * PI)))
                .filter(|(f, _, _)| *f < 0.45 * SAMPLE_RATE as f64)
                .collect();
            (0..len)
                .map(|i| {
                    let t = i as f64 / SAMPLE_RATE as f64;
                    let hum: f64 = tones.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
                    let floor: f64 = StandardNormal.sample(&mut rng);
                    hum + 0.05 * floor
                })
                .collect()
        }
    };
    let r = rms(&x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v /= r);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speech_is_bounded_and_seeded() {
        let a = synth_speech(8000, &mut ChaCha8Rng::seed_from_u64(1));
        let b = synth_speech(8000, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let p = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((p - PEAK).abs() < 1e-12);
    }

    #[test]
    fn noises_are_unit_rms() {
        for kind in NoiseType::ALL {
            let n = gen_noise(kind, 4000, 3).unwrap();
            assert_eq!(n.len(), 4000);
            assert!((rms(&n) - 1.0).abs() < 1e-9, "{kind}");
            assert_eq!(kind.to_string().parse::<NoiseType>().unwrap(), kind);
        }
    }
}
