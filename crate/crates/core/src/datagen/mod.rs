//! Synthetic desk-scale corpus: speech-shaped noise by LPC, babble by
//! averaging energy-standardised talkers, and mixing at prescribed
//! active-frame SNRs.

mod babble;
mod lpc;
mod mix;
mod synth;
mod vad;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use babble::{gen_babble, BABBLE_TALKERS};
pub use lpc::{all_pole_noise, autocorrelation, gen_ssn, levinson_durbin, lpc, Lpc};
pub use mix::{active_energies, fit_length, measured_snr, mix_at_ssnr, Mixture, MIX_THRESHOLD_DB};
pub use synth::{gen_noise, peak_normalize, synth_speech, NoiseType, PEAK, SSN_ORDER};
pub use vad::{active_frames, frame_energies, remove_silence, VAD_FRAME, VAD_HOP, VAD_THRESHOLD_DB};

use crate::dsp::{write_wav, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::parallel;

/// Mixing SNRs in dB.
pub const SNR_GRID: [f64; 7] = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

/// Seed of clip `index` in `split`. Each split owns a disjoint range of
/// 2^32 seeds, so no noise realisation is shared across splits.
pub fn clip_seed(seed: u64, split: Split, index: u32) -> u64 {
    (seed.wrapping_mul(3).wrapping_add(split.index()) << 32) | index as u64
}

/// Noise seeds are a bijection of clip seeds, kept apart from the clean stream.
fn noise_seed(clip: u64) -> u64 {
    clip ^ 0x9e37_79b9_7f4a_7c15
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub clean_id: String,
    pub noise: NoiseType,
    pub snr_db: f64,
    pub seed: u64,
}

/// One generated example, all signals of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub split: Split,
    pub spec: MixtureSpec,
    pub clean: Vec<f64>,
    /// Scaled noise; `noisy - clean` exactly.
    pub noise: Vec<f64>,
    pub noisy: Vec<f64>,
}

/// Clip `index` of `split`: round-robin SNR and noise type, peak-normalised
/// jointly so every signal stays within [-0.95, 0.95].
pub fn synth_clip(split: Split, index: u32, samples: usize, seed: u64) -> Result<SynthClip> {
    let cs = clip_seed(seed, split, index);
    let clean = synth_speech(samples, &mut ChaCha8Rng::seed_from_u64(cs));
    let kind = NoiseType::ALL[index as usize % NoiseType::ALL.len()];
    let snr = SNR_GRID[index as usize % SNR_GRID.len()];
    let noise = gen_noise(kind, samples, noise_seed(cs))?;
    let m = mix_at_ssnr(&clean, &noise, snr)?;
    let peak = |x: &[f64]| x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let p = peak(&m.noisy).max(peak(&m.noise));
    let (clean, noisy) = if p > PEAK {
        let s = PEAK / p;
        (clean.iter().map(|v| v * s).collect::<Vec<_>>(), m.noisy.iter().map(|v| v * s).collect::<Vec<_>>())
    } else {
        (clean, m.noisy)
    };
    let noise = noisy.iter().zip(&clean).map(|(y, c)| y - c).collect();
    Ok(SynthClip {
        split,
        spec: MixtureSpec {
            clean_id: format!("{split}_{index:05}"),
            noise: kind,
            snr_db: snr,
            seed: cs,
        },
        clean,
        noise,
        noisy,
    })
}

/// `n` clips of one split, generated in parallel.
pub fn synth_clips(split: Split, n: usize, samples: usize, seed: u64) -> Result<Vec<SynthClip>> {
    parallel::map_indexed(n, |i| synth_clip(split, i as u32, samples, seed))
        .into_iter()
        .collect()
}

/// Clips per split for a corpus of `n`: a tenth each to valid and test.
pub fn split_sizes(n: usize) -> [(Split, usize); 3] {
    let held = n / 10;
    [(Split::Train, n - 2 * held), (Split::Valid, held), (Split::Test, held)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub split: Split,
    pub clean: PathBuf,
    pub noise: PathBuf,
    pub noisy: PathBuf,
    pub spec: MixtureSpec,
}

/// Corpus listing; paths are relative to the manifest's directory on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

impl CorpusManifest {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == s)
    }

    /// Tab-separated lines: split, clean, noise, noisy, noise type, SNR, seed.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.split,
                e.clean.display(),
                e.noise.display(),
                e.noisy.display(),
                e.spec.noise,
                e.spec.snr_db,
                e.spec.seed
            ));
        }
        out
    }

    pub fn parse_tsv(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::format(origin, format!("line {}: {what}", ln + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(bad(&format!("expected 7 tab-separated fields, found {}", f.len())));
            }
            let clean = PathBuf::from(f[1]);
            let clean_id = clean
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            entries.push(CorpusEntry {
                split: f[0].parse().map_err(|_| bad("bad split"))?,
                clean,
                noise: PathBuf::from(f[2]),
                noisy: PathBuf::from(f[3]),
                spec: MixtureSpec {
                    clean_id,
                    noise: f[4].parse().map_err(|_| bad("bad noise type"))?,
                    snr_db: f[5].parse().map_err(|_| bad("bad SNR"))?,
                    seed: f[6].parse().map_err(|_| bad("bad seed"))?,
                },
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Generate `n_clips` clips of `duration_s` seconds into the existing
/// directory `out`, as `<split>/{clean,noise,noisy}/<id>.wav` plus
/// `manifest.tsv`.
pub fn synth_desk_corpus(out: &Path, n_clips: usize, duration_s: f64, seed: u64) -> Result<CorpusManifest> {
    if n_clips == 0 {
        return Err(Error::invalid("corpus", "need at least one clip"));
    }
    if !(duration_s > 0.0) {
        return Err(Error::invalid("corpus", format!("duration {duration_s} s")));
    }
    if !out.is_dir() {
        return Err(Error::io(
            out,
            std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        ));
    }
    let samples = (duration_s * SAMPLE_RATE as f64).round() as usize;
    let mut manifest = CorpusManifest::default();
    for (split, n) in split_sizes(n_clips) {
        if n == 0 {
            continue;
        }
        for kind in ["clean", "noise", "noisy"] {
            let d = out.join(split.to_string()).join(kind);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for clip in synth_clips(split, n, samples, seed)? {
            let rel = |kind: &str| PathBuf::from(split.to_string()).join(kind).join(format!("{}.wav", clip.spec.clean_id));
            let entry = CorpusEntry {
                split,
                clean: rel("clean"),
                noise: rel("noise"),
                noisy: rel("noisy"),
                spec: clip.spec.clone(),
            };
            write_wav(&out.join(&entry.clean), &clip.clean)?;
            write_wav(&out.join(&entry.noise), &clip.noise)?;
            write_wav(&out.join(&entry.noisy), &clip.noisy)?;
            manifest.entries.push(entry);
        }
    }
    manifest.write(&out.join(MANIFEST_NAME))?;
    Ok(manifest)
}
