//! STFT analysis/synthesis, magnitude compression, masking and WAV I/O.

mod features;
mod stft;
mod wav;

pub use features::{apply_mask, compress, decompress};
pub use stft::{hann_periodic, istft, stft, stft_complex, GraphStft, Spectrogram, StftConfig};
pub use wav::{read_wav, write_wav, SAMPLE_RATE};
