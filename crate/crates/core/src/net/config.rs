use std::fmt;
use std::str::FromStr;

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::ssm::MambaConfig;

/// Which sublayers a block has and how they are ordered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Attention then Mamba along each axis, one attention module shared by
    /// the time and frequency paths.
    #[default]
    Shared,
    /// As `Shared` with separate time and frequency attention weights.
    Unshared,
    /// Mamba then attention along each axis, shared attention weights.
    AttentionAfter,
    /// Mamba only.
    NoAttention,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Shared, Variant::Unshared, Variant::AttentionAfter, Variant::NoAttention];

    pub fn has_attention(self) -> bool {
        self != Variant::NoAttention
    }

    pub fn shares_attention(self) -> bool {
        matches!(self, Variant::Shared | Variant::AttentionAfter)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Shared => "shared",
            Variant::Unshared => "unshared",
            Variant::AttentionAfter => "attention_after",
            Variant::NoAttention => "no_attention",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "shared" => Variant::Shared,
            "unshared" => Variant::Unshared,
            "attention_after" => Variant::AttentionAfter,
            "no_attention" => Variant::NoAttention,
            other => {
                return Err(Error::Config(format!(
                    "unknown variant `{other}` (expected shared, unshared, attention_after or no_attention)"
                )))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub layers: usize,
    pub heads: usize,
    pub expansion: usize,
    pub ssm_state: usize,
    /// Rank of the Mamba dt bottleneck; `None` means `ceil(channels / 16)`.
    pub dt_rank: Option<usize>,
    pub conv_width: usize,
    pub dense_depth: usize,
    pub compression: f64,
    pub sigmoid_beta: f64,
    pub variant: Variant,
    /// Zero the attention and Mamba output projections so every block starts
    /// as the identity map.
    pub identity_init: bool,
    pub stft: StftConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            layers: 4,
            heads: 8,
            expansion: 4,
            ssm_state: 16,
            dt_rank: None,
            conv_width: 4,
            dense_depth: 4,
            compression: 0.3,
            sigmoid_beta: 2.0,
            variant: Variant::Shared,
            identity_init: false,
            stft: StftConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.layers == 0 || self.expansion == 0 || self.ssm_state == 0 {
            return bad("channels, layers, expansion and ssm_state must be positive".into());
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if self.conv_width == 0 || self.dense_depth == 0 {
            return bad("conv_width and dense_depth must be positive".into());
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!("compression must lie in (0, 1], got {}", self.compression));
        }
        if !(self.sigmoid_beta > 0.0) {
            return bad(format!("sigmoid_beta must be positive, got {}", self.sigmoid_beta));
        }
        if self.stft.n_bins() < 3 {
            return bad("need at least 3 frequency bins".into());
        }
        self.stft.validate()
    }

    pub fn mamba(&self) -> MambaConfig {
        MambaConfig {
            d_model: self.channels,
            expand: self.expansion,
            d_state: self.ssm_state,
            dt_rank: self.dt_rank,
            conv_width: self.conv_width,
        }
    }

    /// Frequency bins `F` of the spectrogram.
    pub fn freq_bins(&self) -> usize {
        self.stft.n_bins()
    }

    /// Frequency extent `F'` after the encoder's stride-2 convolution.
    pub fn latent_bins(&self) -> usize {
        (self.freq_bins() - 3) / 2 + 1
    }

    /// `(key, value)` pairs; [`ModelConfig::set`] accepts the same keys.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("channels", self.channels.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("expansion", self.expansion.to_string()),
            ("ssm_state", self.ssm_state.to_string()),
            ("dt_rank", self.dt_rank.map_or("auto".into(), |r| r.to_string())),
            ("conv_width", self.conv_width.to_string()),
            ("dense_depth", self.dense_depth.to_string()),
            ("compression", format!("{:?}", self.compression)),
            ("sigmoid_beta", format!("{:?}", self.sigmoid_beta)),
            ("variant", self.variant.to_string()),
            ("identity_init", self.identity_init.to_string()),
            ("n_fft", self.stft.n_fft.to_string()),
            ("win_length", self.stft.win_length.to_string()),
            ("hop", self.stft.hop.to_string()),
        ]
    }

    /// Set one field by key. Returns `Ok(false)` for keys this struct does
    /// not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        match key {
            "channels" => self.channels = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "expansion" => self.expansion = num(key, value)?,
            "ssm_state" => self.ssm_state = num(key, value)?,
            "dt_rank" => self.dt_rank = if value.trim() == "auto" { None } else { Some(num(key, value)?) },
            "conv_width" => self.conv_width = num(key, value)?,
            "dense_depth" => self.dense_depth = num(key, value)?,
            "compression" => self.compression = num(key, value)?,
            "sigmoid_beta" => self.sigmoid_beta = num(key, value)?,
            "variant" => self.variant = value.trim().parse()?,
            "identity_init" => self.identity_init = num(key, value)?,
            "n_fft" => self.stft.n_fft = num(key, value)?,
            "win_length" => self.stft.win_length = num(key, value)?,
            "hop" => self.stft.hop = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
