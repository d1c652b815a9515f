use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blocks::{Activation, NormKind};
use crate::error::{Error, Result};
use crate::idpm::IdpmConfig;
use crate::spectral::SpectralConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    #[default]
    Vocals,
    Drums,
    Bass,
    Other,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Vocals, Source::Drums, Source::Bass, Source::Other];

    pub fn name(self) -> &'static str {
        match self {
            Source::Vocals => "vocals",
            Source::Drums => "drums",
            Source::Bass => "bass",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Source::ALL
            .into_iter()
            .find(|src| src.name() == s)
            .ok_or_else(|| Error::config(format!("unknown source {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BlockVersion {
    V2,
    #[default]
    V3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub source: Source,
    /// Channels added per encoder level (`g`).
    pub growth: usize,
    /// Number of down/up-sampling levels (`D`).
    pub depth: usize,
    pub idpm: IdpmConfig,
    /// TDF bottleneck factor (`bf`).
    pub bottleneck_factor: usize,
    pub activation: Activation,
    pub norm: NormKind,
    pub block_version: BlockVersion,
    /// Audio channels of the waveform (packed spectrogram has twice as many).
    pub audio_channels: usize,
    /// STFT frames per inference/training chunk.
    pub chunk_frames: usize,
    /// Seed for parameter initialization.
    pub init_seed: u64,
    pub spectral: SpectralConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_source(Source::Vocals)
    }
}

impl ModelConfig {
    pub fn for_source(source: Source) -> Self {
        let (crop_bins, bottleneck_factor) = match source {
            Source::Bass => (864, 2),
            _ => (2048, 8),
        };
        Self {
            source,
            growth: 32,
            depth: 2,
            idpm: IdpmConfig::default(),
            bottleneck_factor,
            activation: Activation::Gelu,
            norm: NormKind::Instance,
            block_version: BlockVersion::V3,
            audio_channels: 2,
            chunk_frames: 256,
            init_seed: 0,
            spectral: SpectralConfig {
                crop_bins,
                ..SpectralConfig::default()
            },
        }
    }

    /// Small configuration for tests and quick experiments: g=4, D=2, L=1,
    /// H=2, 32 bins by 16 frames per chunk (a 64-point transform, hop 16).
    pub fn miniature() -> Self {
        Self {
            growth: 4,
            depth: 2,
            idpm: IdpmConfig {
                heads: 2,
                repeats: 1,
                group_norm_channels: 2,
            },
            bottleneck_factor: 2,
            chunk_frames: 16,
            spectral: SpectralConfig {
                window_size: 64,
                hop_length: 16,
                crop_bins: 32,
                ..SpectralConfig::default()
            },
            ..Self::for_source(Source::Vocals)
        }
    }

    /// Packed spectrogram channels fed to the network.
    pub fn input_channels(&self) -> usize {
        2 * self.audio_channels
    }

    /// Encoder channel widths before each downsampling, then the latent width.
    pub fn channel_ladder(&self) -> Vec<usize> {
        (1..=self.depth + 1).map(|i| i * self.growth).collect()
    }

    pub fn latent_channels(&self) -> usize {
        self.growth * (self.depth + 1)
    }

    /// F and T must be multiples of this.
    pub fn frame_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Frequency bins at encoder level `level` (0 = full crop).
    pub fn bins_at(&self, level: usize) -> usize {
        self.spectral.crop_bins >> level
    }

    /// Samples per chunk; exactly `chunk_frames` frames under the configured framing.
    pub fn chunk_samples(&self) -> usize {
        let hop = self.spectral.hop_length;
        let base = hop * (self.chunk_frames - 1);
        if self.spectral.center_pad {
            base
        } else {
            base + self.spectral.window_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        if self.block_version == BlockVersion::V2 {
            return Err(Error::Unsupported("TFC-TDF v2 blocks are not implemented".into()));
        }
        if self.growth == 0 {
            return Err(Error::config("growth must be positive"));
        }
        if !(1..=2).contains(&self.audio_channels) {
            return Err(Error::config(format!(
                "audio_channels must be 1 or 2, got {}",
                self.audio_channels
            )));
        }
        let m = self.frame_multiple();
        if self.spectral.crop_bins % m != 0 {
            return Err(Error::config(format!(
                "crop_bins {} is not divisible by 2^depth = {m}",
                self.spectral.crop_bins
            )));
        }
        if self.chunk_frames < m {
            return Err(Error::config(format!(
                "chunk_frames {} is shorter than 2^depth = {m}",
                self.chunk_frames
            )));
        }
        if self.chunk_frames % m != 0 {
            return Err(Error::config(format!(
                "chunk_frames {} is not divisible by 2^depth = {m}",
                self.chunk_frames
            )));
        }
        for level in 0..=self.depth {
            let f = self.bins_at(level);
            if self.bottleneck_factor == 0 || f % self.bottleneck_factor != 0 {
                return Err(Error::config(format!(
                    "bottleneck factor {} does not divide {f} bins at level {level}",
                    self.bottleneck_factor
                )));
            }
        }
        if self.idpm.repeats > 0 {
            self.idpm.head_width(self.latent_channels())?;
        }
        Ok(())
    }

    /// Closed-form parameter count, independent of any built model.
    pub fn param_count(&self) -> usize {
        let g = self.growth;
        let cin = self.input_channels();
        let conv = |ci: usize, co: usize, k: usize| co * ci * k * k + co;
        let block = |c: usize, f: usize| {
            let unit = match self.norm {
                NormKind::Instance => 2 * c,
                NormKind::None => 0,
            } + conv(c, c, 3);
            let tdf = {
                let h = f / self.bottleneck_factor;
                f * h + h + h * f + f
            };
            2 * 3 * unit + tdf + conv(c, c, 1)
        };
        let rnn = |c: usize| {
            let h = 2 * c;
            2 * c + 2 * (4 * h * c + 4 * h * h + 4 * h) + (4 * c * c + c)
        };
        let mut n = conv(cin, g, 1) + conv(g, cin, 1);
        for i in 0..self.depth {
            let c = g * (i + 1);
            let f = self.bins_at(i);
            // Encoder block + downsampling, decoder upsampling + block.
            n += block(c, f) + conv(c, c + g, 3);
            n += (c + g) * c * 9 + c + block(c, f);
        }
        n += block(self.latent_channels(), self.bins_at(self.depth));
        if self.idpm.repeats > 0 {
            let width = self.latent_channels() / self.idpm.heads;
            n += self.idpm.repeats * 2 * rnn(width);
        }
        n
    }
}
