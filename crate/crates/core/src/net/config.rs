use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Spatial reduction of the latent codec; a power of two ≥ 2.
    pub latent_factor: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub heads: usize,
    pub time_dim: usize,
    pub prompt_len: usize,
    pub prompt_dim: usize,
    /// Diffusion steps `T`.
    pub timesteps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            latent_factor: 4,
            base_channels: 32,
            levels: 3,
            heads: 2,
            time_dim: 64,
            prompt_len: 8,
            prompt_dim: 64,
            timesteps: 1000,
        }
    }
}

impl ModelConfig {
    /// The gradient-check configuration: 16² images, 4×4 latents, 8 channels.
    pub fn micro() -> Self {
        Self {
            image_size: 16,
            latent_factor: 4,
            base_channels: 8,
            levels: 2,
            heads: 2,
            time_dim: 8,
            prompt_len: 3,
            prompt_dim: 6,
            timesteps: 1000,
        }
    }

    pub fn latent_channels(&self) -> usize {
        3 * self.latent_factor * self.latent_factor
    }

    pub fn latent_size(&self) -> usize {
        self.image_size / self.latent_factor
    }

    pub fn latent_shape(&self, batch: usize) -> [usize; 4] {
        let s = self.latent_size();
        [batch, self.latent_channels(), s, s]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.latent_factor;
        if f < 2 || !f.is_power_of_two() {
            return Err(config_err!("latent_factor must be a power of two >= 2, got {f}"));
        }
        if self.levels == 0 {
            return Err(config_err!("levels must be positive"));
        }
        let unit = f << (self.levels - 1);
        if self.image_size == 0 || self.image_size % unit != 0 {
            return Err(config_err!(
                "image_size {} not divisible by latent_factor·2^(levels−1) = {unit}",
                self.image_size
            ));
        }
        if self.heads == 0 || self.base_channels == 0 || self.base_channels % self.heads != 0 {
            return Err(config_err!(
                "base_channels {} not divisible by heads {}",
                self.base_channels,
                self.heads
            ));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(config_err!("time_dim must be even and >= 2, got {}", self.time_dim));
        }
        if self.prompt_len == 0 || self.prompt_dim == 0 {
            return Err(config_err!("prompt dimensions must be positive"));
        }
        if self.timesteps == 0 {
            return Err(config_err!("timesteps must be positive"));
        }
        Ok(())
    }
}

/// Structural switches mirroring the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Space-to-depth plus a 1×1 conv replaces the strided SDRM encoder.
    PixelUnshuffleSdrm,
    /// SDRM ignores `z_t`.
    NoNoiseZt,
    /// MFEM uses time-conditioned ResBlocks instead of transformer blocks.
    ResblockMfem,
    /// MFEM affine generators see a zero embedding.
    MfemNoTime,
    /// `Prompt = MLP(P)`.
    TtpmNoTime,
    /// `Prompt = P`, with `P` frozen.
    FixedPrompt,
    /// Accepted for completeness; there are no pretrained weights here.
    NoPretrained,
    /// Denoiser frozen in both phases.
    FreezeAll,
    /// Whole denoiser trainable in phase 2.
    UnfreezeAll,
    /// Denoiser encoder instead of decoder trainable in phase 2.
    UnfreezeEncoder,
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| config_err!("unknown ablation flag {s:?}"))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::String(s)) => f.write_str(&s),
            _ => write!(f, "{self:?}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ablations(pub BTreeSet<Ablation>);

impl Ablations {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn has(&self, flag: Ablation) -> bool {
        self.0.contains(&flag)
    }

    pub fn validate(&self) -> Result<()> {
        let freeze = [Ablation::FreezeAll, Ablation::UnfreezeAll, Ablation::UnfreezeEncoder];
        let set: Vec<_> = freeze.iter().filter(|f| self.has(**f)).collect();
        if set.len() > 1 {
            return Err(config_err!("freeze flags are mutually exclusive: {set:?}"));
        }
        if self.has(Ablation::FixedPrompt) && self.has(Ablation::TtpmNoTime) {
            return Err(config_err!("fixed_prompt and ttpm_no_time are mutually exclusive"));
        }
        Ok(())
    }
}

impl FromIterator<Ablation> for Ablations {
    fn from_iter<I: IntoIterator<Item = Ablation>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Training phase: 1 trains the conditioning modules, 2 also opens part of
/// the denoiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Phase {
    One,
    Two,
}

impl From<Phase> for u8 {
    fn from(p: Phase) -> u8 {
        match p {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }
}

impl TryFrom<u8> for Phase {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Phase::One),
            2 => Ok(Phase::Two),
            _ => Err(config_err!("phase must be 1 or 2, got {v}")),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// Whether parameter `name` trains in `phase`. Pure function of its inputs.
pub fn trainable(name: &str, phase: Phase, ablations: &Ablations) -> bool {
    if name == "ttpm.P" && ablations.has(Ablation::FixedPrompt) {
        return false;
    }
    if !name.starts_with("denoiser.") {
        return true;
    }
    match phase {
        Phase::One => false,
        Phase::Two if ablations.has(Ablation::FreezeAll) => false,
        Phase::Two if ablations.has(Ablation::UnfreezeAll) => true,
        Phase::Two if ablations.has(Ablation::UnfreezeEncoder) => name.starts_with("denoiser.encoder."),
        Phase::Two => name.starts_with("denoiser.decoder."),
    }
}
