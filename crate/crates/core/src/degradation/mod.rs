//! Synthetic degradation `y = [(x ⊛ k_σ)↓_r + n_δ]_JPEG_q` and paired
//! dataset synthesis.

mod dataset;
mod kernel;
mod pipeline;
pub mod resample;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub use dataset::{list_pngs, synthesize_dataset, DatasetManifest, ManifestEntry, MANIFEST_FILE};
pub use kernel::{default_kernel_size, gaussian_kernel, gaussian_taps, MAX_KERNEL_SIZE};
pub use pipeline::{degrade, jpeg_round_trip};

/// Parameters of one degradation. `q = None` skips JPEG (test mode only).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    /// Gaussian blur std in pixels.
    pub sigma: f64,
    /// Integer downsampling factor.
    pub r: u32,
    /// White Gaussian noise std in 8-bit intensity units.
    pub delta: f64,
    /// JPEG quality.
    pub q: Option<u8>,
    /// Seeds the noise draw.
    pub seed: u64,
}

impl DegradationParams {
    /// Parameters that leave every image unchanged.
    pub fn identity(seed: u64) -> Self {
        Self {
            sigma: 0.0,
            r: 1,
            delta: 0.0,
            q: None,
            seed,
        }
    }

    /// Hard limits accepted by [`degrade`].
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma <= 10.0) {
            return Err(config_err!("sigma {} outside [0, 10]", self.sigma));
        }
        if !(1..=8).contains(&self.r) {
            return Err(config_err!("downsampling factor {} outside 1..=8", self.r));
        }
        if !(self.delta >= 0.0 && self.delta <= 15.0) {
            return Err(config_err!("noise level {} outside [0, 15]", self.delta));
        }
        if let Some(q) = self.q {
            if !(1..=100).contains(&q) {
                return Err(config_err!("JPEG quality {q} outside 1..=100"));
            }
        }
        Ok(())
    }

    /// Whether the parameters fall in the sampling ranges (JPEG required).
    pub fn within(&self, ranges: &DegradationRanges) -> bool {
        let q_ok = self
            .q
            .is_some_and(|q| (ranges.q[0]..=ranges.q[1]).contains(&q));
        (ranges.sigma[0]..=ranges.sigma[1]).contains(&self.sigma)
            && (ranges.r[0]..=ranges.r[1]).contains(&self.r)
            && (ranges.delta[0]..=ranges.delta[1]).contains(&self.delta)
            && q_ok
    }
}

/// Inclusive sampling ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationRanges {
    pub sigma: [f64; 2],
    pub r: [u32; 2],
    pub delta: [f64; 2],
    pub q: [u8; 2],
}

impl Default for DegradationRanges {
    fn default() -> Self {
        Self {
            sigma: [0.2, 10.0],
            r: [1, 8],
            delta: [0.0, 15.0],
            q: [60, 100],
        }
    }
}

impl DegradationRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma[0] >= 0.0
            && self.sigma[0] <= self.sigma[1]
            && self.sigma[1] <= 10.0
            && self.r[0] >= 1
            && self.r[0] <= self.r[1]
            && self.r[1] <= 8
            && self.delta[0] >= 0.0
            && self.delta[0] <= self.delta[1]
            && self.delta[1] <= 15.0
            && self.q[0] >= 1
            && self.q[0] <= self.q[1]
            && self.q[1] <= 100;
        if ok {
            Ok(())
        } else {
            Err(config_err!("invalid degradation ranges {:?}", self))
        }
    }
}

/// Draw parameters from the default ranges.
pub fn sample_params(rng_seed: u64) -> DegradationParams {
    sample_params_in(rng_seed, &DegradationRanges::default())
}

/// σ ∼ U[σ₀, σ₁], r ∼ U{r₀..r₁}, δ ∼ U[δ₀, δ₁], q ∼ U{q₀..q₁}, all drawn
/// from a ChaCha8 stream seeded by `rng_seed`.
pub fn sample_params_in(rng_seed: u64, ranges: &DegradationRanges) -> DegradationParams {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    DegradationParams {
        sigma: rng.random_range(ranges.sigma[0]..=ranges.sigma[1]),
        r: rng.random_range(ranges.r[0]..=ranges.r[1]),
        delta: rng.random_range(ranges.delta[0]..=ranges.delta[1]),
        q: Some(rng.random_range(ranges.q[0]..=ranges.q[1])),
        seed: rng_seed,
    }
}

/// Per-image seed: FNV-1a 64 over `master_seed` (little-endian) followed by
/// the file name bytes, finished with the SplitMix64 mixer.
pub fn image_seed(master_seed: u64, file_name: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for b in master_seed.to_le_bytes().iter().chain(file_name.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}
