//! Toy denoising U-Net: ResBlock + prompt cross-attention per level, with
//! MFEM features added to the skips and the middle activation.

use super::config::ModelConfig;
use super::layers::{Init, Net};
use super::mfem::num_taps;
use crate::error::{dim_err, Result};
use crate::{Scalar, Var};

pub(crate) fn init<T: Scalar>(i: &mut Init<'_, T>, cfg: &ModelConfig) -> Result<()> {
    let (c, td, dp, levels) = (cfg.base_channels, cfg.time_dim, cfg.prompt_dim, cfg.levels);
    i.time_mlp("denoiser.encoder.time_embed", td)?;
    i.conv("denoiser.encoder.conv_in", c, cfg.latent_channels(), 3)?;
    for l in 0..levels {
        i.resblock(&format!("denoiser.encoder.level{l}.res"), c, c, td)?;
        i.cross_attention(&format!("denoiser.encoder.level{l}.attn"), c, dp)?;
        if l + 1 < levels {
            i.conv(&format!("denoiser.encoder.down{l}"), c, c, 3)?;
        }
    }
    i.resblock("denoiser.middle.res1", c, c, td)?;
    i.cross_attention("denoiser.middle.attn", c, dp)?;
    i.resblock("denoiser.middle.res2", c, c, td)?;
    for level in (0..levels).rev() {
        i.resblock(&format!("denoiser.decoder.level{level}.res"), 2 * c, c, td)?;
        i.cross_attention(&format!("denoiser.decoder.level{level}.attn"), c, dp)?;
        if level > 0 {
            i.conv(&format!("denoiser.decoder.up{level}"), c, c, 3)?;
        }
    }
    i.conv_zero("denoiser.decoder.out", cfg.latent_channels(), c, 3)
}

impl<T: Scalar> Net<'_, T> {
    /// `ε̂(z_t)`; `emb` is the denoiser's own time embedding.
    pub fn denoiser(&mut self, cfg: &ModelConfig, z_t: Var, emb: Var, features: &[Var], prompt: Var) -> Result<Var> {
        let levels = cfg.levels;
        if features.len() != num_taps(levels) {
            return Err(dim_err!("{} feature maps for {levels} levels", features.len()));
        }
        let mut h = self.conv("denoiser.encoder.conv_in", z_t, 1, 1)?;
        let mut skips = Vec::with_capacity(levels);
        for l in 0..levels {
            h = self.resblock(&format!("denoiser.encoder.level{l}.res"), h, emb)?;
            h = self.cross_attention(&format!("denoiser.encoder.level{l}.attn"), h, prompt)?;
            skips.push(h);
            if l + 1 < levels {
                h = self.conv(&format!("denoiser.encoder.down{l}"), h, 2, 1)?;
            }
        }
        h = self.resblock("denoiser.middle.res1", h, emb)?;
        h = self.cross_attention("denoiser.middle.attn", h, prompt)?;
        h = self.resblock("denoiser.middle.res2", h, emb)?;
        h = self.inject(h, features[levels])?;
        for level in (0..levels).rev() {
            let s = self.inject(skips[level], features[level])?;
            let s = self.inject(s, features[2 * levels - level])?;
            let cat = self.g.concat(&[h, s], 1)?;
            h = self.resblock(&format!("denoiser.decoder.level{level}.res"), cat, emb)?;
            h = self.cross_attention(&format!("denoiser.decoder.level{level}.attn"), h, prompt)?;
            if level > 0 {
                h = self.g.upsample2x(h)?;
                h = self.conv(&format!("denoiser.decoder.up{level}"), h, 1, 1)?;
            }
        }
        let h = self.g.silu(h);
        self.conv("denoiser.decoder.out", h, 1, 1)
    }

    fn inject(&mut self, x: Var, feature: Var) -> Result<Var> {
        if self.g.shape(x) != self.g.shape(feature) {
            return Err(dim_err!(
                "feature {:?} does not match injection site {:?}",
                self.g.shape(feature),
                self.g.shape(x)
            ));
        }
        self.g.add(x, feature)
    }
}
