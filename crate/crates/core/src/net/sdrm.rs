//! Shallow degradation removal: strided-conv encoder of the LQ image, plus
//! a conv of the noisy latent, through one time-conditioned ResBlock.

use super::config::{Ablation, Ablations, ModelConfig};
use super::layers::{Init, Net};
use crate::error::{dim_err, Result};
use crate::{Scalar, Var};

pub(crate) fn init<T: Scalar>(i: &mut Init<'_, T>, cfg: &ModelConfig, abl: &Ablations) -> Result<()> {
    let c = cfg.base_channels;
    i.time_mlp("sdrm.time_embed", cfg.time_dim)?;
    if abl.has(Ablation::PixelUnshuffleSdrm) {
        i.conv("sdrm.unshuffle", c, cfg.latent_channels(), 1)?;
    } else {
        for k in 0..cfg.latent_factor.trailing_zeros() as usize {
            i.conv(&format!("sdrm.enc{k}"), c, if k == 0 { 3 } else { c }, 3)?;
        }
    }
    if !abl.has(Ablation::NoNoiseZt) {
        i.conv("sdrm.noise", c, cfg.latent_channels(), 3)?;
    }
    i.resblock("sdrm.res", c, c, cfg.time_dim)
}

impl<T: Scalar> Net<'_, T> {
    /// `F1 = ResBlock(F0 + Conv(z_t), emb)` with `F0` the encoded LQ image.
    pub fn sdrm(&mut self, cfg: &ModelConfig, abl: &Ablations, x_lq: Var, z_t: Var, emb: Var) -> Result<Var> {
        let f0 = if abl.has(Ablation::PixelUnshuffleSdrm) {
            let s = self.g.space_to_depth(x_lq, cfg.latent_factor)?;
            self.conv("sdrm.unshuffle", s, 1, 1)?
        } else {
            let convs = cfg.latent_factor.trailing_zeros() as usize;
            let mut h = x_lq;
            for k in 0..convs {
                if k > 0 {
                    h = self.g.silu(h);
                }
                h = self.conv(&format!("sdrm.enc{k}"), h, 2, 1)?;
            }
            h
        };
        let (fs, zs) = (self.g.shape(f0).to_vec(), self.g.shape(z_t).to_vec());
        if zs.len() != 4 || zs[0] != fs[0] || zs[1] != cfg.latent_channels() || zs[2..] != fs[2..] {
            return Err(dim_err!("noisy latent {zs:?} does not match encoded image {fs:?}"));
        }
        let h = if abl.has(Ablation::NoNoiseZt) {
            f0
        } else {
            let n = self.conv("sdrm.noise", z_t, 1, 1)?;
            self.g.add(f0, n)?
        };
        self.resblock("sdrm.res", h, emb)
    }
}
