//! Multi-scale feature extraction: a U-shaped stack of transformer blocks
//! whose every output is tapped through its own 1×1 conv.

use super::config::{Ablation, Ablations, ModelConfig};
use super::layers::{Init, Net};
use super::transformer;
use crate::error::{config_err, Result};
use crate::{Scalar, Tensor, Var};

/// Std of the Gaussian-initialised tap convs.
pub const TAP_STD: f64 = 1e-3;

/// Number of emitted feature maps for `levels` resolutions.
pub fn num_taps(levels: usize) -> usize {
    2 * levels + 1
}

fn block_init<T: Scalar>(i: &mut Init<'_, T>, name: &str, cfg: &ModelConfig, abl: &Ablations) -> Result<()> {
    let c = cfg.base_channels;
    if abl.has(Ablation::ResblockMfem) {
        i.resblock(name, c, c, cfg.time_dim)
    } else {
        transformer::init(i, name, c, cfg.heads, cfg.time_dim)
    }
}

pub(crate) fn init<T: Scalar>(i: &mut Init<'_, T>, cfg: &ModelConfig, abl: &Ablations) -> Result<()> {
    let (c, levels) = (cfg.base_channels, cfg.levels);
    for l in 0..levels {
        block_init(i, &format!("mfem.block{l}"), cfg, abl)?;
        if l + 1 < levels {
            i.conv(&format!("mfem.down{l}"), c, c, 3)?;
        }
    }
    block_init(i, &format!("mfem.block{levels}"), cfg, abl)?;
    for j in 0..levels {
        let level = levels - 1 - j;
        i.conv(&format!("mfem.fuse{level}"), c, 2 * c, 1)?;
        block_init(i, &format!("mfem.block{}", levels + 1 + j), cfg, abl)?;
        if level > 0 {
            i.conv(&format!("mfem.up{level}"), c, c, 3)?;
        }
    }
    for k in 0..num_taps(levels) {
        i.conv_gauss(&format!("mfem.tap{k}"), c, c, 1, TAP_STD)?;
    }
    Ok(())
}

impl<T: Scalar> Net<'_, T> {
    fn mfem_block(&mut self, cfg: &ModelConfig, abl: &Ablations, k: usize, x: Var, emb: Var) -> Result<Var> {
        let name = format!("mfem.block{k}");
        if abl.has(Ablation::ResblockMfem) {
            self.resblock(&name, x, emb)
        } else {
            self.transformer_block(&name, x, emb, cfg.heads)
        }
    }

    /// Tapped features in block order: encoder levels (fine → coarse), the
    /// middle block, then decoder levels (coarse → fine).
    pub fn mfem(&mut self, cfg: &ModelConfig, abl: &Ablations, f1: Var, emb: Var) -> Result<Vec<Var>> {
        let levels = cfg.levels;
        let side = self.g.shape(f1)[2];
        if side % (1 << (levels - 1)) != 0 {
            return Err(config_err!("latent side {side} cannot be halved {} times", levels - 1));
        }
        let emb = if abl.has(Ablation::MfemNoTime) {
            let shape = self.g.shape(emb).to_vec();
            self.g.constant(Tensor::zeros(shape))
        } else {
            emb
        };
        let mut outs = Vec::with_capacity(num_taps(levels));
        let mut skips = Vec::with_capacity(levels);
        let mut h = f1;
        for l in 0..levels {
            h = self.mfem_block(cfg, abl, l, h, emb)?;
            outs.push(h);
            skips.push(h);
            if l + 1 < levels {
                h = self.conv(&format!("mfem.down{l}"), h, 2, 1)?;
            }
        }
        h = self.mfem_block(cfg, abl, levels, h, emb)?;
        outs.push(h);
        for j in 0..levels {
            let level = levels - 1 - j;
            let cat = self.g.concat(&[h, skips[level]], 1)?;
            h = self.conv(&format!("mfem.fuse{level}"), cat, 1, 1)?;
            h = self.mfem_block(cfg, abl, levels + 1 + j, h, emb)?;
            outs.push(h);
            if level > 0 {
                h = self.g.upsample2x(h)?;
                h = self.conv(&format!("mfem.up{level}"), h, 1, 1)?;
            }
        }
        outs.into_iter()
            .enumerate()
            .map(|(k, o)| self.conv(&format!("mfem.tap{k}"), o, 1, 1))
            .collect()
    }
}
