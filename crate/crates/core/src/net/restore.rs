use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::codec::latent_decode;
use super::model::RestorationModel;
use crate::diffusion::{ddim_sample_from, NoiseSchedule, SamplerConfig};
use crate::error::{usage_err, Result};
use crate::{Image8, Scalar, Tensor};

/// Restore one LQ image: scale to [−1, 1], DDIM-sample a latent with the
/// conditioning recomputed per step, decode, clamp and quantise.
pub fn restore<T: Scalar>(
    model: &RestorationModel<T>,
    x_lq: &Image8,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Image8> {
    Ok(restore_batch(model, std::slice::from_ref(x_lq), sched, cfg)?.remove(0))
}

/// Restore several images in one batch. Every image starts from the same
/// `z_T` drawn from `cfg.seed`.
pub fn restore_batch<T: Scalar>(
    model: &RestorationModel<T>,
    images: &[Image8],
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Vec<Image8>> {
    let mc = model.config();
    if images.is_empty() {
        return Err(usage_err!("nothing to restore"));
    }
    for img in images {
        if img.width() != mc.image_size || img.height() != mc.image_size {
            return Err(usage_err!(
                "image is {}x{}, model expects {}x{}",
                img.width(),
                img.height(),
                mc.image_size,
                mc.image_size
            ));
        }
    }
    let x = Tensor::stack(&images.iter().map(Image8::to_tensor::<T>).collect::<Vec<_>>())?;
    let single = mc.latent_shape(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let z_one = Tensor::<T>::randn(single[1..].to_vec(), 1.0, &mut rng);
    let z_init = Tensor::stack(&vec![z_one; images.len()])?;
    let z = ddim_sample_from(model, &x, z_init, sched, cfg)?;
    let decoded = latent_decode(&z, mc.latent_factor)?;
    (0..images.len())
        .map(|i| Image8::from_tensor(&decoded.index_first(i)?))
        .collect()
}
