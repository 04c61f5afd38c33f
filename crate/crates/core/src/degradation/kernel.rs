//! Isotropic Gaussian blur kernels and reflect-101 blurring.

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

pub const MAX_KERNEL_SIZE: usize = 41;

/// `2·ceil(3σ) + 1`, capped at [`MAX_KERNEL_SIZE`].
pub fn default_kernel_size(sigma: f64) -> usize {
    let half = (3.0 * sigma).ceil().max(0.0) as usize;
    (2 * half + 1).min(MAX_KERNEL_SIZE)
}

/// Normalized 1-D taps; σ = 0 gives a centred delta.
pub fn gaussian_taps(sigma: f64, size: usize) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(config_err!("kernel size {size} must be odd"));
    }
    if !(sigma >= 0.0) {
        return Err(config_err!("blur sigma {sigma} must be non-negative"));
    }
    let half = (size / 2) as isize;
    let mut taps: Vec<f64> = if sigma == 0.0 {
        (-half..=half).map(|d| if d == 0 { 1.0 } else { 0.0 }).collect()
    } else {
        (-half..=half)
            .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
            .collect()
    };
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(taps)
}

/// `size × size` kernel `exp(−(x²+y²)/2σ²)` normalized to unit sum.
/// `size = None` uses [`default_kernel_size`].
pub fn gaussian_kernel(sigma: f64, size: Option<usize>) -> Result<Tensor<f64>> {
    let size = size.unwrap_or_else(|| default_kernel_size(sigma));
    if size % 2 == 0 {
        return Err(config_err!("kernel size {size} must be odd"));
    }
    if !(sigma >= 0.0) {
        return Err(config_err!("blur sigma {sigma} must be non-negative"));
    }
    let half = (size / 2) as isize;
    let mut k = Vec::with_capacity(size * size);
    for y in -half..=half {
        for x in -half..=half {
            k.push(if sigma == 0.0 {
                if x == 0 && y == 0 { 1.0 } else { 0.0 }
            } else {
                (-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp()
            });
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Tensor::new(vec![size, size], k)
}

/// Reflect-101 index (`dcb|abcd|cba`).
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Separable Gaussian blur of one `w × h` plane with reflect-101 borders.
pub(crate) fn blur_plane(plane: &[f64], w: usize, h: usize, sigma: f64) -> Result<Vec<f64>> {
    let taps = gaussian_taps(sigma, default_kernel_size(sigma))?;
    if taps.len() == 1 {
        return Ok(plane.to_vec());
    }
    let half = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * plane[y * w + reflect101(x as isize + k as isize - half, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[reflect101(y as isize + k as isize - half, h) * w + x])
                .sum();
        }
    }
    Ok(out)
}
