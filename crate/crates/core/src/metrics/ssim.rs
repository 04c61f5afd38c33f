use super::psnr::check_same_shape;
use crate::error::{usage_err, Result};
use crate::image::Image8;

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L: f64 = 255.0;

fn window_taps() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian filtering over the fully-covered ("valid") region.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, taps: &[f64]) -> f64 {
    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(a, w, h, taps);
    let mu_b = filter_valid(b, w, h, taps);
    let e_aa = filter_valid(&prod(a, a), w, h, taps);
    let e_bb = filter_valid(&prod(b, b), w, h, taps);
    let e_ab = filter_valid(&prod(a, b), w, h, taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    total / n as f64
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, L = 255, computed per RGB channel and averaged.
pub fn ssim(a: &Image8, b: &Image8) -> Result<f64> {
    check_same_shape(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(usage_err!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"));
    }
    let taps = window_taps();
    let total: f64 = (0..3)
        .map(|c| ssim_channel(&a.channel_f64(c), &b.channel_f64(c), w, h, &taps))
        .sum();
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u32) -> Image8 {
        Image8::from_fn(24, 20, |x, y| {
            let v = (x as u32 * 37 + y as u32 * 91 + seed * 13) % 251;
            [v as u8, (v * 3 % 256) as u8, ((x * y) % 256) as u8]
        })
    }

    #[test]
    fn identical_images_score_exactly_one() {
        let a = textured(1);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn symmetric() {
        let (a, b) = (textured(1), textured(2));
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn constant_images_follow_luminance_term() {
        let a = Image8::filled(16, 16, [100; 3]);
        let b = Image8::filled(16, 16, [120; 3]);
        let c1 = (0.01f64 * 255.0).powi(2);
        let expected = (2.0 * 100.0 * 120.0 + c1) / (100.0f64.powi(2) + 120.0f64.powi(2) + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-3);
    }

    #[test]
    fn too_small_rejected() {
        let a = Image8::filled(10, 30, [0; 3]);
        assert!(ssim(&a, &a).is_err());
    }
}
