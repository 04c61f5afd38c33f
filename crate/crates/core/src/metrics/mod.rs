//! Reference-based quality metrics and the Laplacian-variance sharpness score.

mod psnr;
mod sharpness;
mod ssim;

use serde::Serialize;

pub use psnr::{mse, psnr};
pub use sharpness::{laplacian_sharpness, luma};
pub use ssim::{ssim, SSIM_WINDOW};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub image: String,
    /// dB; `+inf` for identical images.
    pub psnr: f64,
    pub ssim: f64,
    pub sharpness: f64,
}

/// Per-image metrics with arithmetic means.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_sharpness: f64,
}

impl MetricReport {
    pub fn new(images: Vec<ImageMetrics>) -> Self {
        let n = images.len().max(1) as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| images.iter().map(f).sum::<f64>() / n;
        Self {
            mean_psnr: mean(|m| m.psnr),
            mean_ssim: mean(|m| m.ssim),
            mean_sharpness: mean(|m| m.sharpness),
            images,
        }
    }

    /// `image,psnr,ssim,sharpness` rows plus a trailing `mean` row; infinite
    /// PSNR is written as the literal `inf`.
    pub fn to_csv(&self) -> String {
        fn num(v: f64) -> String {
            if v == f64::INFINITY {
                "inf".to_string()
            } else {
                format!("{v:.6}")
            }
        }
        let mut out = String::from("image,psnr,ssim,sharpness\n");
        for m in &self.images {
            out.push_str(&format!("{},{},{},{}\n", m.image, num(m.psnr), num(m.ssim), num(m.sharpness)));
        }
        out.push_str(&format!(
            "mean,{},{},{}\n",
            num(self.mean_psnr),
            num(self.mean_ssim),
            num(self.mean_sharpness)
        ));
        out
    }
}
