use crate::error::{usage_err, Result};
use crate::image::Image8;

pub(super) fn check_same_shape(a: &Image8, b: &Image8) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(usage_err!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        ));
    }
    Ok(())
}

/// Mean squared error over all pixels and RGB channels.
pub fn mse(a: &Image8, b: &Image8) -> Result<f64> {
    check_same_shape(a, b)?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(total / a.data().len() as f64)
}

/// `10·log10(255² / MSE)` over RGB jointly; `+inf` when the images match.
pub fn psnr(a: &Image8, b: &Image8) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / m).log10())
}
