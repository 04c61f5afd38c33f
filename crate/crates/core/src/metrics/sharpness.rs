use crate::image::Image8;

/// ITU-R BT.601 luma, row-major.
pub fn luma(img: &Image8) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// Population variance of the 4-neighbour Laplacian
/// `[[0,1,0],[1,−4,1],[0,1,0]]` of the luma, with replicated borders.
pub fn laplacian_sharpness(img: &Image8) -> f64 {
    let (w, h) = (img.width(), img.height());
    let g = luma(img);
    let at = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        g[yc * w + xc]
    };
    let mut resp = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            resp.push(at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y));
        }
    }
    let n = resp.len() as f64;
    let mean = resp.iter().sum::<f64>() / n;
    resp.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_zero_sharpness() {
        assert_eq!(laplacian_sharpness(&Image8::filled(9, 7, [33, 66, 99])), 0.0);
    }

    #[test]
    fn impulse_matches_kernel_taps() {
        let n = 15;
        let img = Image8::from_fn(n, n, |x, y| if (x, y) == (7, 7) { [200; 3] } else { [0; 3] });
        let v = 0.299 * 200.0 + 0.587 * 200.0 + 0.114 * 200.0;
        // responses: −4v at the impulse, +v at its four neighbours, 0 elsewhere
        let count = (n * n) as f64;
        let mean = (-4.0 * v + 4.0 * v) / count;
        let expected = ((-4.0 * v - mean).powi(2) + 4.0 * (v - mean).powi(2) + (count - 5.0) * mean * mean) / count;
        assert!((laplacian_sharpness(&img) - expected).abs() < 1e-9);
    }
}
