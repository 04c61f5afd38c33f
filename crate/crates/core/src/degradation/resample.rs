//! Separable bicubic resampling (Catmull-Rom, a = −0.5).
//!
//! Downscaling widens the kernel by the scale factor (antialiased, as in
//! MATLAB `imresize`); borders replicate. Pixel centres map as
//! `src = (dst + 0.5) · in/out − 0.5`.

pub const CUBIC_A: f64 = -0.5;

pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Taps `(source index, weight)` for output sample `i`, normalized to sum 1.
pub fn taps(i: usize, in_len: usize, out_len: usize) -> Vec<(usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    let width = scale.max(1.0);
    let center = (i as f64 + 0.5) * scale - 0.5;
    let lo = (center - 2.0 * width).floor() as isize;
    let hi = (center + 2.0 * width).ceil() as isize;
    let mut out: Vec<(usize, f64)> = Vec::new();
    for j in lo..=hi {
        let w = cubic((j as f64 - center) / width);
        if w == 0.0 {
            continue;
        }
        let src = j.clamp(0, in_len as isize - 1) as usize;
        match out.iter_mut().find(|(s, _)| *s == src) {
            Some((_, acc)) => *acc += w,
            None => out.push((src, w)),
        }
    }
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    out.iter_mut().for_each(|(_, w)| *w /= total);
    out
}

/// Resize one `w × h` plane to `ow × oh`.
pub fn resize_plane(plane: &[f64], w: usize, h: usize, ow: usize, oh: usize) -> Vec<f64> {
    if (w, h) == (ow, oh) {
        return plane.to_vec();
    }
    let col_taps: Vec<_> = (0..ow).map(|x| taps(x, w, ow)).collect();
    let row_taps: Vec<_> = (0..oh).map(|y| taps(y, h, oh)).collect();
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for (x, t) in col_taps.iter().enumerate() {
            tmp[y * ow + x] = t.iter().map(|&(s, wt)| wt * plane[y * w + s]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for (y, t) in row_taps.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = t.iter().map(|&(s, wt)| wt * tmp[s * ow + x]).sum();
        }
    }
    out
}
