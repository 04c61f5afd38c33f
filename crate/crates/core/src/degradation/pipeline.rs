use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::ImageFormat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::kernel::{blur_plane, reflect101};
use super::resample::resize_plane;
use super::DegradationParams;
use crate::error::{config_err, Error, Result};
use crate::image::Image8;

/// ChaCha stream used for the noise draw; parameter sampling uses stream 0.
const NOISE_STREAM: u64 = 1;

fn planes_of(img: &Image8) -> [Vec<f64>; 3] {
    [img.channel_f64(0), img.channel_f64(1), img.channel_f64(2)]
}

fn quantize(planes: &[Vec<f64>; 3], w: usize, h: usize) -> Image8 {
    Image8::from_fn(w, h, |x, y| {
        let at = |c: usize| planes[c][y * w + x].round().clamp(0.0, 255.0) as u8;
        [at(0), at(1), at(2)]
    })
}

/// Reflect-101 pad on the bottom/right so both extents divide `r`.
fn pad_to_multiple(planes: [Vec<f64>; 3], w: usize, h: usize, r: usize) -> ([Vec<f64>; 3], usize, usize) {
    let (pw, ph) = (w.div_ceil(r) * r, h.div_ceil(r) * r);
    if (pw, ph) == (w, h) {
        return (planes, w, h);
    }
    let padded = planes.map(|p| {
        let mut out = vec![0.0; pw * ph];
        for y in 0..ph {
            for x in 0..pw {
                out[y * pw + x] = p[reflect101(y as isize, h) * w + reflect101(x as isize, w)];
            }
        }
        out
    });
    (padded, pw, ph)
}

/// Baseline JPEG encode/decode at quality `q`.
pub fn jpeg_round_trip(img: &Image8, q: u8) -> Result<Image8> {
    let mut buf = Cursor::new(Vec::new());
    let enc = JpegEncoder::new_with_quality(&mut buf, q);
    img.to_rgb().write_with_encoder(enc).map_err(|e| Error::Image {
        path: "<jpeg>".into(),
        message: e.to_string(),
    })?;
    let decoded = image::load_from_memory_with_format(buf.get_ref(), ImageFormat::Jpeg)
        .map_err(|e| Error::Image {
            path: "<jpeg>".into(),
            message: e.to_string(),
        })?;
    Ok(Image8::from_rgb(decoded.to_rgb8()))
}

/// Blur → bicubic ↓r → + N(0, δ²) → clamp/round → JPEG_q → bicubic back to
/// the input size. Extents not divisible by `r` are reflect-padded first and
/// cropped at the end. Pure in `(hq, params)`.
pub fn degrade(hq: &Image8, params: &DegradationParams) -> Result<Image8> {
    if params.r < 1 {
        return Err(config_err!("downsampling factor must be ≥ 1"));
    }
    params.validate()?;
    let (w, h, r) = (hq.width(), hq.height(), params.r as usize);
    let (planes, pw, ph) = pad_to_multiple(planes_of(hq), w, h, r);

    let mut small = Vec::with_capacity(3);
    for p in &planes {
        let blurred = blur_plane(p, pw, ph, params.sigma)?;
        small.push(resize_plane(&blurred, pw, ph, pw / r, ph / r));
    }
    let mut small: [Vec<f64>; 3] = small.try_into().expect("three channels");
    let (sw, sh) = (pw / r, ph / r);

    if params.delta > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(NOISE_STREAM);
        let noise = Normal::new(0.0, params.delta).map_err(|e| config_err!("noise level: {e}"))?;
        // draw order: row, column, channel
        for i in 0..sw * sh {
            for plane in small.iter_mut() {
                plane[i] += noise.sample(&mut rng);
            }
        }
    }
    let mut lq = quantize(&small, sw, sh);
    if let Some(q) = params.q {
        lq = jpeg_round_trip(&lq, q)?;
    }
    if (sw, sh) == (w, h) {
        return Ok(lq);
    }
    let up = planes_of(&lq).map(|p| resize_plane(&p, sw, sh, pw, ph));
    let full = quantize(&up, pw, ph);
    if (pw, ph) == (w, h) {
        return Ok(full);
    }
    Ok(Image8::from_fn(w, h, |x, y| full.pixel(x, y)))
}
