//! Deterministic face-like test images: a shaded head on a gradient
//! background with hair, eyes, brows, nose and mouth, plus fine texture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Image8;

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Soft inside-test for an axis-aligned ellipse: 1 inside, 0 outside, with
/// a one-pixel ramp.
fn ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64, px: f64) -> f64 {
    let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
    ((1.0 - d) * rx.min(ry) / px + 0.5).clamp(0.0, 1.0)
}

pub fn face_image(size: usize, seed: u64) -> Image8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let s = size as f64;
    let bg_top = [u(20.0, 200.0), u(20.0, 200.0), u(20.0, 200.0)];
    let bg_bottom = [u(20.0, 200.0), u(20.0, 200.0), u(20.0, 200.0)];
    let tone = u(0.0, 1.0);
    let skin = mix([235.0, 200.0, 170.0], [120.0, 80.0, 55.0], tone);
    let hair = [u(10.0, 120.0), u(10.0, 90.0), u(5.0, 60.0)];
    let iris = [u(30.0, 120.0), u(40.0, 130.0), u(40.0, 150.0)];
    let lips = [u(150.0, 210.0), u(60.0, 110.0), u(60.0, 110.0)];
    let (cx, cy) = (s * u(0.45, 0.55), s * u(0.50, 0.58));
    let (rx, ry) = (s * u(0.26, 0.32), s * u(0.33, 0.40));
    let eye_y = cy - ry * u(0.15, 0.30);
    let eye_dx = rx * u(0.35, 0.45);
    let eye_r = s * u(0.035, 0.05);
    let mouth_y = cy + ry * u(0.40, 0.55);
    let mouth_w = rx * u(0.35, 0.55);
    let hair_line = cy - ry * u(0.45, 0.70);
    let light = u(-0.6, 0.6);
    let phase = u(0.0, 6.28);
    let freq = u(0.8, 1.6);

    Image8::from_fn(size, size, |xi, yi| {
        let (x, y) = (xi as f64 + 0.5, yi as f64 + 0.5);
        let mut c = mix(bg_top, bg_bottom, y / s);
        // fine background texture
        let tex = 6.0 * ((x * freq + phase).sin() * (y * freq * 0.7).cos());
        c = [c[0] + tex, c[1] + tex, c[2] + tex];

        // hair: a larger ellipse behind the head, cut below the hairline
        let hair_in = ellipse(x, y, cx, cy - ry * 0.12, rx * 1.12, ry * 1.05, 1.0);
        c = mix(c, hair, hair_in);

        let head = ellipse(x, y, cx, cy, rx, ry, 1.0);
        let shade = 1.0 + 0.25 * light * (x - cx) / rx - 0.1 * ((y - cy) / ry).powi(2);
        let face = [skin[0] * shade, skin[1] * shade, skin[2] * shade];
        let below_hair = ((y - hair_line) / 1.5 + 0.5).clamp(0.0, 1.0);
        c = mix(c, face, head * below_hair);

        for side in [-1.0, 1.0] {
            let ex = cx + side * eye_dx;
            let white = ellipse(x, y, ex, eye_y, eye_r * 1.8, eye_r, 1.0);
            c = mix(c, [240.0, 240.0, 235.0], white);
            c = mix(c, iris, ellipse(x, y, ex, eye_y, eye_r * 0.8, eye_r * 0.8, 1.0));
            c = mix(c, [10.0, 10.0, 10.0], ellipse(x, y, ex, eye_y, eye_r * 0.35, eye_r * 0.35, 1.0));
            let brow = ellipse(x, y, ex, eye_y - eye_r * 2.2, eye_r * 2.0, eye_r * 0.45, 1.0);
            c = mix(c, hair, brow);
        }
        let nose = ellipse(x, y, cx, (eye_y + mouth_y) / 2.0, rx * 0.09, ry * 0.16, 1.0);
        c = mix(c, [face[0] * 0.8, face[1] * 0.75, face[2] * 0.75], nose * 0.8);
        let mouth = ellipse(x, y, cx, mouth_y, mouth_w, ry * 0.06, 1.0);
        c = mix(c, lips, mouth);

        [0, 1, 2].map(|k| c[k].round().clamp(0.0, 255.0) as u8)
    })
}

/// `count` faces with seeds `base_seed..base_seed + count`.
pub fn face_set(size: usize, count: usize, base_seed: u64) -> Vec<Image8> {
    (0..count as u64).map(|i| face_image(size, base_seed + i)).collect()
}
