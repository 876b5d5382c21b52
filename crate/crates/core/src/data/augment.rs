use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::types::{ColorImage, DepthMap, SamplePair};

pub const MAX_ROTATION_DEG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub angle_deg: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        angle_deg: 0.0,
    };
}

/// Flip with probability 0.5 and an angle uniform in [-5, 5] degrees.
pub fn draw_augmentation(seed: u64) -> AugmentParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = rng.random_bool(0.5);
    let angle_deg = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
    AugmentParams { flip, angle_deg }
}

pub fn augment(pair: &SamplePair, seed: u64) -> SamplePair {
    apply_augmentation(pair, draw_augmentation(seed))
}

/// Mirrors (optionally) and then rotates every grid of the pair about its own
/// center. Color is resampled bilinearly, depth by nearest neighbor; samples
/// from outside the source become black / invalid.
pub fn apply_augmentation(pair: &SamplePair, p: AugmentParams) -> SamplePair {
    let mut color = pair.color_hr.clone();
    let mut depth = pair.depth_lr.clone();
    let mut hr = pair.depth_hr_eval.clone();
    if p.flip {
        color = color.hflip();
        depth = depth.hflip();
        hr = hr.map(|d| d.hflip());
    }
    if p.angle_deg != 0.0 {
        color = rotate_color(&color, p.angle_deg);
        depth = rotate_depth(&depth, p.angle_deg);
        hr = hr.map(|d| rotate_depth(&d, p.angle_deg));
    }
    SamplePair {
        color_hr: color,
        depth_lr: depth,
        mu: pair.mu,
        depth_hr_eval: hr,
    }
}

/// Source position (continuous, pixel `i` spans `[i, i+1)`) of output pixel
/// `(y, x)` under a counter-clockwise rotation by `angle_deg`.
pub fn rotation_source(h: usize, w: usize, y: usize, x: usize, angle_deg: f64) -> (f64, f64) {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let u = x as f64 + 0.5 - cx;
    let v = y as f64 + 0.5 - cy;
    // Image rows grow downward, so a visual CCW turn is a clockwise one in (u, v).
    let su = c * u - s * v;
    let sv = s * u + c * v;
    (sv + cy, su + cx)
}

fn inside(h: usize, w: usize, sy: f64, sx: f64) -> bool {
    sy >= 0.0 && sx >= 0.0 && sy < h as f64 && sx < w as f64
}

pub fn rotate_color(img: &ColorImage, angle_deg: f64) -> ColorImage {
    let (h, w) = img.dims();
    let src = img.pixels();
    let mut out = vec![0.0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = rotation_source(h, w, y, x, angle_deg);
            if !inside(h, w, sy, sx) {
                continue;
            }
            // pixel centers sit at integer + 0.5
            let fy = (sy - 0.5).max(0.0);
            let fx = (sx - 0.5).max(0.0);
            let y0 = (fy.floor() as usize).min(h - 1);
            let x0 = (fx.floor() as usize).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let wy = (fy - y0 as f64) as f32;
            let wx = (fx - x0 as f64) as f32;
            for ch in 0..3 {
                let p = |yy: usize, xx: usize| src[(yy * w + xx) * 3 + ch];
                let top = (1.0 - wx) * p(y0, x0) + wx * p(y0, x1);
                let bot = (1.0 - wx) * p(y1, x0) + wx * p(y1, x1);
                out[(y * w + x) * 3 + ch] = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    ColorImage::from_raw(h, w, out)
}

pub fn rotate_depth(d: &DepthMap, angle_deg: f64) -> DepthMap {
    let (h, w) = d.dims();
    let mut values = vec![0.0f32; h * w];
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = rotation_source(h, w, y, x, angle_deg);
            if !inside(h, w, sy, sx) {
                continue;
            }
            if let Some(v) = d.get(sy as usize, sx as usize) {
                values[y * w + x] = v;
                valid[y * w + x] = true;
            }
        }
    }
    DepthMap::from_parts_unchecked(h, w, values, valid, d.d_min(), d.d_max())
}
