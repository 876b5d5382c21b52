use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::resize::downsample_depth;
use super::types::{check_mu, ColorImage, DepthMap, SamplePair};
use crate::error::{invalid, Result};

/// Parameters of one procedural scene. `mu` sets the LR supervision grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub num_rects: usize,
    pub depth_range: (f32, f32),
    pub texture_amplitude: f32,
    pub size: (usize, usize),
    pub mu: f64,
}

/// Axis-aligned rectangle covering rows `y0..y1` and columns `x0..x1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneRect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
    pub depth: f32,
    /// Stripe frequency in cycles per image along (y, x), and phase.
    pub freq: (f32, f32),
    pub phase: f32,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (d0, d1) = self.depth_range;
        if !(d0 > 0.0 && d0 < d1) {
            return Err(invalid!("depth range must satisfy 0 < d_min < d_max"));
        }
        if !(0.0..=0.5).contains(&self.texture_amplitude) {
            return Err(invalid!("texture amplitude must lie in [0, 0.5]"));
        }
        if self.size.0 < 2 || self.size.1 < 2 {
            return Err(invalid!("scene size {:?} too small", self.size));
        }
        check_mu(self.mu)
    }

    /// Rectangles in paint order (farthest first).
    pub fn rects(&self) -> Vec<SceneRect> {
        let (h, w) = self.size;
        let (d0, d1) = self.depth_range;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut rects: Vec<SceneRect> = (0..self.num_rects)
            .map(|_| {
                let rh = rng.random_range((h / 8).max(1)..=(h / 2).max(1));
                let rw = rng.random_range((w / 8).max(1)..=(w / 2).max(1));
                let y0 = rng.random_range(0..=h - rh);
                let x0 = rng.random_range(0..=w - rw);
                SceneRect {
                    y0,
                    y1: y0 + rh,
                    x0,
                    x1: x0 + rw,
                    depth: rng.random_range(d0..d1),
                    freq: (rng.random_range(1.0..8.0), rng.random_range(1.0..8.0)),
                    phase: rng.random_range(0.0..std::f32::consts::TAU),
                }
            })
            .collect();
        rects.sort_by(|a, b| b.depth.total_cmp(&a.depth));
        rects
    }
}

/// HSV with full saturation to RGB; `hue` in degrees.
fn hsv(hue: f32, v: f32) -> [f32; 3] {
    let h = (hue / 60.0).rem_euclid(6.0);
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r * v, g * v, b * v]
}

/// Hue for a depth: 0 degrees at `d_min` through 240 degrees at `d_max`.
pub fn depth_hue(d: f32, (d0, d1): (f32, f32)) -> f32 {
    240.0 * ((d - d0) / (d1 - d0)).clamp(0.0, 1.0)
}

pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<SamplePair> {
    spec.validate()?;
    let (h, w) = spec.size;
    let (d0, d1) = spec.depth_range;
    let rects = spec.rects();
    // index into `rects` of the rectangle owning each pixel
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for (k, r) in rects.iter().enumerate() {
        for y in r.y0..r.y1 {
            owner[y * w + r.x0..y * w + r.x1].fill(Some(k));
        }
    }
    let a = spec.texture_amplitude;
    let mut depth = vec![d1; h * w];
    let mut px = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let rgb = match owner[y * w + x] {
                None => hsv(depth_hue(d1, spec.depth_range), 1.0),
                Some(k) => {
                    let r = &rects[k];
                    depth[y * w + x] = r.depth;
                    let t = r.freq.0 * (y as f32 + 0.5) / h as f32 + r.freq.1 * (x as f32 + 0.5) / w as f32;
                    let tex = 0.5 + 0.5 * (std::f32::consts::TAU * t + r.phase).sin();
                    hsv(depth_hue(r.depth, spec.depth_range), 1.0 - a + a * tex)
                }
            };
            px.extend(rgb);
        }
    }
    let color = ColorImage::from_raw(h, w, px);
    let depth_hr = DepthMap::dense(h, w, depth, d0, d1)?;
    let depth_lr = downsample_depth(&depth_hr, spec.mu)?;
    SamplePair::new(color, depth_lr, spec.mu, Some(depth_hr))
}

/// Knobs for a whole procedural dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub count: usize,
    pub seed: u64,
    pub size: (usize, usize),
    pub mu: f64,
    pub depth_range: (f32, f32),
    pub max_rects: usize,
    pub texture_amplitude: f32,
}

impl SyntheticDatasetSpec {
    /// Scene `i`'s spec; the rectangle count is drawn from `1..=max_rects`.
    pub fn scene(&self, i: usize) -> SyntheticSceneSpec {
        let seed = scene_seed(self.seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
        SyntheticSceneSpec {
            seed,
            num_rects: rng.random_range(1..=self.max_rects.max(1)),
            depth_range: self.depth_range,
            texture_amplitude: self.texture_amplitude,
            size: self.size,
            mu: self.mu,
        }
    }

    pub fn generate(&self) -> Result<Vec<SamplePair>> {
        (0..self.count).map(|i| generate_synthetic_scene(&self.scene(i))).collect()
    }
}

/// SplitMix64 mixing of a base seed and an index.
pub fn scene_seed(base: u64, i: u64) -> u64 {
    let mut z = base ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
