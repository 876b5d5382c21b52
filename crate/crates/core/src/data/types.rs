use crate::error::{invalid, Error, Result};

/// Output size of a `mu`-scaled grid: `round(mu * n)`, ties away from zero.
pub fn scaled_len(n: usize, mu: f64) -> usize {
    (mu * n as f64).round() as usize
}

pub(crate) fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu <= 1.0 {
        Ok(())
    } else {
        Err(invalid!("downsampling factor must lie in (0, 1], got {mu}"))
    }
}

/// Channels-last RGB image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl ColorImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid!("image dimensions must be positive"));
        }
        if pixels.len() != height * width * 3 {
            return Err(invalid!(
                "{}x{} RGB image needs {} samples, got {}",
                height,
                width,
                height * width * 3,
                pixels.len()
            ));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid!("intensity {v} outside [0, 1]"));
        }
        Ok(ColorImage {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        ColorImage {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn hflip(&self) -> ColorImage {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                pixels.extend_from_slice(&self.pixel(y, x));
            }
        }
        ColorImage {
            pixels,
            ..*self
        }
    }

    pub(crate) fn from_raw(height: usize, width: usize, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * 3);
        ColorImage {
            height,
            width,
            pixels: pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Metric depth grid with a validity mask. Invalid pixels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
    d_min: f32,
    d_max: f32,
}

impl DepthMap {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f32>,
        valid: Vec<bool>,
        d_min: f32,
        d_max: f32,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid!("depth map dimensions must be positive"));
        }
        if !(d_min < d_max) {
            return Err(invalid!("depth range needs d_min < d_max, got ({d_min}, {d_max})"));
        }
        if values.len() != height * width || valid.len() != height * width {
            return Err(invalid!("depth buffers do not match {height}x{width}"));
        }
        for (&v, &ok) in values.iter().zip(&valid) {
            if ok && !(v > 0.0 && v >= d_min && v <= d_max) {
                return Err(Error::Domain(format!(
                    "valid depth {v} outside [{d_min}, {d_max}] or not positive"
                )));
            }
            if !ok && v != 0.0 {
                return Err(invalid!("invalid pixel must carry 0, got {v}"));
            }
        }
        Ok(DepthMap {
            height,
            width,
            values,
            valid,
            d_min,
            d_max,
        })
    }

    /// All-valid map.
    pub fn dense(height: usize, width: usize, values: Vec<f32>, d_min: f32, d_max: f32) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::new(height, width, values, valid, d_min, d_max)
    }

    /// Builds a map from raw predictions, clamping into the declared range.
    pub(crate) fn dense_clamped(height: usize, width: usize, values: Vec<f32>, d_min: f32, d_max: f32) -> Self {
        DepthMap {
            height,
            width,
            values: values.into_iter().map(|v| v.clamp(d_min, d_max)).collect(),
            valid: vec![true; height * width],
            d_min,
            d_max,
        }
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        values: Vec<f32>,
        valid: Vec<bool>,
        d_min: f32,
        d_max: f32,
    ) -> Self {
        DepthMap {
            height,
            width,
            values,
            valid,
            d_min,
            d_max,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn d_min(&self) -> f32 {
        self.d_min
    }

    pub fn d_max(&self) -> f32 {
        self.d_max
    }

    pub fn get(&self, y: usize, x: usize) -> Option<f32> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.values[i])
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Depths of the valid pixels, in raster order.
    pub fn valid_values(&self) -> Vec<f32> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter_map(|(&v, &ok)| ok.then_some(v))
            .collect()
    }

    /// `(value - d_min) / (d_max - d_min)` at valid pixels, 0 elsewhere.
    pub fn normalized(&self) -> Vec<f32> {
        let span = self.d_max - self.d_min;
        self.values
            .iter()
            .zip(&self.valid)
            .map(|(&v, &ok)| if ok { (v - self.d_min) / span } else { 0.0 })
            .collect()
    }

    pub fn hflip(&self) -> DepthMap {
        let mut values = Vec::with_capacity(self.values.len());
        let mut valid = Vec::with_capacity(self.valid.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                values.push(self.values[y * self.width + x]);
                valid.push(self.valid[y * self.width + x]);
            }
        }
        DepthMap {
            values,
            valid,
            ..*self
        }
    }

    /// Same grid with a different declared range; used when clamping for evaluation.
    pub fn with_range(&self, d_min: f32, d_max: f32) -> Result<DepthMap> {
        DepthMap::new(
            self.height,
            self.width,
            self.values.clone(),
            self.valid.clone(),
            d_min,
            d_max,
        )
    }
}

/// An HR color image with its LR depth supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub color_hr: ColorImage,
    pub depth_lr: DepthMap,
    pub mu: f64,
    /// HR ground truth for evaluation; training never reads it.
    pub depth_hr_eval: Option<DepthMap>,
}

impl SamplePair {
    pub fn new(
        color_hr: ColorImage,
        depth_lr: DepthMap,
        mu: f64,
        depth_hr_eval: Option<DepthMap>,
    ) -> Result<Self> {
        check_mu(mu)?;
        let (h, w) = color_hr.dims();
        let want = (scaled_len(h, mu), scaled_len(w, mu));
        if depth_lr.dims() != want {
            return Err(invalid!(
                "LR depth is {:?}, expected {:?} for a {}x{} image at mu={}",
                depth_lr.dims(),
                want,
                h,
                w,
                mu
            ));
        }
        if let Some(d) = &depth_hr_eval {
            if d.dims() != (h, w) {
                return Err(invalid!("HR evaluation depth is {:?}, image is {:?}", d.dims(), (h, w)));
            }
        }
        Ok(SamplePair {
            color_hr,
            depth_lr,
            mu,
            depth_hr_eval,
        })
    }
}
