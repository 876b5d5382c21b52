//! Depth evaluation statistics, the evaluation protocol knobs and report
//! emission.
//!
//! Per-image JSON records look like
//!
//! ```text
//! {"per_image": [{"name": "00003", "metrics": {...}}, ...], "aggregate": {...}}
//! ```
//!
//! where each metrics object carries `rel`, `sq_rel`, `rmse`, `rmse_log`,
//! `log10`, `delta1..3`, `n_pixels` and a `protocol` object with `cap_m`,
//! `crop` (`{y0, y1, x0, x1}` half-open) and `mirror_averaged`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{ColorImage, DepthMap};
use crate::error::{invalid, Error, Result};
use crate::networks::{color_input, Model};
use crate::tensor::Tensor;

/// Half-open pixel rectangle: rows `[y0, y1)`, columns `[x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Crop {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Protocol {
    pub cap_m: Option<f64>,
    pub crop: Option<Crop>,
    pub mirror_averaged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_pixels: usize,
    pub protocol: Protocol,
}

pub const DELTA_BASE: f64 = 1.25;

/// The standard crop for driving-scene evaluation, scaled to `h x w`.
pub fn garg_crop(h: usize, w: usize) -> Crop {
    let f = |frac: f64, n: usize| (frac * n as f64).floor() as usize;
    Crop {
        y0: f(0.408_108_11, h),
        y1: f(0.991_891_89, h),
        x0: f(0.035_947_71, w),
        x1: f(0.964_052_29, w),
    }
}

/// Metrics over the pixels valid in `gt` (and inside `crop`). With a cap,
/// both maps are clamped to `[gt.d_min, cap]` first.
pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, cap: Option<f64>, crop: Option<Crop>) -> Result<MetricsReport> {
    if pred.dims() != gt.dims() {
        return Err(invalid!("prediction is {:?}, ground truth is {:?}", pred.dims(), gt.dims()));
    }
    let (h, w) = gt.dims();
    if let Some(c) = crop {
        if c.y0 >= c.y1 || c.x0 >= c.x1 || c.y1 > h || c.x1 > w {
            return Err(invalid!("crop {c:?} does not fit a {h}x{w} map"));
        }
    }
    let clamp = |v: f64| match cap {
        Some(cap) => v.clamp(gt.d_min() as f64, cap),
        None => v,
    };
    let mut acc = [0.0f64; 8];
    let mut n = 0usize;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !gt.valid()[i] || crop.is_some_and(|c| !c.contains(y, x)) {
                continue;
            }
            let g = clamp(gt.values()[i] as f64);
            let p = clamp(pred.values()[i] as f64);
            if !(p > 0.0) {
                return Err(Error::Domain(format!("prediction {p} at ({y}, {x}) is not positive")));
            }
            let d = g - p;
            let ratio = (g / p).max(p / g);
            acc[0] += d.abs() / g;
            acc[1] += d * d / g;
            acc[2] += d * d;
            acc[3] += (g.ln() - p.ln()).powi(2);
            acc[4] += (g.log10() - p.log10()).abs();
            for (k, slot) in acc[5..].iter_mut().enumerate() {
                if ratio < DELTA_BASE.powi(k as i32 + 1) {
                    *slot += 1.0;
                }
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidPixels("no valid ground truth inside the evaluated region".into()));
    }
    let m = acc.map(|a| a / n as f64);
    Ok(MetricsReport {
        rel: m[0],
        sq_rel: m[1],
        rmse: m[2].sqrt(),
        rmse_log: m[3].sqrt(),
        log10: m[4],
        delta1: m[5],
        delta2: m[6],
        delta3: m[7],
        n_pixels: n,
        protocol: Protocol {
            cap_m: cap,
            crop,
            mirror_averaged: false,
        },
    })
}

impl MetricsReport {
    /// Arithmetic mean of each statistic over images; pixel counts add up.
    /// The protocol is taken from the first report.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports.first().ok_or_else(|| invalid!("no reports to average"))?;
        let k = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Ok(MetricsReport {
            rel: avg(|r| r.rel),
            sq_rel: avg(|r| r.sq_rel),
            rmse: avg(|r| r.rmse),
            rmse_log: avg(|r| r.rmse_log),
            log10: avg(|r| r.log10),
            delta1: avg(|r| r.delta1),
            delta2: avg(|r| r.delta2),
            delta3: avg(|r| r.delta3),
            n_pixels: reports.iter().map(|r| r.n_pixels).sum(),
            protocol: first.protocol,
        })
    }

    /// `rel=0.0123 sq_rel=... d1=... n=...` on one line.
    pub fn to_line(&self) -> String {
        format!(
            "rel={:.6} sq_rel={:.6} rmse={:.6} rmse_log={:.6} log10={:.6} d1={:.6} d2={:.6} d3={:.6} n={}",
            self.rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.log10,
            self.delta1,
            self.delta2,
            self.delta3,
            self.n_pixels
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub name: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageRecord>,
    pub aggregate: MetricsReport,
}

impl EvalReport {
    pub fn from_records(per_image: Vec<ImageRecord>) -> Result<Self> {
        let all: Vec<MetricsReport> = per_image.iter().map(|r| r.metrics.clone()).collect();
        let aggregate = MetricsReport::mean(&all)?;
        Ok(EvalReport { per_image, aggregate })
    }

    /// One line per image, then a protocol line and the aggregate.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.per_image {
            let _ = writeln!(s, "{} {}", r.name, r.metrics.to_line());
        }
        let p = &self.aggregate.protocol;
        let cap = p.cap_m.map_or("none".to_string(), |c| c.to_string());
        let crop = p
            .crop
            .map_or("none".to_string(), |c| format!("{}..{},{}..{}", c.y0, c.y1, c.x0, c.x1));
        let _ = writeln!(s, "# protocol cap_m={cap} crop={crop} mirror_averaged={}", p.mirror_averaged);
        let _ = writeln!(s, "mean {}", self.aggregate.to_line());
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| invalid!("malformed report: {e}"))
    }
}

/// `0.5 * (f(x) + flip(f(flip(x))))` for each image, both passes batched.
pub fn mirror_average_batch(model: &Model, images: &[&ColorImage]) -> Result<Vec<DepthMap>> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let (h, w) = first.dims();
    if images.iter().any(|i| i.dims() != (h, w)) {
        return Err(invalid!("batch images differ in size"));
    }
    let mut data = Vec::with_capacity(2 * images.len() * h * w * 3);
    for img in images {
        data.extend_from_slice(img.pixels());
        data.extend_from_slice(img.hflip().pixels());
    }
    let preds = model.predict_depth(Tensor::new(vec![2 * images.len(), h, w, 3], data))?;
    Ok(preds
        .chunks_exact(2)
        .map(|pair| {
            let back = pair[1].hflip();
            let avg = pair[0]
                .values()
                .iter()
                .zip(back.values())
                .map(|(&a, &b)| 0.5 * (a + b))
                .collect();
            DepthMap::dense_clamped(h, w, avg, pair[0].d_min(), pair[0].d_max())
        })
        .collect())
}

/// Mirror-averaged inference on one image.
pub fn mirror_average_predict(model: &Model, img: &ColorImage) -> Result<DepthMap> {
    Ok(mirror_average_batch(model, &[img])?.remove(0))
}

/// Plain (single pass) inference on one image.
pub fn predict(model: &Model, img: &ColorImage) -> Result<DepthMap> {
    Ok(model.predict_depth(color_input(img))?.remove(0))
}

#[cfg(test)]
mod tests;
