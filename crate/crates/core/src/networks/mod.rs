//! The shared encoder, decoder and ordinal-regression architecture used by
//! both the color student and the depth teacher.

mod checkpoint;
mod config;
mod model;
mod params;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, FLAG_BUFFER, FLAG_TRAINABLE};
pub use config::{EncoderBlock, NetworkConfig};
pub use model::{
    bin_probabilities, bins_from_logits, decode, depth_from_range_maps, encode, forward, ordinal_head, stack, ForwardOutput, HeadOutput,
    BIN_EPS,
};
pub use params::{init_params, Bound, Mode, NormUpdate, ParamEntry, ParamStore};

use crate::autograd::Graph;
use crate::data::{ColorImage, DepthMap};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Adaptive depth bins of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct BinPartition {
    /// Strictly increasing, inside `[d_min, d_max]`.
    pub centers: Vec<f64>,
    /// Positive, summing to 1.
    pub widths: Vec<f64>,
}

/// Which network and branch a feature tap came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapSource {
    StudentLr,
    StudentHr,
    Teacher,
}

/// A captured `h x w x c` intermediate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTap {
    pub name: String,
    pub source: TapSource,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub depth: DepthMap,
    pub bins: BinPartition,
    /// `H x W x N` per-pixel bin probabilities.
    pub probabilities: Vec<f32>,
    pub n_bins: usize,
    pub taps: Vec<FeatureTap>,
}

/// Widths `normalize(relu(l) + eps)` and centers at the midpoints of the
/// cumulative partition of `[d_min, d_max]`.
pub fn bin_centers_from_logits(logits: &[f64], d_min: f64, d_max: f64) -> BinPartition {
    assert!(logits.len() >= 2, "need at least two bins");
    let raw: Vec<f64> = logits.iter().map(|&l| l.max(0.0) + BIN_EPS).collect();
    let total: f64 = raw.iter().sum();
    let widths: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let mut acc = 0.0;
    let centers = widths
        .iter()
        .map(|&w| {
            let c = d_min + (d_max - d_min) * (acc + w / 2.0);
            acc += w;
            c
        })
        .collect();
    BinPartition { centers, widths }
}

/// Per-pixel `sum_k centers[k] * p[k]` over an `H x W x N` probability grid.
pub fn depth_from_bins(probabilities: &[f32], centers: &[f64], height: usize, width: usize, d_min: f32, d_max: f32) -> DepthMap {
    let n = centers.len();
    assert_eq!(probabilities.len(), height * width * n);
    let values = probabilities
        .chunks_exact(n)
        .map(|p| p.iter().zip(centers).map(|(&p, &c)| p as f64 * c).sum::<f64>() as f32)
        .collect();
    DepthMap::dense_clamped(height, width, values, d_min, d_max)
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: NetworkConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Model { config, params })
    }

    /// Inference-mode forward of a `(B, H, W, C)` batch into per-image predictions.
    pub fn infer(&self, input: Tensor<f32>, source: TapSource) -> Result<Vec<Prediction>> {
        let g = Graph::<f32>::new();
        let b = Bound::new(&g, &self.params, Mode::Eval);
        let (bs, h, w) = (input.dim(0), input.dim(1), input.dim(2));
        let x = g.constant(input);
        let out = forward(&b, &self.config, x)?;
        let n = self.config.n_bins;
        let probs = bin_probabilities(&b, out.range_maps).value();
        let depth = out.depth.value();
        let logits = out.bin_logits.value();
        let cfg = &self.config;
        let mut preds = Vec::with_capacity(bs);
        for i in 0..bs {
            let l: Vec<f64> = logits.data()[i * n..(i + 1) * n].iter().map(|&v| v as f64).collect();
            let bins = bin_centers_from_logits(&l, cfg.d_min as f64, cfg.d_max as f64);
            let taps = out
                .taps
                .iter()
                .map(|&(idx, t)| {
                    let s = t.shape();
                    let per = s[1] * s[2] * s[3];
                    FeatureTap {
                        name: format!("dec.{idx}"),
                        source,
                        height: s[1],
                        width: s[2],
                        channels: s[3],
                        data: t.value().data()[i * per..(i + 1) * per].to_vec(),
                    }
                })
                .collect();
            preds.push(Prediction {
                depth: DepthMap::dense_clamped(
                    h,
                    w,
                    depth.data()[i * h * w..(i + 1) * h * w].to_vec(),
                    cfg.d_min,
                    cfg.d_max,
                ),
                bins,
                probabilities: probs.data()[i * h * w * n..(i + 1) * h * w * n].to_vec(),
                n_bins: n,
                taps,
            });
        }
        Ok(preds)
    }

    /// Inference-mode depth only, one map per batch member, clamped to the
    /// configured range.
    pub fn predict_depth(&self, input: Tensor<f32>) -> Result<Vec<DepthMap>> {
        let g = Graph::<f32>::new();
        let b = Bound::new(&g, &self.params, Mode::Eval);
        let (bs, h, w) = (input.dim(0), input.dim(1), input.dim(2));
        let out = forward(&b, &self.config, g.constant(input))?;
        let depth = out.depth.value();
        let cfg = &self.config;
        Ok(depth
            .data()
            .chunks_exact(h * w)
            .take(bs)
            .map(|d| DepthMap::dense_clamped(h, w, d.to_vec(), cfg.d_min, cfg.d_max))
            .collect())
    }
}

/// `(1, H, W, 3)` network input for a color image.
pub fn color_input(img: &ColorImage) -> Tensor<f32> {
    let (h, w) = img.dims();
    Tensor::new(vec![1, h, w, 3], img.pixels().to_vec())
}

/// `(1, H, W, 1)` teacher input: depth normalized to `[0, 1]`, holes as 0.
pub fn depth_input(d: &DepthMap) -> Tensor<f32> {
    let (h, w) = d.dims();
    Tensor::new(vec![1, h, w, 1], d.normalized())
}

/// Student forward in inference mode.
pub fn forward_mden(img: &ColorImage, model: &Model) -> Result<Prediction> {
    if model.config.in_channels != 3 {
        return Err(invalid!("student needs 3 input channels, config has {}", model.config.in_channels));
    }
    Ok(model.infer(color_input(img), TapSource::StudentHr)?.remove(0))
}

/// Teacher forward in inference mode.
pub fn forward_drn(d: &DepthMap, model: &Model) -> Result<Prediction> {
    if model.config.in_channels != 1 {
        return Err(invalid!("teacher needs 1 input channel, config has {}", model.config.in_channels));
    }
    Ok(model.infer(depth_input(d), TapSource::Teacher)?.remove(0))
}

#[cfg(test)]
mod tests;
