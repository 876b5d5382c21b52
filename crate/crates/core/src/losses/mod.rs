//! Training objectives. Every loss is written once over [`Var`]s so the
//! trainer differentiates exactly what the value-level functions report;
//! the value-level functions evaluate the same graph in `f64`.

use std::rc::Rc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::data::{scaled_len, scene_seed, DepthMap};
use crate::error::{invalid, Error, Result};
use crate::networks::{BinPartition, FeatureTap};
use crate::tensor::{Float, Tensor};

pub const DEFAULT_CHAMFER_POINTS: usize = 512;
pub const DEFAULT_AFFINITY_CAP: usize = 1024;

/// Loss coefficients plus the two tractability caps.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub a: f64,
    pub b_si: f64,
    /// One weight per distillation tap pair.
    pub w: Vec<f64>,
    /// Ground-truth depths kept for the Chamfer term.
    pub chamfer_points: usize,
    /// Largest `h * w` fed to [`affinity`]; larger grids are resized first.
    pub affinity_cap: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 10.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: 0.1,
            a: 10.0,
            b_si: 0.85,
            w: vec![1.0, 1.0],
            chamfer_points: DEFAULT_CHAMFER_POINTS,
            affinity_cap: DEFAULT_AFFINITY_CAP,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("a", self.a),
            ("b_si", self.b_si),
        ];
        for (name, v) in named.into_iter().chain(self.w.iter().map(|&v| ("w", v))) {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid!("loss weight {name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.b_si > 1.0 {
            return Err(invalid!("b_si must lie in [0, 1], got {}", self.b_si));
        }
        if self.chamfer_points == 0 || self.affinity_cap == 0 {
            return Err(invalid!("chamfer_points and affinity_cap must be positive"));
        }
        Ok(())
    }
}

/// The three weighted parts of the student objective, already multiplied by
/// their coefficients. Disabled (zero-weight) parts are `None`.
pub struct MdenTerms<'g, T> {
    pub lr: Option<Var<'g, T>>,
    pub hr: Option<Var<'g, T>>,
    pub net: Option<Var<'g, T>>,
}

impl<'g, T: Float> MdenTerms<'g, T> {
    pub fn total(&self, g: &'g Graph<T>) -> Var<'g, T> {
        [self.lr, self.hr, self.net]
            .into_iter()
            .flatten()
            .reduce(|a, b| a.add(b))
            .unwrap_or_else(|| g.constant(Tensor::scalar(T::zero())))
    }
}

fn dims3<T: Float>(x: Var<'_, T>, what: &str) -> Result<(usize, usize, usize)> {
    match x.shape()[..] {
        [b, h, w] => Ok((b, h, w)),
        ref s => Err(invalid!("{what} must be (B, H, W), got {s:?}")),
    }
}

fn check_targets<T: Float>(pred: Var<'_, T>, gt: &[&DepthMap]) -> Result<(usize, usize, usize)> {
    let (b, h, w) = dims3(pred, "prediction")?;
    if gt.len() != b {
        return Err(invalid!("{} targets for a batch of {b}", gt.len()));
    }
    if let Some(d) = gt.iter().find(|d| d.dims() != (h, w)) {
        return Err(invalid!("target is {:?}, prediction is {h}x{w}", d.dims()));
    }
    Ok((b, h, w))
}

/// Scale-invariant log loss on the pixels valid in `gt`, averaged over the
/// batch: `a * sqrt(mean(g^2) - b_si * mean(g)^2)` with `g = ln pred - ln gt`.
pub fn si_loss_var<'g, T: Float>(pred: Var<'g, T>, gt: &[&DepthMap], a: f64, b_si: f64) -> Result<Var<'g, T>> {
    let (b, h, w) = check_targets(pred, gt)?;
    let g = pred.graph();
    let flat = pred.reshape([b * h * w]);
    let pv = pred.value();
    let mut total: Option<Var<'g, T>> = None;
    for (i, d) in gt.iter().enumerate() {
        let idx: Vec<usize> = (0..h * w).filter(|&j| d.valid()[j]).map(|j| i * h * w + j).collect();
        if idx.is_empty() {
            return Err(Error::NoValidPixels(format!("target {i} has no valid pixels")));
        }
        if let Some(&j) = idx.iter().find(|&&j| !(pv.data()[j] > T::zero())) {
            return Err(Error::Domain(format!(
                "prediction {} at a valid pixel is not positive",
                pv.data()[j].f64()
            )));
        }
        let log_gt: Vec<T> = idx.iter().map(|&j| T::of((d.values()[j - i * h * w] as f64).ln())).collect();
        let diff = flat
            .index_select_flat(Rc::new(idx))
            .ln()
            .sub(g.constant(Tensor::new(vec![log_gt.len()], log_gt)));
        let mean_sq = diff.sqr().mean_all();
        let mean = diff.mean_all();
        let term = mean_sq.sub(mean.sqr().scale(b_si)).sqrt_clamped().scale(a / b as f64);
        total = Some(match total {
            Some(t) => t.add(term),
            None => term,
        });
    }
    Ok(total.expect("batch is nonempty"))
}

/// Uniform subsample without replacement of at most `cap` points, seeded.
pub fn subsample_points(points: &[f64], cap: usize, seed: u64) -> Vec<f64> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, points.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i]).collect()
}

/// Bidirectional squared Chamfer distance between each row of `centers`
/// `(B, N)` and the valid depths of the matching target, averaged over the
/// batch. Image `i` subsamples its depths with seed `scene_seed(seed, i)`.
pub fn chamfer_var<'g, T: Float>(centers: Var<'g, T>, gt: &[&DepthMap], cap: usize, seed: u64) -> Result<Var<'g, T>> {
    let &[b, n] = &centers.shape()[..] else {
        return Err(invalid!("centers must be (B, N), got {:?}", centers.shape()));
    };
    if gt.len() != b {
        return Err(invalid!("{} targets for {b} bin sets", gt.len()));
    }
    let mut total: Option<Var<'g, T>> = None;
    for (i, d) in gt.iter().enumerate() {
        let all: Vec<f64> = d.valid_values().into_iter().map(f64::from).collect();
        if all.is_empty() {
            return Err(Error::NoValidPixels(format!("target {i} has no valid pixels")));
        }
        let xs: Vec<T> = subsample_points(&all, cap, scene_seed(seed, i as u64))
            .into_iter()
            .map(T::of)
            .collect();
        let term = centers
            .narrow(0, i, 1)
            .reshape([n])
            .chamfer_1d(&xs)
            .scale(1.0 / b as f64);
        total = Some(match total {
            Some(t) => t.add(term),
            None => term,
        });
    }
    Ok(total.expect("batch is nonempty"))
}

/// `si + lambda * chamfer`, both averaged over the batch.
pub fn reconstruction_var<'g, T: Float>(
    pred: Var<'g, T>,
    gt: &[&DepthMap],
    centers: Var<'g, T>,
    weights: &LossWeights,
    seed: u64,
) -> Result<Var<'g, T>> {
    let si = si_loss_var(pred, gt, weights.a, weights.b_si)?;
    if weights.lambda == 0.0 {
        return Ok(si);
    }
    let ch = chamfer_var(centers, gt, weights.chamfer_points, seed)?;
    Ok(si.add(ch.scale(weights.lambda)))
}

/// Bilinear downsampling of a `(B, H, W)` prediction to `(B, h, w)`.
pub fn down_var<'g, T: Float>(pred: Var<'g, T>, h: usize, w: usize) -> Result<Var<'g, T>> {
    let (b, ph, pw) = dims3(pred, "prediction")?;
    if (ph, pw) == (h, w) {
        return Ok(pred);
    }
    Ok(pred.reshape([b, ph, pw, 1]).resize_bilinear(h, w).reshape([b, h, w]))
}

/// Mean squared difference between the downsampled HR prediction and the LR
/// prediction.
pub fn net_consistency_var<'g, T: Float>(pred_hr: Var<'g, T>, pred_lr: Var<'g, T>, mu: f64) -> Result<Var<'g, T>> {
    let (b, hh, hw) = dims3(pred_hr, "HR prediction")?;
    let (bl, lh, lw) = dims3(pred_lr, "LR prediction")?;
    let (dh, dw) = (scaled_len(hh, mu), scaled_len(hw, mu));
    if b != bl || (dh, dw) != (lh, lw) {
        return Err(invalid!(
            "downsampled HR prediction is {b}x{dh}x{dw}, LR prediction is {bl}x{lh}x{lw}"
        ));
    }
    Ok(down_var(pred_hr, dh, dw)?.sub(pred_lr).sqr().mean_all())
}

/// Weighted student objective. `L_HR` compares the downsampled HR prediction
/// with the LR target using the HR branch's own bins. Terms whose weight is
/// zero are not built.
#[allow(clippy::too_many_arguments)]
pub fn mden_terms<'g, T: Float>(
    pred_hr: Option<Var<'g, T>>,
    pred_lr: Var<'g, T>,
    gt_lr: &[&DepthMap],
    centers_hr: Option<Var<'g, T>>,
    centers_lr: Var<'g, T>,
    mu: f64,
    weights: &LossWeights,
    seed: u64,
) -> Result<MdenTerms<'g, T>> {
    let lr = if weights.alpha > 0.0 {
        Some(reconstruction_var(pred_lr, gt_lr, centers_lr, weights, seed)?.scale(weights.alpha))
    } else {
        None
    };
    let need_hr = weights.beta > 0.0 || weights.gamma > 0.0;
    let (hr, net) = match (pred_hr, centers_hr) {
        (Some(ph), Some(ch)) if need_hr => {
            let (_, lh, lw) = dims3(pred_lr, "LR prediction")?;
            let hr = if weights.beta > 0.0 {
                let down = down_var(ph, lh, lw)?;
                // different subsample than the LR term
                let r = reconstruction_var(down, gt_lr, ch, weights, seed ^ 0x4852)?;
                Some(r.scale(weights.beta))
            } else {
                None
            };
            let net = if weights.gamma > 0.0 {
                Some(net_consistency_var(ph, pred_lr, mu)?.scale(weights.gamma))
            } else {
                None
            };
            (hr, net)
        }
        _ if need_hr => return Err(invalid!("HR terms are weighted but no HR prediction was given")),
        _ => (None, None),
    };
    Ok(MdenTerms { lr, hr, net })
}

/// Spatial size a grid is resized to so that `h * w <= cap`, keeping the
/// aspect ratio as closely as integer sides allow.
pub fn affinity_dims(h: usize, w: usize, cap: usize) -> (usize, usize) {
    if h * w <= cap {
        return (h, w);
    }
    let s = (cap as f64 / (h * w) as f64).sqrt();
    let mut nh = ((h as f64 * s).floor() as usize).max(1);
    let mut nw = ((w as f64 * s).floor() as usize).max(1);
    while nh * nw > cap {
        if nh >= nw {
            nh -= 1;
        } else {
            nw -= 1;
        }
    }
    (nh, nw)
}

/// Row-softmax of the pixel Gram matrix of a `(B, h, w, c)` grid, `(B, hw', hw')`
/// after the cap resize.
pub fn affinity_var<T: Float>(f: Var<'_, T>, cap: usize) -> Var<'_, T> {
    let &[b, h, w, c] = &f.shape()[..] else {
        panic!("affinity expects (B, h, w, c), got {:?}", f.shape());
    };
    let (nh, nw) = affinity_dims(h, w, cap);
    let f = if (nh, nw) == (h, w) { f } else { f.resize_bilinear(nh, nw) };
    let r = f.reshape([b, nh * nw, c]);
    r.bmm(r, false, true).softmax_last()
}

/// `(1 / n) * sum_i W_i * mean|A(teacher_i) - A(student_i)|`. Teacher grids
/// are detached.
pub fn distill_var<'g, T: Float>(
    teacher: &[Var<'g, T>],
    student: &[Var<'g, T>],
    w: &[f64],
    cap: usize,
) -> Result<Var<'g, T>> {
    if teacher.len() != student.len() || teacher.len() != w.len() || w.is_empty() {
        return Err(invalid!(
            "{} teacher taps, {} student taps, {} weights",
            teacher.len(),
            student.len(),
            w.len()
        ));
    }
    let n = w.len() as f64;
    let mut total: Option<Var<'g, T>> = None;
    for ((&t, &s), &wi) in teacher.iter().zip(student).zip(w) {
        let (ts, ss) = (t.shape(), s.shape());
        if ts.len() != 4 || ss.len() != 4 || ts[0] != ss[0] {
            return Err(invalid!("tap shapes {ts:?} and {ss:?} are not paired grids"));
        }
        if affinity_dims(ts[1], ts[2], cap) != affinity_dims(ss[1], ss[2], cap) {
            return Err(invalid!("tap grids {ts:?} and {ss:?} differ spatially"));
        }
        if wi == 0.0 {
            continue;
        }
        let at = affinity_var(t.detach(), cap);
        let as_ = affinity_var(s, cap);
        let term = at.sub(as_).abs().mean_all().scale(wi / n);
        total = Some(match total {
            Some(x) => x.add(term),
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| student[0].graph().constant(Tensor::scalar(T::zero()))))
}

fn depth_var<'g>(g: &'g Graph<f64>, d: &DepthMap) -> Var<'g, f64> {
    let (h, w) = d.dims();
    g.constant(Tensor::new(vec![1, h, w], d.values().iter().map(|&v| v as f64).collect()))
}

fn centers_var<'g>(g: &'g Graph<f64>, c: &[f64]) -> Var<'g, f64> {
    g.constant(Tensor::new(vec![1, c.len()], c.to_vec()))
}

/// Scale-invariant loss of one prediction against the valid pixels of `gt`.
pub fn si_loss(pred: &DepthMap, gt: &DepthMap, a: f64, b_si: f64) -> Result<f64> {
    let g = Graph::new();
    Ok(si_loss_var(depth_var(&g, pred), &[gt], a, b_si)?.item())
}

/// Chamfer distance between bin centers and a depth multiset (subsampled to
/// at most `cap` points with `seed`).
pub fn chamfer_bins_loss(centers: &[f64], x: &[f64], cap: usize, seed: u64) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::NoValidPixels("empty depth set".into()));
    }
    if centers.is_empty() {
        return Err(invalid!("no bin centers"));
    }
    let g = Graph::<f64>::new();
    let xs = subsample_points(x, cap, seed);
    Ok(g.constant(Tensor::new(vec![centers.len()], centers.to_vec())).chamfer_1d(&xs).item())
}

pub fn reconstruction_loss(pred: &DepthMap, gt: &DepthMap, bins: &BinPartition, weights: &LossWeights, seed: u64) -> Result<f64> {
    let g = Graph::new();
    let r = reconstruction_var(depth_var(&g, pred), &[gt], centers_var(&g, &bins.centers), weights, seed)?;
    Ok(r.item())
}

pub fn net_consistency_loss(pred_hr: &DepthMap, pred_lr: &DepthMap, mu: f64) -> Result<f64> {
    let g = Graph::new();
    Ok(net_consistency_var(depth_var(&g, pred_hr), depth_var(&g, pred_lr), mu)?.item())
}

fn tap_var<'g>(g: &'g Graph<f64>, t: &FeatureTap) -> Var<'g, f64> {
    g.constant(Tensor::new(
        vec![1, t.height, t.width, t.channels],
        t.data.iter().map(|&v| v as f64).collect(),
    ))
}

/// Affinity matrix of one tap, `(hw, hw)` after the cap resize.
pub fn affinity(tap: &FeatureTap, cap: usize) -> Tensor<f64> {
    let g = Graph::new();
    let a = affinity_var(tap_var(&g, tap), cap).value();
    let n = a.dim(1);
    Tensor::new(vec![n, n], a.data().to_vec())
}

pub fn distill_loss(teacher: &[FeatureTap], student: &[FeatureTap], w: &[f64], cap: usize) -> Result<f64> {
    let g = Graph::new();
    let t: Vec<_> = teacher.iter().map(|t| tap_var(&g, t)).collect();
    let s: Vec<_> = student.iter().map(|t| tap_var(&g, t)).collect();
    Ok(distill_var(&t, &s, w, cap)?.item())
}

/// Weighted student loss for one image pair; `seed` drives the Chamfer subsample.
#[allow(clippy::too_many_arguments)]
pub fn mden_loss(
    pred_hr: &DepthMap,
    pred_lr: &DepthMap,
    gt_lr: &DepthMap,
    bins_hr: &BinPartition,
    bins_lr: &BinPartition,
    mu: f64,
    weights: &LossWeights,
    seed: u64,
) -> Result<f64> {
    let g = Graph::new();
    let terms = mden_terms(
        Some(depth_var(&g, pred_hr)),
        depth_var(&g, pred_lr),
        &[gt_lr],
        Some(centers_var(&g, &bins_hr.centers)),
        centers_var(&g, &bins_lr.centers),
        mu,
        weights,
        seed,
    )?;
    Ok(terms.total(&g).item())
}

/// `L_MDEN + L_distill`, rejecting non-finite parts.
pub fn total_loss(mden: f64, distill: f64) -> Result<f64> {
    if !mden.is_finite() || !distill.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss component (mden {mden}, distill {distill})")));
    }
    Ok(mden + distill)
}
