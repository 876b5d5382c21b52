use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::TrainingConfig;
use super::optim::AdamW;
use crate::autograd::{Graph, Var};
use crate::data::{augment, downsample_image, resize_depth, scene_seed, DepthMap, SamplePair};
use crate::error::{invalid, Error, Result};
use crate::losses::{distill_var, mden_terms, reconstruction_var, LossWeights};
use crate::metrics::{compute_metrics, garg_crop, mirror_average_batch, EvalReport, ImageRecord, MetricsReport};
use crate::networks::{forward, stack, Bound, Checkpoint, Mode, Model, NetworkConfig};
use crate::tensor::{Float, Tensor};

// independent seed streams derived from the run seed
const ORDER_STREAM: u64 = 0x6f72_6465_72;
const AUG_STREAM: u64 = 0x6175_67;
const CHAMFER_STREAM: u64 = 0x6368_616d;
const SPLIT_STREAM: u64 = 0x7370_6c69_74;

/// Evaluation batch (images; mirror averaging doubles it).
const EVAL_BATCH: usize = 4;

/// Loss components of one step or epoch (weighted, as they enter the total).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub total: f64,
    pub lr: f64,
    pub hr: f64,
    pub net: f64,
    pub distill: f64,
}

impl StepLosses {
    fn add_scaled(&mut self, o: &StepLosses, s: f64) {
        self.total += s * o.total;
        self.lr += s * o.lr;
        self.hr += s * o.hr;
        self.net += s * o.net;
        self.distill += s * o.distill;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub epochs: usize,
    /// Means over the epoch's steps.
    pub losses: StepLosses,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub val_rel: Option<f64>,
    pub val_delta1: Option<f64>,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = &self.losses;
        write!(
            f,
            "epoch {}/{} loss={:.6} l_lr={:.6} l_hr={:.6} l_net={:.6} l_distill={:.6} lr={:.3e}",
            self.epoch, self.epochs, l.total, l.lr, l.hr, l.net, l.distill, self.lr
        )?;
        if let (Some(r), Some(d)) = (self.val_rel, self.val_delta1) {
            write!(f, " val_rel={r:.5} val_d1={d:.5}")?;
        }
        write!(f, " time={:.1}s", self.seconds)
    }
}

/// What is being optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Teacher,
    Student,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub kind: RunKind,
    pub model: Model,
    pub opt: AdamW,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub history: Vec<EpochLog>,
    pub best_delta1: Option<f64>,
    pub last_eval: Option<MetricsReport>,
}

impl TrainState {
    pub fn new(kind: RunKind, model: Model, cfg: &TrainingConfig) -> Self {
        let opt = AdamW::new(&model.params, cfg.weight_decay);
        TrainState {
            kind,
            model,
            opt,
            epoch: 0,
            step: 0,
            history: Vec::new(),
            best_delta1: None,
            last_eval: None,
        }
    }

    /// Model parameters, optimizer moments and run position. Data order and
    /// augmentation derive from `(seed, epoch, step)`, so the seed plus the
    /// position is the full random state.
    pub fn to_checkpoint(&self, cfg: &TrainingConfig) -> Checkpoint {
        let meta = json!({
            "kind": self.kind,
            "epoch": self.epoch,
            "step": self.step,
            "optimizer_t": self.opt.t,
            "rng": { "seed": cfg.seed, "next_epoch": self.epoch },
            "training_config": cfg.to_kv().to_string(),
            "history": self.history,
            "best_delta1": self.best_delta1,
            "metrics": self.last_eval,
        });
        let mut ck = Checkpoint::from_model(&self.model, meta);
        ck.tensors.extend(self.opt.to_tensors(&self.model.params));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &TrainingConfig) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("checkpoint metadata lacks {what}"));
        let meta = &ck.meta;
        let kind: RunKind = serde_json::from_value(meta["kind"].clone()).map_err(|_| bad("kind"))?;
        let epoch = meta["epoch"].as_u64().ok_or_else(|| bad("epoch"))? as usize;
        let step = meta["step"].as_u64().ok_or_else(|| bad("step"))?;
        let t = meta["optimizer_t"].as_u64().ok_or_else(|| bad("optimizer_t"))?;
        let history = serde_json::from_value(meta["history"].clone()).map_err(|_| bad("history"))?;
        let model = ck.model()?;
        let opt = AdamW::from_tensors(&model.params, &ck.tensors, cfg.weight_decay, t)?;
        Ok(TrainState {
            kind,
            model,
            opt,
            epoch,
            step,
            history,
            best_delta1: meta["best_delta1"].as_f64(),
            last_eval: serde_json::from_value(meta["metrics"].clone()).unwrap_or(None),
        })
    }
}

/// Deterministic `(train, held_out)` index split.
pub fn split_indices(n: usize, holdout_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(scene_seed(seed ^ SPLIT_STREAM, 0)));
    let held = ((n as f64 * holdout_frac).round() as usize).min(n.saturating_sub(1));
    let mut train = idx.split_off(held);
    let mut held = idx;
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// Student network config for a training config and depth range.
pub fn student_config(cfg: &TrainingConfig, d_min: f32, d_max: f32) -> NetworkConfig {
    NetworkConfig {
        n_bins: cfg.n_bins,
        d_min,
        d_max,
        ..NetworkConfig::toy_student()
    }
}

pub fn teacher_config(cfg: &TrainingConfig, d_min: f32, d_max: f32) -> NetworkConfig {
    NetworkConfig {
        in_channels: 1,
        ..student_config(cfg, d_min, d_max)
    }
}

fn depth_batch<T: Float>(maps: &[&DepthMap]) -> Result<Tensor<T>> {
    let inputs: Vec<Vec<f32>> = maps.iter().map(|d| d.normalized()).collect();
    let grids: Vec<(&[f32], (usize, usize, usize))> = inputs
        .iter()
        .zip(maps)
        .map(|(v, d)| (v.as_slice(), (d.height(), d.width(), 1)))
        .collect();
    stack(&grids)
}

fn color_batch<T: Float>(images: &[&crate::data::ColorImage]) -> Result<Tensor<T>> {
    let grids: Vec<(&[f32], (usize, usize, usize))> = images
        .iter()
        .map(|i| (i.pixels(), (i.height(), i.width(), 3)))
        .collect();
    stack(&grids)
}

fn part<T: Float>(v: Option<Var<'_, T>>) -> f64 {
    v.map_or(0.0, |v| v.item())
}

/// The student objective on one batch, with every intermediate the checks need.
pub struct StudentObjective<'g, T> {
    pub total: Var<'g, T>,
    pub losses: StepLosses,
    pub pred_hr: Option<Var<'g, T>>,
    pub pred_lr: Var<'g, T>,
    pub centers_hr: Option<Var<'g, T>>,
    pub centers_lr: Var<'g, T>,
    pub student_taps: Vec<Var<'g, T>>,
    pub teacher_taps: Vec<Var<'g, T>>,
}

/// Builds `L_MDEN + L_distill` for a batch: the LR image is the bilinear
/// downsample of the HR image, both pass through the same bound parameters,
/// and the teacher (if any) reconstructs the LR ground truth.
pub fn student_objective<'g, T: Float>(
    student: (&Bound<'g, '_, T>, &NetworkConfig),
    teacher: Option<(&Bound<'g, '_, T>, &NetworkConfig)>,
    batch: &[SamplePair],
    cfg: &TrainingConfig,
    chamfer_seed: u64,
) -> Result<StudentObjective<'g, T>> {
    let (sb, scfg) = student;
    let g = sb.graph();
    let weights: LossWeights = cfg.effective_weights();
    let use_distill = cfg.ablation.distill;
    if use_distill && teacher.is_none() {
        return Err(Error::Config("distillation is enabled but no teacher was given".into()));
    }
    if let Some(p) = batch.iter().find(|p| (p.mu - cfg.mu).abs() > 1e-9) {
        return Err(Error::Config(format!("sample mu {} differs from configured mu {}", p.mu, cfg.mu)));
    }
    let lr_images = batch
        .iter()
        .map(|p| downsample_image(&p.color_hr, cfg.mu))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<&DepthMap> = batch.iter().map(|p| &p.depth_lr).collect();
    if lr_images.iter().zip(&gts).any(|(i, d)| i.dims() != d.dims()) {
        return Err(invalid!("LR image and LR depth sizes differ"));
    }

    let need_hr = weights.beta > 0.0 || weights.gamma > 0.0;
    let hr_out = if need_hr {
        let hr: Vec<_> = batch.iter().map(|p| &p.color_hr).collect();
        Some(forward(sb, scfg, g.constant(color_batch(&hr)?))?)
    } else {
        None
    };
    let lr_refs: Vec<_> = lr_images.iter().collect();
    let lr_out = forward(sb, scfg, g.constant(color_batch(&lr_refs)?))?;

    let terms = mden_terms(
        hr_out.as_ref().map(|o| o.depth),
        lr_out.depth,
        &gts,
        hr_out.as_ref().map(|o| o.centers),
        lr_out.centers,
        cfg.mu,
        &weights,
        chamfer_seed,
    )?;
    let mden = terms.total(g);
    let student_taps: Vec<_> = lr_out.taps.iter().map(|&(_, v)| v).collect();
    let (distill, teacher_taps) = match teacher {
        Some((tb, tcfg)) if use_distill => {
            let t_out = forward(tb, tcfg, g.constant(depth_batch(&gts)?))?;
            let t_taps: Vec<_> = t_out.taps.iter().map(|&(_, v)| v).collect();
            let d = distill_var(&t_taps, &student_taps, &weights.w, weights.affinity_cap)?;
            (Some(d), t_taps)
        }
        _ => (None, Vec::new()),
    };
    let total = match distill {
        Some(d) => mden.add(d),
        None => mden,
    };
    let losses = StepLosses {
        total: total.item(),
        lr: part(terms.lr),
        hr: part(terms.hr),
        net: part(terms.net),
        distill: part(distill),
    };
    Ok(StudentObjective {
        total,
        losses,
        pred_hr: hr_out.as_ref().map(|o| o.depth),
        pred_lr: lr_out.depth,
        centers_hr: hr_out.as_ref().map(|o| o.centers),
        centers_lr: lr_out.centers,
        student_taps,
        teacher_taps,
    })
}

/// Teacher objective: reconstruct each LR depth map from itself.
pub fn teacher_objective<'g, T: Float>(
    b: &Bound<'g, '_, T>,
    cfg_net: &NetworkConfig,
    maps: &[&DepthMap],
    weights: &LossWeights,
    chamfer_seed: u64,
) -> Result<Var<'g, T>> {
    let out = forward(b, cfg_net, b.graph().constant(depth_batch(maps)?))?;
    reconstruction_var(out.depth, maps, out.centers, weights, chamfer_seed)
}

fn check_finite(losses: &StepLosses, step: u64) -> Result<()> {
    if losses.total.is_finite() {
        return Ok(());
    }
    Err(Error::Numeric(format!(
        "non-finite loss at step {step} (l_lr {}, l_hr {}, l_net {}, l_distill {})",
        losses.lr, losses.hr, losses.net, losses.distill
    )))
}

/// Backward pass, optimizer update and running-statistics update.
fn apply_step<T: Float>(state: &mut TrainState, g: &Graph<T>, b: Bound<'_, '_, T>, total: Var<'_, T>, lr: f64, cfg: &TrainingConfig) {
    let grads = g.backward(total);
    let slots: Vec<Option<Tensor<f32>>> = b
        .vars()
        .iter()
        .zip(b.store().entries())
        .map(|(&v, e)| e.trainable.then(|| grads.get_or_zeros(v).cast()))
        .collect();
    let norm = b.take_norm_updates();
    drop(b);
    state.opt.step(&mut state.model.params, &slots, lr, cfg.grad_clip);
    state.model.params.apply_norm_updates(&norm, cfg.bn_momentum as f32);
    state.step += 1;
}

/// One optimizer step on the student; returns the losses before the update.
pub fn train_step<T: Float>(
    state: &mut TrainState,
    teacher: Option<&Model>,
    batch: &[SamplePair],
    cfg: &TrainingConfig,
    lr: f64,
) -> Result<StepLosses> {
    let g = Graph::<T>::new();
    let params = state.model.params.clone();
    let sb = Bound::new(&g, &params, Mode::Train);
    let tb = teacher.map(|t| Bound::new(&g, &t.params, Mode::Eval));
    let scfg = state.model.config.clone();
    let obj = student_objective(
        (&sb, &scfg),
        tb.as_ref().zip(teacher).map(|(b, t)| (b, &t.config)),
        batch,
        cfg,
        scene_seed(cfg.seed ^ CHAMFER_STREAM, state.step),
    )?;
    check_finite(&obj.losses, state.step)?;
    let (total, losses) = (obj.total, obj.losses);
    apply_step(state, &g, sb, total, lr, cfg);
    Ok(losses)
}

/// One optimizer step on the teacher.
pub fn teacher_step<T: Float>(state: &mut TrainState, maps: &[&DepthMap], cfg: &TrainingConfig, lr: f64) -> Result<StepLosses> {
    let g = Graph::<T>::new();
    let params = state.model.params.clone();
    let b = Bound::new(&g, &params, Mode::Train);
    let weights = cfg.loss.clone();
    let total = teacher_objective(&b, &state.model.config, maps, &weights, scene_seed(cfg.seed ^ CHAMFER_STREAM, state.step))?;
    let losses = StepLosses {
        total: total.item(),
        lr: total.item(),
        ..StepLosses::default()
    };
    check_finite(&losses, state.step)?;
    apply_step(state, &g, b, total, lr, cfg);
    Ok(losses)
}

/// Which color resolution feeds the network at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputRes {
    Hr,
    Lr,
}

impl std::str::FromStr for InputRes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hr" => Ok(InputRes::Hr),
            "lr" => Ok(InputRes::Lr),
            _ => Err(Error::Config(format!("input resolution must be `hr` or `lr`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalProtocol {
    pub input: InputRes,
    pub mirror: bool,
    pub cap_m: Option<f64>,
    pub garg_crop: bool,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            input: InputRes::Hr,
            mirror: true,
            cap_m: None,
            garg_crop: false,
        }
    }
}

/// Predictions of a student for each sample at the protocol's input
/// resolution, batched.
pub fn predict_samples(model: &Model, samples: &[&SamplePair], protocol: &EvalProtocol) -> Result<Vec<DepthMap>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images = chunk
            .iter()
            .map(|p| match protocol.input {
                InputRes::Hr => Ok(p.color_hr.clone()),
                InputRes::Lr => downsample_image(&p.color_hr, p.mu),
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = images.iter().collect();
        if protocol.mirror {
            out.extend(mirror_average_batch(model, &refs)?);
        } else {
            out.extend(model.predict_depth(color_batch(&refs)?)?);
        }
    }
    Ok(out)
}

/// Ground truth matching a prediction: HR depth for HR input when present,
/// otherwise the LR map (with the prediction resized onto it).
fn matched(pred: DepthMap, sample: &SamplePair) -> (DepthMap, &DepthMap) {
    match &sample.depth_hr_eval {
        Some(hr) if hr.dims() == pred.dims() => (pred, hr),
        _ => {
            let (h, w) = sample.depth_lr.dims();
            (resize_depth(&pred, h, w), &sample.depth_lr)
        }
    }
}

/// Student evaluation; per-image records are named by sample index.
pub fn evaluate(model: &Model, samples: &[&SamplePair], protocol: &EvalProtocol) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(invalid!("nothing to evaluate"));
    }
    score(predict_samples(model, samples, protocol)?, samples, protocol)
}

/// Scores predictions made under `protocol` against the matching ground truth.
pub fn score(preds: Vec<DepthMap>, samples: &[&SamplePair], protocol: &EvalProtocol) -> Result<EvalReport> {
    if preds.len() != samples.len() {
        return Err(invalid!("{} predictions for {} samples", preds.len(), samples.len()));
    }
    let mut records = Vec::with_capacity(samples.len());
    for (i, (pred, sample)) in preds.into_iter().zip(samples).enumerate() {
        let (pred, gt) = matched(pred, sample);
        let crop = protocol.garg_crop.then(|| garg_crop(gt.height(), gt.width()));
        let mut m = compute_metrics(&pred, gt, protocol.cap_m, crop)?;
        m.protocol.mirror_averaged = protocol.mirror;
        records.push(ImageRecord {
            name: format!("{i:05}"),
            metrics: m,
        });
    }
    EvalReport::from_records(records)
}

/// Teacher reconstructions of LR depth maps, batched.
pub fn reconstruct(teacher: &Model, maps: &[&DepthMap]) -> Result<Vec<DepthMap>> {
    let mut out = Vec::with_capacity(maps.len());
    for chunk in maps.chunks(EVAL_BATCH * 2) {
        out.extend(teacher.predict_depth(depth_batch(chunk)?)?);
    }
    Ok(out)
}

/// Teacher evaluation: reconstruction against its own input.
pub fn evaluate_teacher(teacher: &Model, maps: &[&DepthMap]) -> Result<EvalReport> {
    if maps.is_empty() {
        return Err(invalid!("nothing to evaluate"));
    }
    let recs = reconstruct(teacher, maps)?;
    let records = recs
        .iter()
        .zip(maps)
        .enumerate()
        .map(|(i, (r, gt))| {
            Ok(ImageRecord {
                name: format!("{i:05}"),
                metrics: compute_metrics(r, gt, None, None)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_records(records)
}

/// Snapshot kept by [`train`] and [`pretrain_drn`] for the best held-out δ1.
#[derive(Debug, Clone, PartialEq)]
pub struct BestModel {
    pub epoch: usize,
    pub model: Model,
    pub metrics: MetricsReport,
}

pub struct Outcome {
    pub state: TrainState,
    pub best: Option<BestModel>,
}

pub type EpochHook<'a> = &'a mut dyn FnMut(&TrainState, Option<&BestModel>) -> Result<()>;

/// Shared epoch loop. `step` consumes a batch of dataset indices.
fn drive(
    mut state: TrainState,
    cfg: &TrainingConfig,
    train_idx: &[usize],
    mut step: impl FnMut(&mut TrainState, &[usize], f64) -> Result<StepLosses>,
    mut eval: impl FnMut(&Model) -> Result<Option<MetricsReport>>,
    on_epoch: Option<EpochHook<'_>>,
) -> Result<Outcome> {
    if train_idx.is_empty() {
        return Err(invalid!("no training samples"));
    }
    let per_epoch = train_idx.len().div_ceil(cfg.batch_size) as u64;
    let total = per_epoch * cfg.epochs as u64;
    let mut best: Option<BestModel> = None;
    let mut on_epoch = on_epoch;
    while state.epoch < cfg.epochs {
        let started = Instant::now();
        let mut order = train_idx.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(scene_seed(cfg.seed ^ ORDER_STREAM, state.epoch as u64)));
        let mut sum = StepLosses::default();
        let mut lr = 0.0;
        let n_batches = order.len().div_ceil(cfg.batch_size);
        for chunk in order.chunks(cfg.batch_size) {
            lr = cfg.schedule.lr(cfg.max_lr, state.step, total);
            let l = step(&mut state, chunk, lr)?;
            sum.add_scaled(&l, 1.0 / n_batches as f64);
        }
        state.epoch += 1;
        let due = state.epoch % cfg.eval_every == 0 || state.epoch == cfg.epochs;
        let report = if due { eval(&state.model)? } else { None };
        if let Some(m) = &report {
            if state.best_delta1.is_none_or(|b| m.delta1 > b) {
                state.best_delta1 = Some(m.delta1);
                best = Some(BestModel {
                    epoch: state.epoch,
                    model: state.model.clone(),
                    metrics: m.clone(),
                });
            }
            state.last_eval = Some(m.clone());
        }
        let log = EpochLog {
            epoch: state.epoch,
            epochs: cfg.epochs,
            losses: sum,
            lr,
            val_rel: report.as_ref().map(|m| m.rel),
            val_delta1: report.as_ref().map(|m| m.delta1),
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("{log}");
        state.history.push(log);
        if let Some(hook) = on_epoch.as_mut() {
            hook(&state, best.as_ref())?;
        }
    }
    Ok(Outcome { state, best })
}

/// Pretrains the depth reconstruction teacher on LR maps. `held_out` maps are
/// used only for evaluation.
pub fn pretrain_drn(
    state: TrainState,
    train_maps: &[&DepthMap],
    held_out: &[&DepthMap],
    cfg: &TrainingConfig,
    on_epoch: Option<EpochHook<'_>>,
) -> Result<Outcome> {
    cfg.validate()?;
    if state.kind != RunKind::Teacher || state.model.config.in_channels != 1 {
        return Err(Error::Config("teacher pretraining needs a one-channel teacher state".into()));
    }
    let idx: Vec<usize> = (0..train_maps.len()).collect();
    drive(
        state,
        cfg,
        &idx,
        |st, chunk, lr| {
            let maps: Vec<&DepthMap> = chunk.iter().map(|&i| train_maps[i]).collect();
            teacher_step::<f32>(st, &maps, cfg, lr)
        },
        |m| {
            if held_out.is_empty() {
                return Ok(None);
            }
            Ok(Some(evaluate_teacher(m, held_out)?.aggregate))
        },
        on_epoch,
    )
}

/// Weakly supervised student training with optional frozen-teacher
/// distillation. `held_out` samples are evaluated with `protocol`.
pub fn train(
    state: TrainState,
    train_set: &[&SamplePair],
    held_out: &[&SamplePair],
    teacher: Option<&Model>,
    cfg: &TrainingConfig,
    protocol: &EvalProtocol,
    on_epoch: Option<EpochHook<'_>>,
) -> Result<Outcome> {
    cfg.validate()?;
    if state.kind != RunKind::Student {
        return Err(Error::Config("student training needs a student state".into()));
    }
    if cfg.ablation.distill && teacher.is_none() {
        return Err(Error::Config("distillation is enabled but no teacher checkpoint was given".into()));
    }
    let idx: Vec<usize> = (0..train_set.len()).collect();
    let bs = cfg.batch_size as u64;
    drive(
        state,
        cfg,
        &idx,
        |st, chunk, lr| {
            let batch: Vec<SamplePair> = chunk
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let p = SamplePair {
                        depth_hr_eval: None,
                        ..train_set[i].clone()
                    };
                    if cfg.augment {
                        augment(&p, scene_seed(cfg.seed ^ AUG_STREAM, st.step * bs + j as u64))
                    } else {
                        p
                    }
                })
                .collect();
            train_step::<f32>(st, teacher, &batch, cfg, lr)
        },
        |m| {
            if held_out.is_empty() {
                return Ok(None);
            }
            Ok(Some(evaluate(m, held_out, protocol)?.aggregate))
        },
        on_epoch,
    )
}
