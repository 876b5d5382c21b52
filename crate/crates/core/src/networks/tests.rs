use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::autograd::{Graph, Var};
use crate::data::{generate_synthetic_scene, SyntheticSceneSpec};

fn small_cfg() -> NetworkConfig {
    NetworkConfig {
        encoder_blocks: [4, 8, 8, 8]
            .into_iter()
            .map(|channels| EncoderBlock {
                channels,
                downsample: true,
            })
            .collect(),
        decoder_channels: vec![8, 8, 8, 4],
        transformer_layers: 2,
        embed_dim: 16,
        heads: 2,
        ffn_dim: 16,
        head_hidden: 16,
        range_kernels: 4,
        pos_grid: 4,
        n_bins: 8,
        ..NetworkConfig::toy_student()
    }
}

fn noise(n: usize, seed: u64) -> Vec<f32> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / (1u64 << 24) as f32
        })
        .collect()
}

fn image(h: usize, w: usize, seed: u64) -> ColorImage {
    ColorImage::new(h, w, noise(h * w * 3, seed)).unwrap()
}

#[test]
fn encoder_halves_each_block() {
    let cfg = NetworkConfig::toy_student();
    let model = Model::new(cfg.clone(), 1).unwrap();
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &model.params, Mode::Eval);
    let x = g.constant(color_input(&image(64, 64, 1)));
    let grids = encode(&b, &cfg, x).unwrap();
    let sides: Vec<usize> = grids[1..].iter().map(|v| v.shape()[1]).collect();
    assert_eq!(sides, vec![32, 16, 8, 4]);
    let chans: Vec<usize> = grids[1..].iter().map(|v| v.shape()[3]).collect();
    assert_eq!(chans, vec![8, 16, 16, 32]);

    let odd = g.constant(Tensor::zeros(vec![1, 40, 40, 3]));
    assert!(encode(&b, &cfg, odd).is_err());
}

#[test]
fn zero_input_gives_zero_features() {
    let cfg = NetworkConfig::toy_student();
    let model = Model::new(cfg.clone(), 3).unwrap();
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &model.params, Mode::Eval);
    let grids = encode(&b, &cfg, g.constant(Tensor::zeros(vec![1, 32, 32, 3]))).unwrap();
    for v in &grids {
        assert!(v.value().data().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn decoder_mirrors_encoder_and_exposes_taps() {
    let cfg = NetworkConfig::toy_student();
    let model = Model::new(cfg.clone(), 1).unwrap();
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &model.params, Mode::Eval);
    let grids = encode(&b, &cfg, g.constant(color_input(&image(64, 64, 2)))).unwrap();
    let (dec, taps) = decode(&b, &cfg, &grids);
    assert_eq!(dec.shape(), vec![1, 64, 64, 8]);
    let tap_shapes: Vec<(usize, Vec<usize>)> = taps.iter().map(|(i, v)| (*i, v.shape())).collect();
    assert_eq!(tap_shapes, vec![(1, vec![1, 16, 16, 16]), (2, vec![1, 32, 32, 16])]);
    // concatenated inputs: previous decoder channels plus the mirrored block's input
    let enc_in = [3, 8, 16, 16];
    let mut prev = 32;
    for (i, &c) in cfg.decoder_channels.iter().enumerate() {
        let w = model.params.get(&format!("dec.{i}.conv.w")).unwrap();
        assert_eq!(w.shape(), &[9 * (prev + enc_in[3 - i]), c]);
        prev = c;
    }
}

#[test]
fn head_counts_patches() {
    let mut cfg = small_cfg();
    cfg.patch_size = 16;
    cfg.range_kernels = 15;
    let img = image(64, 64, 4);
    let model = Model::new(cfg.clone(), 1).unwrap();
    assert!(forward_mden(&img, &model).is_ok());
    cfg.range_kernels = 16;
    let model = Model::new(cfg, 1).unwrap();
    let err = forward_mden(&img, &model).unwrap_err().to_string();
    assert!(err.contains("16 patches"), "{err}");
}

/// Swaps two patches (neither of them patch 0) of a `(1, H, W, C)` grid.
fn swap_patches(t: &Tensor<f32>, p: usize, a: (usize, usize), b: (usize, usize)) -> Tensor<f32> {
    let (w, c) = (t.dim(2), t.dim(3));
    let mut d = t.data().to_vec();
    for y in 0..p {
        for x in 0..p {
            for ch in 0..c {
                let ia = ((a.0 * p + y) * w + a.1 * p + x) * c + ch;
                let ib = ((b.0 * p + y) * w + b.1 * p + x) * c + ch;
                d.swap(ia, ib);
            }
        }
    }
    Tensor::new(t.shape().to_vec(), d)
}

fn head_logits(model: &Model, grid: Tensor<f32>) -> Vec<f32> {
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &model.params, Mode::Eval);
    ordinal_head(&b, &model.config, g.constant(grid))
        .unwrap()
        .bin_logits
        .value()
        .to_f32_vec()
}

#[test]
fn positional_encoding_breaks_patch_permutation_invariance() {
    let cfg = small_cfg();
    let mut model = Model::new(cfg.clone(), 5).unwrap();
    let c = *cfg.decoder_channels.last().unwrap();
    let grid = Tensor::new(vec![1, 64, 64, c], noise(64 * 64 * c, 9));
    let swapped = swap_patches(&grid, cfg.patch_size, (2, 3), (6, 1));

    let active = (head_logits(&model, grid.clone()), head_logits(&model, swapped.clone()));
    let diff: f32 = active.0.iter().zip(&active.1).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-4, "positional encodings should make order matter ({diff})");

    model.params.get_mut("head.pos").unwrap().data_mut().fill(0.0);
    let zeroed = (head_logits(&model, grid), head_logits(&model, swapped));
    for (a, b) in zeroed.0.iter().zip(&zeroed.1) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn bin_examples() {
    let b = bin_centers_from_logits(&[0.7, 0.7], 0.0, 4.0);
    assert_eq!(b.widths, vec![0.5, 0.5]);
    assert_eq!(b.centers, vec![1.0, 3.0]);

    let logits = [0.0, 50.0, 0.0, 0.0];
    let b = bin_centers_from_logits(&logits, 1.0, 10.0);
    // direct prefix-sum oracle
    let raw: Vec<f64> = logits.iter().map(|l: &f64| l.max(0.0) + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    let mut acc = 0.0;
    for i in 0..4 {
        let w = raw[i] / s;
        assert!((b.widths[i] - w).abs() < 1e-15);
        assert!((b.centers[i] - (1.0 + 9.0 * (acc + w / 2.0))).abs() < 1e-12);
        acc += w;
    }
    assert!(b.widths[1] > 0.9999);
    assert!(b.centers[0] < 1.001 && b.centers[2] > 9.999);
}

#[test]
fn graph_bins_agree_with_direct_formula() {
    let logits = vec![0.3, -1.0, 2.0, 0.0, 5.0];
    let g = Graph::<f64>::new();
    let l = g.constant(Tensor::new(vec![1, 5], logits.clone()));
    let (w, c) = bins_from_logits(l, 2.0, 7.0);
    let direct = bin_centers_from_logits(&logits, 2.0, 7.0);
    for i in 0..5 {
        assert!((w.value().data()[i] - direct.widths[i]).abs() < 1e-12);
        assert!((c.value().data()[i] - direct.centers[i]).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn centers_strictly_increase(logits in prop::collection::vec(-10.0f64..10.0, 2..300)) {
        let b = bin_centers_from_logits(&logits, 1.0, 10.0);
        prop_assert!((b.widths.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(b.widths.iter().all(|&w| w > 0.0));
        prop_assert!(b.centers[0] > 1.0 && *b.centers.last().unwrap() < 10.0);
        prop_assert!(b.centers.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn depth_is_convex_combination(raw in prop::collection::vec(0.0f32..1.0, 12), logits in prop::collection::vec(-3.0f64..3.0, 3)) {
        let bins = bin_centers_from_logits(&logits, 1.0, 10.0);
        let probs: Vec<f32> = raw.chunks(3).flat_map(|c| {
            let s: f32 = c.iter().sum::<f32>() + 1e-3;
            c.iter().map(move |v| (v + 1e-3 / 3.0) / s).collect::<Vec<_>>()
        }).collect();
        let d = depth_from_bins(&probs, &bins.centers, 2, 2, 1.0, 10.0);
        for &v in d.values() {
            prop_assert!(v as f64 >= bins.centers[0] - 1e-5 && v as f64 <= bins.centers[2] + 1e-5);
        }
    }
}

#[test]
fn depth_from_bins_examples() {
    let d = depth_from_bins(&[0.0, 1.0, 0.0], &[1.0, 2.0, 4.0], 1, 1, 0.5, 5.0);
    assert_eq!(d.values(), &[2.0]);
    let d = depth_from_bins(&[0.5, 0.5], &[1.0, 3.0], 1, 1, 0.5, 5.0);
    assert_eq!(d.values(), &[2.0]);
    let d = depth_from_bins(&[0.2, 0.3, 0.5], &[1.0, 2.0, 4.0], 1, 1, 0.5, 5.0);
    let want = 0.2 * 1.0 + 0.3 * 2.0 + 0.5 * 4.0;
    assert!((d.values()[0] as f64 - want).abs() < 1e-6);
}

#[test]
fn student_prediction_is_well_formed_and_deterministic() {
    let model = Model::new(NetworkConfig::toy_student(), 11).unwrap();
    let img = image(64, 64, 3);
    let p = forward_mden(&img, &model).unwrap();
    assert_eq!(p.depth.dims(), (64, 64));
    assert!(p.depth.values().iter().all(|&v| (1.0..=10.0).contains(&v)));
    for px in p.probabilities.chunks(p.n_bins) {
        assert!(px.iter().all(|&q| q >= 0.0));
        assert!((px.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
    assert!(p.bins.centers.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(p, forward_mden(&img, &model).unwrap());
    assert!(forward_drn(&p.depth, &model).is_err());
}

#[test]
fn teacher_prediction_and_padding() {
    let model = Model::new(NetworkConfig::toy_teacher(), 2).unwrap();
    let pair = generate_synthetic_scene(&SyntheticSceneSpec {
        seed: 1,
        num_rects: 3,
        depth_range: (1.0, 10.0),
        texture_amplitude: 0.2,
        size: (120, 100),
        mu: 0.5,
    })
    .unwrap();
    // 60x50 is padded to 64x64 internally
    let p = forward_drn(&pair.depth_lr, &model).unwrap();
    assert_eq!(p.depth.dims(), (60, 50));
    assert!(p.depth.values().iter().all(|&v| (1.0..=10.0).contains(&v)));
    assert_eq!(p.probabilities.len(), 60 * 50 * 64);
}

#[test]
fn shared_weights_accumulate_both_branches() {
    let cfg = small_cfg();
    let model = Model::new(cfg.clone(), 4).unwrap();
    let hr = color_input(&image(64, 64, 5));
    let lr = color_input(&image(32, 32, 6)).cast::<f64>();
    let hr = hr.cast::<f64>();
    let grads_of = |use_hr: bool, use_lr: bool| {
        let g = Graph::<f64>::new();
        let b = Bound::new(&g, &model.params, Mode::EvalWithGrad);
        let mut loss: Option<Var<f64>> = None;
        for (on, x) in [(use_hr, &hr), (use_lr, &lr)] {
            if on {
                let out = forward(&b, &cfg, g.constant(x.clone())).unwrap();
                let l = out.depth.mean_all();
                loss = Some(match loss {
                    Some(acc) => acc.add(l),
                    None => l,
                });
            }
        }
        let grads = g.backward(loss.unwrap());
        b.vars().iter().map(|&v| grads.get_or_zeros(v)).collect::<Vec<_>>()
    };
    let both = grads_of(true, true);
    let hr_only = grads_of(true, false);
    let lr_only = grads_of(false, true);
    for ((a, h), l) in both.iter().zip(&hr_only).zip(&lr_only) {
        for ((&x, &y), &z) in a.data().iter().zip(h.data()).zip(l.data()) {
            assert!((x - (y + z)).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn every_parameter_gets_a_finite_gradient() {
    let cfg = NetworkConfig::toy_student();
    let model = Model::new(cfg.clone(), 8).unwrap();
    let g = Graph::<f32>::new();
    let b = Bound::new(&g, &model.params, Mode::Train);
    let x = Tensor::new(vec![2, 64, 64, 3], noise(2 * 64 * 64 * 3, 10));
    let out = forward(&b, &cfg, g.constant(x)).unwrap();
    let grads = g.backward(out.depth.mean_all());
    assert_eq!(b.take_norm_updates().len(), 8);
    for (e, &v) in model.params.entries().iter().zip(b.vars()) {
        if !e.trainable {
            assert!(grads.get(v).is_none());
            continue;
        }
        let gr = grads.get(v).unwrap_or_else(|| panic!("{} has no gradient", e.name));
        assert!(gr.is_finite(), "{}", e.name);
        assert!(gr.data().iter().any(|&x| x != 0.0), "{} gradient is identically zero", e.name);
    }
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let model = Model::new(NetworkConfig::toy_teacher(), 3).unwrap();
    let ck = Checkpoint::from_model(&model, serde_json::json!({"epoch": 4}));
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.model().unwrap(), model);
    let mut broken = bytes.clone();
    broken[100] ^= 1;
    assert!(Checkpoint::from_bytes(&broken, Path::new("x")).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.write(&path).unwrap();
    assert_eq!(Checkpoint::read(&path).unwrap(), ck);
}
