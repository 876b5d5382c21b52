use super::config::NetworkConfig;
use super::params::{Bound, Mode};
use crate::autograd::{NormStats, Var};
use crate::error::{invalid, Result};
use crate::tensor::{Float, Tensor};

pub const BIN_EPS: f64 = 1e-3;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.01;

/// Output of the ordinal head on a `(B, H, W, C)` decoded grid.
pub struct HeadOutput<'g, T> {
    /// `(B, N)`
    pub bin_logits: Var<'g, T>,
    /// `(B, H*W, K)` range-attention maps.
    pub range_maps: Var<'g, T>,
}

/// Everything a forward pass exposes, cropped back to the input size.
pub struct ForwardOutput<'g, T> {
    /// `(B, H, W)` metric depth.
    pub depth: Var<'g, T>,
    /// `(B, H*W, K)` range-attention maps at the input resolution.
    pub range_maps: Var<'g, T>,
    /// `(B, N)`
    pub bin_logits: Var<'g, T>,
    /// `(B, N)`, rows sum to 1.
    pub widths: Var<'g, T>,
    /// `(B, N)`, metric bin centers.
    pub centers: Var<'g, T>,
    /// `(decoder block index, (B, h, w, c))` at padded resolution.
    pub taps: Vec<(usize, Var<'g, T>)>,
}

fn conv_block<'g, T: Float>(b: &Bound<'g, '_, T>, prefix: &str, x: Var<'g, T>) -> Var<'g, T> {
    let y = x.conv2d(b.var(&format!("{prefix}.conv.w")), None, 3);
    let bn = format!("{prefix}.bn");
    let gamma = b.var(&format!("{bn}.gamma"));
    let beta = b.var(&format!("{bn}.beta"));
    let y = match b.mode() {
        Mode::Train => {
            let (y, moments) = y.batch_norm(gamma, beta, NormStats::Batch, BN_EPS);
            b.record_norm(&bn, moments.expect("batch statistics"));
            y
        }
        Mode::Eval | Mode::EvalWithGrad => {
            let mean = b.var(&format!("{bn}.mean")).value();
            let var = b.var(&format!("{bn}.var")).value();
            let stats = NormStats::Fixed {
                mean: mean.data(),
                var: var.data(),
            };
            y.batch_norm(gamma, beta, stats, BN_EPS).0
        }
    };
    y.relu()
}

fn dims4<T: Float>(x: Var<'_, T>) -> (usize, usize, usize, usize) {
    match x.shape()[..] {
        [b, h, w, c] => (b, h, w, c),
        ref s => panic!("expected a (B, H, W, C) grid, got {s:?}"),
    }
}

/// Runs the encoder. Returns each block's input followed by the deepest
/// output: `grids[i]` enters block `i`, `grids[n]` leaves the last block.
pub fn encode<'g, T: Float>(b: &Bound<'g, '_, T>, cfg: &NetworkConfig, x: Var<'g, T>) -> Result<Vec<Var<'g, T>>> {
    let (_, h, w, c) = dims4(x);
    if c != cfg.in_channels {
        return Err(invalid!("input has {c} channels, network expects {}", cfg.in_channels));
    }
    let m = 1 << cfg.downsamples();
    if h % m != 0 || w % m != 0 {
        return Err(invalid!("{h}x{w} input is not divisible by {m}"));
    }
    let mut grids = vec![x];
    let mut cur = x;
    for (i, blk) in cfg.encoder_blocks.iter().enumerate() {
        cur = conv_block(b, &format!("enc.{i}"), cur);
        if blk.downsample {
            cur = cur.avg_pool2();
        }
        grids.push(cur);
    }
    Ok(grids)
}

/// Decoder: each block upsamples to the resolution entering its mirrored
/// encoder block, concatenates that grid, then applies conv, norm, ReLU.
/// Returns the final grid and the requested taps.
pub fn decode<'g, T: Float>(
    b: &Bound<'g, '_, T>,
    cfg: &NetworkConfig,
    grids: &[Var<'g, T>],
) -> (Var<'g, T>, Vec<(usize, Var<'g, T>)>) {
    let n = cfg.encoder_blocks.len();
    assert_eq!(grids.len(), n + 1, "decode expects the encoder's grids");
    let mut cur = grids[n];
    let mut taps = Vec::new();
    for i in 0..n {
        let skip = grids[n - 1 - i];
        let (_, sh, sw, _) = dims4(skip);
        cur = cur.resize_bilinear(sh, sw).concat_last(skip);
        cur = conv_block(b, &format!("dec.{i}"), cur);
        if cfg.tap_indices.contains(&i) {
            taps.push((i, cur));
        }
    }
    (cur, taps)
}

fn transformer_layer<'g, T: Float>(
    b: &Bound<'g, '_, T>,
    cfg: &NetworkConfig,
    l: usize,
    x: Var<'g, T>,
) -> Var<'g, T> {
    let p = |s: &str| b.var(&format!("head.tf.{l}.{s}"));
    let (bs, n, e) = match x.shape()[..] {
        [a, b, c] => (a, b, c),
        _ => unreachable!(),
    };
    let h = cfg.heads;
    let dh = e / h;
    let qkv = x
        .linear(p("qkv.w"), Some(p("qkv.b")))
        .reshape([bs, n, 3, h, dh])
        .permute(&[2, 0, 3, 1, 4]);
    let part = |i: usize| qkv.narrow(0, i, 1).reshape([bs * h, n, dh]);
    let (q, k, v) = (part(0), part(1), part(2));
    let attn = q.bmm(k, false, true).scale(1.0 / (dh as f64).sqrt()).softmax_last();
    let ctx = attn
        .bmm(v, false, false)
        .reshape([bs, h, n, dh])
        .permute(&[0, 2, 1, 3])
        .reshape([bs, n, e]);
    let a = ctx.linear(p("proj.w"), Some(p("proj.b")));
    let x = x.add(a).layer_norm(p("ln1.gamma"), p("ln1.beta"), LN_EPS);
    let f = x
        .linear(p("ff1.w"), Some(p("ff1.b")))
        .relu()
        .linear(p("ff2.w"), Some(p("ff2.b")));
    x.add(f).layer_norm(p("ln2.gamma"), p("ln2.beta"), LN_EPS)
}

/// Patch embedding, transformer, bin-logit MLP and range-attention softmax.
pub fn ordinal_head<'g, T: Float>(
    b: &Bound<'g, '_, T>,
    cfg: &NetworkConfig,
    decoded: Var<'g, T>,
) -> Result<HeadOutput<'g, T>> {
    let (bs, h, w, c) = dims4(decoded);
    let (p, e, k) = (cfg.patch_size, cfg.embed_dim, cfg.range_kernels);
    if h % p != 0 || w % p != 0 {
        return Err(invalid!("{h}x{w} grid is not divisible by patch size {p}"));
    }
    let (gh, gw) = (h / p, w / p);
    let n_patch = gh * gw;
    if n_patch < k + 1 {
        return Err(invalid!(
            "{h}x{w} grid gives {n_patch} patches; {} are needed for {k} range kernels",
            k + 1
        ));
    }
    let tokens = decoded
        .reshape([bs, gh, p, gw, p, c])
        .permute(&[0, 1, 3, 2, 4, 5])
        .reshape([bs, n_patch, p * p * c])
        .linear(b.var("head.patch.w"), Some(b.var("head.patch.b")));
    let g = cfg.pos_grid;
    let pos = b
        .var("head.pos")
        .reshape([1, g, g, e])
        .resize_bilinear(gh, gw)
        .reshape([n_patch, e]);
    let mut tokens = tokens.add_broadcast(pos);
    for l in 0..cfg.transformer_layers {
        tokens = transformer_layer(b, cfg, l, tokens);
    }
    let bin_logits = tokens
        .narrow(1, 0, 1)
        .reshape([bs, e])
        .linear(b.var("head.mlp1.w"), Some(b.var("head.mlp1.b")))
        .leaky_relu(LEAKY_SLOPE)
        .linear(b.var("head.mlp2.w"), Some(b.var("head.mlp2.b")))
        .leaky_relu(LEAKY_SLOPE)
        .linear(b.var("head.mlp3.w"), Some(b.var("head.mlp3.b")));
    let kernels = tokens.narrow(1, 1, k);
    let range_maps = decoded
        .conv2d(b.var("head.conv3.w"), Some(b.var("head.conv3.b")), 3)
        .reshape([bs, h * w, e])
        .bmm(kernels, false, true);
    Ok(HeadOutput { bin_logits, range_maps })
}

/// Bin widths and centers from logits over the last axis:
/// `w = normalize(relu(logit) + eps)`, `c = d_min + (d_max - d_min) * (cumsum(w) - w / 2)`.
pub fn bins_from_logits<'g, T: Float>(logits: Var<'g, T>, d_min: f64, d_max: f64) -> (Var<'g, T>, Var<'g, T>) {
    let widths = logits.relu().affine(1.0, BIN_EPS).normalize_last();
    let span = d_max - d_min;
    let centers = widths
        .cumsum_last()
        .sub(widths.scale(0.5))
        .affine(span, d_min);
    (widths, centers)
}

/// Per-pixel bin probabilities `softmax(R · w + b)`, `(B, P, N)`.
pub fn bin_probabilities<'g, T: Float>(b: &Bound<'g, '_, T>, range_maps: Var<'g, T>) -> Var<'g, T> {
    range_maps
        .linear(b.var("head.out.w"), Some(b.var("head.out.b")))
        .softmax_last()
}

/// Per-pixel `sum_k centers[k] * p[k]` with `p` from [`bin_probabilities`],
/// fused so the probabilities are never stored.
pub fn depth_from_range_maps<'g, T: Float>(
    b: &Bound<'g, '_, T>,
    range_maps: Var<'g, T>,
    centers: Var<'g, T>,
) -> Var<'g, T> {
    range_maps.bin_mixture(b.var("head.out.w"), b.var("head.out.b"), centers)
}

/// Full network on a `(B, H, W, C)` batch. Inputs whose sides are not a
/// multiple of [`NetworkConfig::size_multiple`] are zero-padded symmetrically
/// and the outputs cropped back.
pub fn forward<'g, T: Float>(b: &Bound<'g, '_, T>, cfg: &NetworkConfig, x: Var<'g, T>) -> Result<ForwardOutput<'g, T>> {
    let (bs, h, w, _) = dims4(x);
    let (ph, top) = cfg.padded_len(h);
    let (pw, left) = cfg.padded_len(w);
    let xp = if (ph, pw) == (h, w) {
        x
    } else {
        x.pad_spatial(top, ph - h - top, left, pw - w - left)
    };
    let grids = encode(b, cfg, xp)?;
    let (decoded, taps) = decode(b, cfg, &grids);
    let head = ordinal_head(b, cfg, decoded)?;
    let (widths, centers) = bins_from_logits(head.bin_logits, cfg.d_min as f64, cfg.d_max as f64);
    let k = cfg.range_kernels;
    let mut range_maps = head.range_maps;
    if (ph, pw) != (h, w) {
        range_maps = range_maps
            .reshape([bs, ph, pw, k])
            .narrow(1, top, h)
            .narrow(2, left, w)
            .reshape([bs, h * w, k]);
    }
    let depth = depth_from_range_maps(b, range_maps, centers).reshape([bs, h, w]);
    Ok(ForwardOutput {
        depth,
        range_maps,
        bin_logits: head.bin_logits,
        widths,
        centers,
        taps,
    })
}

/// Stacks equally sized channels-last grids into one `(B, H, W, C)` tensor.
pub fn stack<T: Float>(grids: &[(&[f32], (usize, usize, usize))]) -> Result<Tensor<T>> {
    let Some(&(_, dims)) = grids.first() else {
        return Err(invalid!("empty batch"));
    };
    if grids.iter().any(|(_, d)| *d != dims) {
        return Err(invalid!("batch members differ in size"));
    }
    let (h, w, c) = dims;
    let data = grids
        .iter()
        .flat_map(|(g, _)| g.iter().map(|&v| T::of(v as f64)))
        .collect();
    Ok(Tensor::new(vec![grids.len(), h, w, c], data))
}
