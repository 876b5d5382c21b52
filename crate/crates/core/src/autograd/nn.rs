//! Fused neural-network kernels over channels-last `(b, h, w, c)` tensors.

use super::graph::Var;
use crate::resample;
use crate::tensor::{gemm, Float, Tensor};

/// Copies `(b, h, w, c)` into a zero border of width `pad`.
fn pad_nhwc<T: Float>(x: &[T], (b, h, w, c): (usize, usize, usize, usize), pad: usize) -> Vec<T> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); b * hp * wp * c];
    for n in 0..b {
        for y in 0..h {
            let src = ((n * h + y) * w) * c;
            let dst = ((n * hp + y + pad) * wp + pad) * c;
            out[dst..dst + w * c].copy_from_slice(&x[src..src + w * c]);
        }
    }
    out
}

fn dims4(shape: &[usize], what: &str) -> (usize, usize, usize, usize) {
    match *shape {
        [b, h, w, c] => (b, h, w, c),
        _ => panic!("{what} expects (b, h, w, c), got {shape:?}"),
    }
}

/// Normalization statistics used by [`Var::batch_norm`].
pub enum NormStats<'a, T> {
    /// Normalize with the statistics of this batch.
    Batch,
    /// Normalize with fixed (running) statistics.
    Fixed { mean: &'a [T], var: &'a [T] },
}

/// Per-channel statistics of a training-mode batch norm, for running averages.
#[derive(Debug, Clone)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    /// Unbiased variance.
    pub var: Vec<T>,
}

impl<'g, T: Float> Var<'g, T> {
    /// Stride-1 "same" convolution with an odd `k × k` kernel. The weight is
    /// laid out `(k * k * c_in, c_out)` with rows ordered `(ky, kx, c_in)`.
    ///
    /// Each image is zero-padded and flattened; every kernel tap is then one
    /// matrix product over a shifted window of the padded rows. Outputs are
    /// produced on the padded width and the border columns discarded.
    pub fn conv2d(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>, k: usize) -> Var<'g, T> {
        assert!(k % 2 == 1, "conv2d kernel must be odd");
        let (x, wv) = (self.value(), weight.value());
        let dims @ (b, h, w, c) = dims4(x.shape(), "conv2d");
        let &[rows_w, cout] = wv.shape() else {
            panic!("conv2d weight must be 2-d");
        };
        assert_eq!(rows_w, k * k * c, "conv2d weight rows vs k*k*c_in");
        let pad = k / 2;
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        // rows of the flattened output window: the last valid pixel is (h-1, w-1)
        let rows = (h - 1) * wp + w;
        let xp = pad_nhwc(x.data(), dims, pad);
        let mut out = vec![T::zero(); b * h * w * cout];
        let mut acc = vec![T::zero(); rows * cout];
        for n in 0..b {
            let img = &xp[n * hp * wp * c..(n + 1) * hp * wp * c];
            for tap in 0..k * k {
                let off = (tap / k) * wp + tap % k;
                gemm(
                    rows,
                    c,
                    cout,
                    &img[off * c..(off + rows) * c],
                    false,
                    &wv.data()[tap * c * cout..(tap + 1) * c * cout],
                    false,
                    if tap == 0 { T::zero() } else { T::one() },
                    &mut acc,
                );
            }
            for y in 0..h {
                let dst = (n * h + y) * w * cout;
                out[dst..dst + w * cout].copy_from_slice(&acc[y * wp * cout..(y * wp + w) * cout]);
            }
        }
        let y = self.graph.op(
            Tensor::new(vec![b, h, w, cout], out),
            &[self, weight],
            move |g, need| {
                let mut dxp = need[0].then(|| vec![T::zero(); b * hp * wp * c]);
                let mut dw = need[1].then(|| vec![T::zero(); k * k * c * cout]);
                let mut gp = vec![T::zero(); rows * cout];
                for n in 0..b {
                    for y in 0..h {
                        let src = (n * h + y) * w * cout;
                        gp[y * wp * cout..(y * wp + w) * cout].copy_from_slice(&g.data()[src..src + w * cout]);
                    }
                    for tap in 0..k * k {
                        let off = (tap / k) * wp + tap % k;
                        let wt = &wv.data()[tap * c * cout..(tap + 1) * c * cout];
                        if let Some(dxp) = dxp.as_mut() {
                            let img = &mut dxp[n * hp * wp * c..(n + 1) * hp * wp * c];
                            gemm(rows, cout, c, &gp, false, wt, true, T::one(), &mut img[off * c..(off + rows) * c]);
                        }
                        if let Some(dw) = dw.as_mut() {
                            let img = &xp[n * hp * wp * c..(n + 1) * hp * wp * c];
                            gemm(
                                c,
                                rows,
                                cout,
                                &img[off * c..(off + rows) * c],
                                true,
                                &gp,
                                false,
                                T::one(),
                                &mut dw[tap * c * cout..(tap + 1) * c * cout],
                            );
                        }
                    }
                }
                let gx = dxp.map(|dxp| {
                    let mut d = vec![T::zero(); b * h * w * c];
                    for n in 0..b {
                        for y in 0..h {
                            let src = ((n * hp + y + pad) * wp + pad) * c;
                            let dst = (n * h + y) * w * c;
                            d[dst..dst + w * c].copy_from_slice(&dxp[src..src + w * c]);
                        }
                    }
                    Tensor::new(vec![b, h, w, c], d)
                });
                vec![gx, dw.map(|d| Tensor::new(vec![k * k * c, cout], d))]
            },
        );
        match bias {
            Some(bv) => y.add_broadcast(bv),
            None => y,
        }
    }

    /// 2×2 average pooling with stride 2; spatial dims must be even.
    pub fn avg_pool2(self) -> Var<'g, T> {
        let x = self.value();
        let (b, h, w, c) = dims4(x.shape(), "avg_pool2");
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let q = T::of(0.25);
        let mut out = vec![T::zero(); b * oh * ow * c];
        let xd = x.data();
        for n in 0..b {
            for y in 0..oh {
                for xx in 0..ow {
                    let o = ((n * oh + y) * ow + xx) * c;
                    let i00 = ((n * h + 2 * y) * w + 2 * xx) * c;
                    let i01 = i00 + c;
                    let i10 = i00 + w * c;
                    let i11 = i10 + c;
                    for ch in 0..c {
                        out[o + ch] = q * (xd[i00 + ch] + xd[i01 + ch] + xd[i10 + ch] + xd[i11 + ch]);
                    }
                }
            }
        }
        self.graph
            .op(Tensor::new(vec![b, oh, ow, c], out), &[self], move |g, _| {
                let mut d = vec![T::zero(); b * h * w * c];
                let gd = g.data();
                for n in 0..b {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let o = ((n * oh + y) * ow + xx) * c;
                            let i00 = ((n * h + 2 * y) * w + 2 * xx) * c;
                            for ch in 0..c {
                                let v = q * gd[o + ch];
                                d[i00 + ch] = v;
                                d[i00 + c + ch] = v;
                                d[i00 + w * c + ch] = v;
                                d[i00 + w * c + c + ch] = v;
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(vec![b, h, w, c], d))]
            })
    }

    /// Bilinear resize of the spatial axes (see [`crate::resample`]).
    pub fn resize_bilinear(self, oh: usize, ow: usize) -> Var<'g, T> {
        let x = self.value();
        let dims @ (b, h, w, c) = dims4(x.shape(), "resize_bilinear");
        if (h, w) == (oh, ow) {
            return self;
        }
        let out = resample::bilinear_nhwc(x.data(), dims, oh, ow);
        self.graph
            .op(Tensor::new(vec![b, oh, ow, c], out), &[self], move |g, _| {
                let d = resample::bilinear_nhwc_adjoint(g.data(), dims, oh, ow);
                vec![Some(Tensor::new(vec![b, h, w, c], d))]
            })
    }

    /// Batch normalization over every axis but the last.
    pub fn batch_norm(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        stats: NormStats<'_, T>,
        eps: f64,
    ) -> (Var<'g, T>, Option<BatchMoments<T>>) {
        let x = self.value();
        let c = *x.shape().last().unwrap();
        let m = x.len() / c;
        let eps = T::of(eps);
        let (mean, var, moments) = match stats {
            NormStats::Batch => {
                let mut mean = vec![T::zero(); c];
                for row in x.data().chunks_exact(c) {
                    for (s, &v) in mean.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                let inv_m = T::one() / T::of(m as f64);
                mean.iter_mut().for_each(|s| *s *= inv_m);
                let mut var = vec![T::zero(); c];
                for row in x.data().chunks_exact(c) {
                    for ((s, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v - mu;
                        *s += d * d;
                    }
                }
                let unbiased: Vec<T> = var
                    .iter()
                    .map(|&s| s / T::of((m.max(2) - 1) as f64))
                    .collect();
                var.iter_mut().for_each(|s| *s *= inv_m);
                let moments = BatchMoments {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(moments))
            }
            NormStats::Fixed { mean, var } => (mean.to_vec(), var.to_vec(), None),
        };
        let batch_mode = moments.is_some();
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        for (row, xr) in xhat.chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
            for i in 0..c {
                row[i] = (xr[i] - mean[i]) * inv_std[i];
            }
        }
        let (gv, bv) = (gamma.value(), beta.value());
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for i in 0..c {
                row[i] = row[i] * gv.data()[i] + bv.data()[i];
            }
        }
        let shape = x.shape().to_vec();
        let y = self.graph.op(
            Tensor::new(shape.clone(), out),
            &[self, gamma, beta],
            move |g, need| {
                let gd = g.data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (gr, xr) in gd.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for i in 0..c {
                        sum_g[i] += gr[i];
                        sum_gx[i] += gr[i] * xr[i];
                    }
                }
                let gx = need[0].then(|| {
                    let mut d = vec![T::zero(); gd.len()];
                    let inv_m = T::one() / T::of(m as f64);
                    for ((dr, gr), xr) in d
                        .chunks_exact_mut(c)
                        .zip(gd.chunks_exact(c))
                        .zip(xhat.chunks_exact(c))
                    {
                        for i in 0..c {
                            let scale = gv.data()[i] * inv_std[i];
                            dr[i] = if batch_mode {
                                scale * (gr[i] - inv_m * (sum_g[i] + xr[i] * sum_gx[i]))
                            } else {
                                scale * gr[i]
                            };
                        }
                    }
                    Tensor::new(shape.clone(), d)
                });
                vec![
                    gx,
                    need[1].then(|| Tensor::new(vec![c], sum_gx.clone())),
                    need[2].then(|| Tensor::new(vec![c], sum_g.clone())),
                ]
            },
        );
        (y, moments)
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Var<'g, T> {
        let x = self.value();
        let c = *x.shape().last().unwrap();
        let eps = T::of(eps);
        let inv_c = T::one() / T::of(c as f64);
        let rows = x.len() / c;
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        for (r, (hr, xr)) in xhat.chunks_exact_mut(c).zip(x.data().chunks_exact(c)).enumerate() {
            let mean = xr.iter().copied().sum::<T>() * inv_c;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..c {
                hr[i] = (xr[i] - mean) * is;
            }
        }
        let (gv, bv) = (gamma.value(), beta.value());
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for i in 0..c {
                row[i] = row[i] * gv.data()[i] + bv.data()[i];
            }
        }
        let shape = x.shape().to_vec();
        self.graph.op(
            Tensor::new(shape.clone(), out),
            &[self, gamma, beta],
            move |g, need| {
                let gd = g.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); gd.len()];
                for r in 0..rows {
                    let gr = &gd[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for i in 0..c {
                        dgamma[i] += gr[i] * hr[i];
                        dbeta[i] += gr[i];
                        let dh = gr[i] * gv.data()[i];
                        s1 += dh;
                        s2 += dh * hr[i];
                    }
                    let dr = &mut dx[r * c..(r + 1) * c];
                    for i in 0..c {
                        let dh = gr[i] * gv.data()[i];
                        dr[i] = inv_std[r] * (dh - inv_c * (s1 + hr[i] * s2));
                    }
                }
                vec![
                    need[0].then(|| Tensor::new(shape.clone(), dx)),
                    need[1].then(|| Tensor::new(vec![c], dgamma)),
                    need[2].then(|| Tensor::new(vec![c], dbeta)),
                ]
            },
        )
    }

    pub fn softmax_last(self) -> Var<'g, T> {
        let x = self.value();
        let c = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let y = Tensor::new(x.shape().to_vec(), out);
        let yc = y.clone();
        self.graph.op(y, &[self], move |g, _| {
            let mut d = g.data().to_vec();
            for (dr, yr) in d.chunks_exact_mut(c).zip(yc.data().chunks_exact(c)) {
                let dot: T = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for (dv, &yv) in dr.iter_mut().zip(yr) {
                    *dv = yv * (*dv - dot);
                }
            }
            vec![Some(Tensor::new(yc.shape().to_vec(), d))]
        })
    }

    /// Inclusive prefix sum over the last axis.
    pub fn cumsum_last(self) -> Var<'g, T> {
        let x = self.value();
        let c = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for i in 1..c {
                let prev = row[i - 1];
                row[i] += prev;
            }
        }
        let shape = x.shape().to_vec();
        self.graph.op(Tensor::new(shape.clone(), out), &[self], move |g, _| {
            let mut d = g.data().to_vec();
            for row in d.chunks_exact_mut(c) {
                for i in (0..c.saturating_sub(1)).rev() {
                    let next = row[i + 1];
                    row[i] += next;
                }
            }
            vec![Some(Tensor::new(shape.clone(), d))]
        })
    }

    /// Divides each last-axis row by its sum.
    pub fn normalize_last(self) -> Var<'g, T> {
        let x = self.value();
        let c = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        let mut sums = Vec::with_capacity(out.len() / c);
        for row in out.chunks_exact_mut(c) {
            let s: T = row.iter().copied().sum();
            sums.push(s);
            row.iter_mut().for_each(|v| *v /= s);
        }
        let y = Tensor::new(x.shape().to_vec(), out);
        let yc = y.clone();
        self.graph.op(y, &[self], move |g, _| {
            let mut d = g.data().to_vec();
            for ((dr, yr), &s) in d.chunks_exact_mut(c).zip(yc.data().chunks_exact(c)).zip(&sums) {
                let dot: T = dr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for dv in dr.iter_mut() {
                    *dv = (*dv - dot) / s;
                }
            }
            vec![Some(Tensor::new(yc.shape().to_vec(), d))]
        })
    }

    /// Bidirectional squared Chamfer distance between the 1-d point set in
    /// `self` and the fixed point set `points`.
    pub fn chamfer_1d(self, points: &[T]) -> Var<'g, T> {
        let centers = self.value();
        let cs = centers.data();
        assert!(!cs.is_empty() && !points.is_empty(), "chamfer needs two nonempty sets");
        // nearest center for every point, nearest point for every center
        let mut point_nn = Vec::with_capacity(points.len());
        let mut total = T::zero();
        for &x in points {
            let (j, d) = nearest(cs, x);
            point_nn.push(j);
            total += d;
        }
        let mut center_nn = Vec::with_capacity(cs.len());
        for &y in cs {
            let (i, d) = nearest(points, y);
            center_nn.push(points[i]);
            total += d;
        }
        let points = points.to_vec();
        let shape = centers.shape().to_vec();
        self.graph.op(Tensor::scalar(total), &[self], move |g, _| {
            let two_g = T::of(2.0) * g.item();
            let cs = centers.data();
            let mut d = vec![T::zero(); cs.len()];
            for (&x, &j) in points.iter().zip(&point_nn) {
                d[j] += two_g * (cs[j] - x);
            }
            for ((dv, &y), &x) in d.iter_mut().zip(cs).zip(&center_nn) {
                *dv += two_g * (y - x);
            }
            vec![Some(Tensor::new(shape.clone(), d))]
        })
    }

    /// Fused per-row `softmax(r · w + bias) · centers` for `r (B, P, K)`,
    /// `w (K, N)`, `bias (N)` and `centers (B, N)`, giving `(B, P)`. Works in
    /// row chunks so the `(B, P, N)` probabilities are never materialized.
    pub fn bin_mixture(self, w: Var<'g, T>, bias: Var<'g, T>, centers: Var<'g, T>) -> Var<'g, T> {
        let (r, wv, bv, cv) = (self.value(), w.value(), bias.value(), centers.value());
        let &[bs, p, k] = r.shape() else {
            panic!("bin_mixture expects (B, P, K), got {:?}", r.shape());
        };
        let &[kw, n] = wv.shape() else {
            panic!("bin_mixture weight must be (K, N)");
        };
        assert_eq!(k, kw, "bin_mixture: K mismatch");
        assert_eq!(bv.shape(), &[n], "bin_mixture: bias shape");
        assert_eq!(cv.shape(), &[bs, n], "bin_mixture: centers shape");
        let mut out = vec![T::zero(); bs * p];
        let mut z = vec![T::zero(); MIX_CHUNK * n];
        for bi in 0..bs {
            let c = &cv.data()[bi * n..(bi + 1) * n];
            for start in (0..p).step_by(MIX_CHUNK) {
                let rows = MIX_CHUNK.min(p - start);
                let zc = &mut z[..rows * n];
                mix_probs(&r.data()[(bi * p + start) * k..(bi * p + start + rows) * k], &wv, &bv, zc);
                for (i, row) in zc.chunks_exact(n).enumerate() {
                    out[bi * p + start + i] = row.iter().zip(c).map(|(&a, &b)| a * b).sum();
                }
            }
        }
        let depth = Tensor::new(vec![bs, p], out);
        let dv = depth.clone();
        self.graph.op(depth, &[self, w, bias, centers], move |g, need| {
            let mut gr = need[0].then(|| vec![T::zero(); bs * p * k]);
            let mut gw = need[1].then(|| vec![T::zero(); k * n]);
            let mut gb = need[2].then(|| vec![T::zero(); n]);
            let mut gc = need[3].then(|| vec![T::zero(); bs * n]);
            let mut z = vec![T::zero(); MIX_CHUNK * n];
            for bi in 0..bs {
                let c = &cv.data()[bi * n..(bi + 1) * n];
                for start in (0..p).step_by(MIX_CHUNK) {
                    let rows = MIX_CHUNK.min(p - start);
                    let rr = &r.data()[(bi * p + start) * k..(bi * p + start + rows) * k];
                    let zc = &mut z[..rows * n];
                    mix_probs(rr, &wv, &bv, zc);
                    for (i, row) in zc.chunks_exact_mut(n).enumerate() {
                        let gd = g.data()[bi * p + start + i];
                        let d = dv.data()[bi * p + start + i];
                        if let Some(gc) = gc.as_mut() {
                            for (acc, &pv) in gc[bi * n..(bi + 1) * n].iter_mut().zip(row.iter()) {
                                *acc += gd * pv;
                            }
                        }
                        // d depth / d logit_j = p_j (c_j - depth)
                        for (pv, &cj) in row.iter_mut().zip(c) {
                            *pv = gd * *pv * (cj - d);
                        }
                    }
                    if let Some(gr) = gr.as_mut() {
                        let dst = &mut gr[(bi * p + start) * k..(bi * p + start + rows) * k];
                        gemm(rows, n, k, zc, false, wv.data(), true, T::zero(), dst);
                    }
                    if let Some(gw) = gw.as_mut() {
                        gemm(k, rows, n, rr, true, zc, false, T::one(), gw);
                    }
                    if let Some(gb) = gb.as_mut() {
                        for row in zc.chunks_exact(n) {
                            for (a, &v) in gb.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                    }
                }
            }
            vec![
                gr.map(|d| Tensor::new(vec![bs, p, k], d)),
                gw.map(|d| Tensor::new(vec![k, n], d)),
                gb.map(|d| Tensor::new(vec![n], d)),
                gc.map(|d| Tensor::new(vec![bs, n], d)),
            ]
        })
    }
}

const MIX_CHUNK: usize = 256;

/// Softmax of `r · w + bias` for one chunk of rows, written into `z`.
fn mix_probs<T: Float>(r: &[T], w: &Tensor<T>, bias: &Tensor<T>, z: &mut [T]) {
    let (k, n) = (w.dim(0), w.dim(1));
    let rows = r.len() / k;
    for row in z.chunks_exact_mut(n) {
        row.copy_from_slice(bias.data());
    }
    gemm(rows, k, n, r, false, w.data(), false, T::one(), z);
    for row in z.chunks_exact_mut(n) {
        softmax_in_place(row);
    }
}

pub(crate) fn softmax_in_place<T: Float>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    row.iter_mut().for_each(|v| *v -= mx);
    T::exp_inplace(row);
    let inv = T::one() / row.iter().copied().sum::<T>();
    row.iter_mut().for_each(|v| *v *= inv);
}

fn nearest<T: Float>(set: &[T], q: T) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (i, &v) in set.iter().enumerate() {
        let d = (v - q) * (v - q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}
