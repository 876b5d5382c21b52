//! Bilinear resampling shared by the data pipeline and the differentiable
//! resize op, so both produce identical numbers.
//!
//! Convention: half-pixel centers, corners not aligned. Output index `i` on an
//! axis of `n_in -> n_out` samples the source at
//! `s = (i + 0.5) * n_in / n_out - 0.5`, clamped below at 0; the two taps are
//! `floor(s)` and `floor(s) + 1` (clamped to the last index) with weights
//! `1 - frac(s)` and `frac(s)`. Rows are interpolated after columns:
//! `out = (1-wy) * ((1-wx) a + wx b) + wy * ((1-wx) c + wx d)`.

use crate::tensor::Float;

#[derive(Debug, Clone)]
pub struct AxisTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    /// Weight of `hi`; `lo` gets `1 - w`.
    pub w: Vec<f64>,
}

pub fn bilinear_taps(n_in: usize, n_out: usize) -> AxisTaps {
    let scale = n_in as f64 / n_out as f64;
    let mut taps = AxisTaps {
        lo: Vec::with_capacity(n_out),
        hi: Vec::with_capacity(n_out),
        w: Vec::with_capacity(n_out),
    };
    for i in 0..n_out {
        let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (s.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        let w = if lo == n_in - 1 { 0.0 } else { s - lo as f64 };
        taps.lo.push(lo);
        taps.hi.push(hi);
        taps.w.push(w);
    }
    taps
}

/// Resizes a `(b, h, w, c)` channels-last buffer to `(b, oh, ow, c)`.
pub fn bilinear_nhwc<T: Float>(
    src: &[T],
    (b, h, w, c): (usize, usize, usize, usize),
    oh: usize,
    ow: usize,
) -> Vec<T> {
    assert_eq!(src.len(), b * h * w * c);
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![T::zero(); b * oh * ow * c];
    for n in 0..b {
        let base = n * h * w * c;
        for oy in 0..oh {
            let wy = T::of(ty.w[oy]);
            let wy0 = T::one() - wy;
            let r0 = base + ty.lo[oy] * w * c;
            let r1 = base + ty.hi[oy] * w * c;
            for ox in 0..ow {
                let wx = T::of(tx.w[ox]);
                let wx0 = T::one() - wx;
                let (c0, c1) = (tx.lo[ox] * c, tx.hi[ox] * c);
                let o = ((n * oh + oy) * ow + ox) * c;
                for ch in 0..c {
                    let top = wx0 * src[r0 + c0 + ch] + wx * src[r0 + c1 + ch];
                    let bot = wx0 * src[r1 + c0 + ch] + wx * src[r1 + c1 + ch];
                    out[o + ch] = wy0 * top + wy * bot;
                }
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_nhwc`]: scatters an output gradient back to the source grid.
pub fn bilinear_nhwc_adjoint<T: Float>(
    grad: &[T],
    (b, h, w, c): (usize, usize, usize, usize),
    oh: usize,
    ow: usize,
) -> Vec<T> {
    assert_eq!(grad.len(), b * oh * ow * c);
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![T::zero(); b * h * w * c];
    for n in 0..b {
        let base = n * h * w * c;
        for oy in 0..oh {
            let wy = T::of(ty.w[oy]);
            let wy0 = T::one() - wy;
            let r0 = base + ty.lo[oy] * w * c;
            let r1 = base + ty.hi[oy] * w * c;
            for ox in 0..ow {
                let wx = T::of(tx.w[ox]);
                let wx0 = T::one() - wx;
                let (c0, c1) = (tx.lo[ox] * c, tx.hi[ox] * c);
                let o = ((n * oh + oy) * ow + ox) * c;
                for ch in 0..c {
                    let g = grad[o + ch];
                    let gt = wy0 * g;
                    let gb = wy * g;
                    out[r0 + c0 + ch] += wx0 * gt;
                    out[r0 + c1 + ch] += wx * gt;
                    out[r1 + c0 + ch] += wx0 * gb;
                    out[r1 + c1 + ch] += wx * gb;
                }
            }
        }
    }
    out
}
