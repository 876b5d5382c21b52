use super::types::{check_mu, scaled_len, ColorImage, DepthMap};
use crate::error::{invalid, Result};
use crate::resample::bilinear_nhwc;

/// Bilinear downsampling with half-pixel centers and align-corners off
/// (see [`crate::resample::bilinear_taps`]).
pub fn downsample_image(img: &ColorImage, mu: f64) -> Result<ColorImage> {
    check_mu(mu)?;
    let (h, w) = img.dims();
    let (oh, ow) = (scaled_len(h, mu), scaled_len(w, mu));
    if oh == 0 || ow == 0 {
        return Err(invalid!("mu={mu} shrinks a {h}x{w} image to nothing"));
    }
    let out = bilinear_nhwc(img.pixels(), (1, h, w, 3), oh, ow);
    Ok(ColorImage::from_raw(oh, ow, out))
}

/// Downsamples depth by `mu`. All-valid maps go through the same bilinear
/// kernel as color; maps with holes use valid-mean footprint windows.
pub fn downsample_depth(d: &DepthMap, mu: f64) -> Result<DepthMap> {
    check_mu(mu)?;
    let (h, w) = d.dims();
    let (oh, ow) = (scaled_len(h, mu), scaled_len(w, mu));
    if oh == 0 || ow == 0 {
        return Err(invalid!("mu={mu} shrinks a {h}x{w} depth map to nothing"));
    }
    Ok(resize_depth(d, oh, ow))
}

/// Resizes depth to an arbitrary grid with the same validity rules as
/// [`downsample_depth`].
pub fn resize_depth(d: &DepthMap, oh: usize, ow: usize) -> DepthMap {
    assert!(oh > 0 && ow > 0, "resize_depth to an empty grid");
    let (h, w) = d.dims();
    if d.all_valid() {
        let out = bilinear_nhwc(d.values(), (1, h, w, 1), oh, ow);
        let out = out.into_iter().map(|v| v.clamp(d.d_min(), d.d_max())).collect();
        return DepthMap::from_parts_unchecked(oh, ow, out, vec![true; oh * ow], d.d_min(), d.d_max());
    }
    let rows = footprints(h, oh);
    let cols = footprints(w, ow);
    let mut values = vec![0.0f32; oh * ow];
    let mut valid = vec![false; oh * ow];
    for (oy, &(y0, y1)) in rows.iter().enumerate() {
        for (ox, &(x0, x1)) in cols.iter().enumerate() {
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    if let Some(v) = d.get(y, x) {
                        sum += v as f64;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                let i = oy * ow + ox;
                values[i] = ((sum / n as f64) as f32).clamp(d.d_min(), d.d_max());
                valid[i] = true;
            }
        }
    }
    DepthMap::from_parts_unchecked(oh, ow, values, valid, d.d_min(), d.d_max())
}

/// Half-open input range covered by each output cell: `[floor(i*s), ceil((i+1)*s))`
/// with `s = n_in / n_out`, never empty.
pub(crate) fn footprints(n_in: usize, n_out: usize) -> Vec<(usize, usize)> {
    let s = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let lo = ((i as f64 * s).floor() as usize).min(n_in - 1);
            let hi = (((i + 1) as f64 * s).ceil() as usize).clamp(lo + 1, n_in);
            (lo, hi)
        })
        .collect()
}
