//! False-color depth previews. Near depths are bright yellow, far depths dark
//! purple, with linear interpolation between five fixed stops; invalid pixels
//! are black.

use wsdepth::data::{ColorImage, DepthMap};

const STOPS: [[f32; 3]; 5] = [
    [0.988, 0.906, 0.145],
    [0.961, 0.486, 0.153],
    [0.800, 0.204, 0.376],
    [0.420, 0.090, 0.494],
    [0.078, 0.043, 0.204],
];

/// Color for `t` in `[0, 1]` (0 = near).
pub fn ramp(t: f32) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f32;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * f)
}

/// Preview scaled to the map's own `[d_min, d_max]`.
pub fn preview(d: &DepthMap) -> ColorImage {
    let (h, w) = d.dims();
    let (lo, hi) = (d.d_min(), d.d_max());
    let px = d
        .values()
        .iter()
        .zip(d.valid())
        .flat_map(|(&v, &ok)| if ok { ramp((v - lo) / (hi - lo)) } else { [0.0; 3] })
        .collect();
    ColorImage::new(h, w, px).expect("preview has the map's size")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_hits_stops() {
        let close = |a: [f32; 3], b: [f32; 3]| (0..3).all(|c| (a[c] - b[c]).abs() < 1e-6);
        assert!(close(ramp(0.0), STOPS[0]));
        assert!(close(ramp(1.0), STOPS[4]));
        assert!(close(ramp(-3.0), STOPS[0]));
        assert!(close(ramp(0.5), STOPS[2]));
        let mid = [0, 1, 2].map(|c| 0.5 * (STOPS[0][c] + STOPS[1][c]));
        assert!(close(ramp(0.125), mid));
    }
}
