use proptest::prelude::*;

use super::*;
use crate::networks::NetworkConfig;

fn map(h: usize, w: usize, v: &[f32]) -> DepthMap {
    DepthMap::dense(h, w, v.to_vec(), 0.25, 100.0).unwrap()
}

#[test]
fn perfect_prediction() {
    let gt = map(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let r = compute_metrics(&gt, &gt, None, None).unwrap();
    assert_eq!((r.rel, r.sq_rel, r.rmse, r.rmse_log, r.log10), (0.0, 0.0, 0.0, 0.0, 0.0));
    assert_eq!((r.delta1, r.delta2, r.delta3, r.n_pixels), (1.0, 1.0, 1.0, 4));
}

#[test]
fn two_pixel_example() {
    let r = compute_metrics(&map(1, 2, &[1.0, 8.0]), &map(1, 2, &[2.0, 4.0]), None, None).unwrap();
    assert!((r.rel - 0.75).abs() < 1e-12);
    assert!((r.sq_rel - 2.25).abs() < 1e-12);
    assert!((r.rmse - 8.5f64.sqrt()).abs() < 1e-12);
    assert!((r.rmse_log - 2f64.ln()).abs() < 1e-12);
    assert!((r.log10 - 2f64.log10()).abs() < 1e-12);
    assert!((r.log10 - 0.3010).abs() < 1e-4);
    assert_eq!((r.delta1, r.delta2, r.delta3), (0.0, 0.0, 0.0));
}

#[test]
fn delta_boundary_is_strict() {
    let r = compute_metrics(&map(1, 1, &[1.0]), &map(1, 1, &[1.25]), None, None).unwrap();
    assert_eq!((r.delta1, r.delta2, r.delta3), (0.0, 1.0, 1.0));
    let r = compute_metrics(&map(1, 1, &[1.25]), &map(1, 1, &[1.0]), None, None).unwrap();
    assert_eq!(r.delta1, 0.0);
}

#[test]
fn cap_clamps_both_maps() {
    let gt = map(1, 2, &[90.0, 10.0]);
    let pred = map(1, 2, &[95.0, 10.0]);
    let r = compute_metrics(&pred, &gt, Some(80.0), None).unwrap();
    assert_eq!(r.rel, 0.0);
    assert_eq!(r.protocol.cap_m, Some(80.0));
    assert!(compute_metrics(&pred, &gt, None, None).unwrap().rel > 0.0);
}

#[test]
fn crop_and_mask_restrict_pixels() {
    let gt = DepthMap::new(2, 3, vec![1.0, 2.0, 0.0, 4.0, 5.0, 6.0], vec![true, true, false, true, true, true], 0.5, 10.0)
        .unwrap();
    let pred = map(2, 3, &[9.0, 2.0, 9.0, 9.0, 5.0, 6.0]);
    let crop = Crop { y0: 0, y1: 2, x0: 1, x1: 3 };
    let r = compute_metrics(&pred, &gt, None, Some(crop)).unwrap();
    assert_eq!((r.n_pixels, r.rel), (3, 0.0));
    let only_hole = Crop { y0: 0, y1: 1, x0: 2, x1: 3 };
    assert!(matches!(compute_metrics(&pred, &gt, None, Some(only_hole)), Err(Error::NoValidPixels(_))));
    assert!(compute_metrics(&pred, &gt, None, Some(Crop { y0: 0, y1: 3, x0: 0, x1: 1 })).is_err());
    assert!(compute_metrics(&map(1, 1, &[1.0]), &gt, None, None).is_err());
}

#[test]
fn garg_crop_examples() {
    assert_eq!(garg_crop(375, 1242), Crop { y0: 153, y1: 371, x0: 44, x1: 1197 });
    for h in 3..60 {
        for w in 2..60 {
            let c = garg_crop(h, w);
            assert!(c.y1 <= h && c.x1 <= w && c.y0 < c.y1 && c.x0 < c.x1, "{h}x{w}: {c:?}");
        }
    }
}

#[test]
fn report_round_trips_and_averages() {
    let a = compute_metrics(&map(1, 2, &[1.0, 8.0]), &map(1, 2, &[2.0, 4.0]), None, None).unwrap();
    let b = compute_metrics(&map(1, 2, &[2.0, 4.0]), &map(1, 2, &[2.0, 4.0]), None, None).unwrap();
    let rep = EvalReport::from_records(vec![
        ImageRecord { name: "a".into(), metrics: a.clone() },
        ImageRecord { name: "b".into(), metrics: b },
    ])
    .unwrap();
    assert_eq!(rep.aggregate.rel, 0.375);
    assert_eq!(rep.aggregate.delta1, 0.5);
    assert_eq!(rep.aggregate.n_pixels, 4);
    assert_eq!(EvalReport::from_json(&rep.to_json()).unwrap(), rep);
    let text = rep.to_text();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().last().unwrap().starts_with("mean rel=0.375000"));
}

fn small_model() -> Model {
    Model::new(NetworkConfig::toy_student(), 3).unwrap()
}

#[test]
fn mirror_average_of_symmetric_image_is_symmetric() {
    let (h, w) = (48, 48);
    let mut px = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let m = x.min(w - 1 - x) as f32;
            px.extend_from_slice(&[(m * 0.04).min(1.0), (y as f32 / h as f32), 0.3]);
        }
    }
    let img = ColorImage::new(h, w, px).unwrap();
    let model = small_model();
    let d = mirror_average_predict(&model, &img).unwrap();
    let flipped = d.hflip();
    for (a, b) in d.values().iter().zip(flipped.values()) {
        assert!((a - b).abs() < 1e-5);
    }
    assert_eq!(d.dims(), (h, w));
    let cfg = &model.config;
    let single = predict(&model, &img).unwrap();
    assert!(single.values().iter().all(|&v| v >= cfg.d_min && v <= cfg.d_max));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invariances(vals in prop::collection::vec((0.6f32..9.0, 0.6f32..9.0), 1..20), up in any::<bool>(), rot in 0usize..20) {
        let n = vals.len();
        let gt: Vec<f32> = vals.iter().map(|v| v.0).collect();
        let pred: Vec<f32> = vals.iter().map(|v| v.1).collect();
        let r = compute_metrics(&map(1, n, &pred), &map(1, n, &gt), None, None).unwrap();
        prop_assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3);
        prop_assert!(r.rel >= 0.0 && r.sq_rel >= 0.0 && r.rmse >= 0.0 && r.rmse_log >= 0.0 && r.log10 >= 0.0);

        let k = rot % n;
        let rotate = |v: &[f32]| -> Vec<f32> { v[k..].iter().chain(&v[..k]).copied().collect() };
        let p = compute_metrics(&map(1, n, &rotate(&pred)), &map(1, n, &rotate(&gt)), None, None).unwrap();
        prop_assert!((p.rel - r.rel).abs() < 1e-12 && (p.rmse - r.rmse).abs() < 1e-12);
        prop_assert_eq!(p.delta1, r.delta1);

        // powers of two scale f32 values exactly
        let s = if up { 2.0f32 } else { 0.5f32 };
        let sg: Vec<f32> = gt.iter().map(|v| v * s).collect();
        let sp: Vec<f32> = pred.iter().map(|v| v * s).collect();
        let q = compute_metrics(&map(1, n, &sp), &map(1, n, &sg), None, None).unwrap();
        prop_assert!((q.rel - r.rel).abs() < 1e-12);
        prop_assert!((q.rmse - s as f64 * r.rmse).abs() < 1e-9);
        prop_assert!((q.sq_rel - s as f64 * r.sq_rel).abs() < 1e-9);
        prop_assert!((q.rmse_log - r.rmse_log).abs() < 1e-9);
        prop_assert!((q.log10 - r.log10).abs() < 1e-9);
        prop_assert_eq!((q.delta1, q.delta2, q.delta3), (r.delta1, r.delta2, r.delta3));
    }
}
