use std::f64::consts::TAU;

use proptest::prelude::*;

use domaug::geom::{DomainTag, Point, Scene};
use domaug::sensor::{
    backproject, build_range_image, downsample_factors, downsample_range_image,
    lidar_distribution_match, RangeImage, SensorSpec,
};

/// One return per lattice cell, at the cell center, with a range unique to
/// the cell.
fn full_scan(spec: &SensorSpec) -> Scene {
    let mut points = Vec::with_capacity(spec.channels * spec.points_per_channel);
    for row in 0..spec.channels {
        let el = spec.vfov_min + (row as f64 + 0.5) * spec.vfov_span() / spec.channels as f64;
        for col in 0..spec.points_per_channel {
            let az = (col as f64 + 0.5) * TAU / spec.points_per_channel as f64;
            let r = 10.0 + 0.001 * (row * spec.points_per_channel + col) as f64;
            points.push(Point::new(
                r * el.cos() * az.cos(),
                r * el.cos() * az.sin(),
                r * el.sin(),
                row as f64,
            ));
        }
    }
    Scene::new(points, vec![], DomainTag::Source)
}

#[test]
fn full_scan_fills_every_cell() {
    let spec = SensorSpec::waymo();
    let img = build_range_image(&full_scan(&spec), &spec);
    assert_eq!(img.occupancy(), spec.channels * spec.points_per_channel);
    assert_eq!((img.height(), img.width()), (64, 2200));
}

#[test]
fn waymo_image_downsamples_to_nuscenes_shape() {
    let spec = SensorSpec::waymo();
    let img = build_range_image(&full_scan(&spec), &spec);
    let f = downsample_factors(&spec, &SensorSpec::nuscenes()).unwrap();
    let down = downsample_range_image(&img, f.vertical, f.horizontal).unwrap();
    assert_eq!((down.height(), down.width()), (16, 1100));
    for r in 0..down.height() {
        for c in 0..down.width() {
            assert_eq!(down.get(r, c), img.get(4 * r, 2 * c), "cell ({r}, {c})");
        }
    }
}

#[test]
fn formula_example_channel_ratio() {
    let src = SensorSpec::from_degrees(64, 1000, -20.0, 10.0).unwrap();
    let tgt = SensorSpec::from_degrees(16, 1000, -20.0, 10.0).unwrap();
    let f = downsample_factors(&src, &tgt).unwrap();
    assert_eq!((f.vertical, f.horizontal), (4, 1));
    assert!((f.raw_vertical - 4.0).abs() < 1e-12);
}

#[test]
fn dense_scan_match_keeps_one_eighth() {
    let (src, tgt) = (SensorSpec::waymo(), SensorSpec::nuscenes());
    let scan = full_scan(&src);
    let out = lidar_distribution_match(&scan, &src, &tgt).unwrap();
    assert_eq!(out.points.len(), scan.points.len() / 8);
    assert_eq!(out.domain, DomainTag::Source);
}

#[test]
fn points_outside_source_vfov_are_cropped() {
    let (src, tgt) = (SensorSpec::waymo(), SensorSpec::nuscenes());
    // 5° up is inside the nuScenes window but above the Waymo one
    let el = 5f64.to_radians();
    let above = Point::new(20.0 * el.cos(), 0.0, 20.0 * el.sin(), 0.0);
    let el = -10f64.to_radians();
    let inside = Point::new(20.0 * el.cos(), 1.0, 20.0 * el.sin(), 0.0);
    let scene = Scene::new(vec![above, inside], vec![], DomainTag::Source);
    let out = lidar_distribution_match(&scene, &src, &tgt).unwrap();
    assert!(out.points.iter().all(|p| p.z < 0.0));
    assert!(out.points.len() <= 1);
}

#[test]
fn identical_specs_only_lose_collisions() {
    let spec = SensorSpec::kitti();
    let mut scene = full_scan(&spec);
    let dup = scene.points[123];
    scene.points.push(Point::new(dup.x * 1.01, dup.y * 1.01, dup.z * 1.01, 0.0));
    let out = lidar_distribution_match(&scene, &spec, &spec).unwrap();
    assert_eq!(out.points.len(), scene.points.len() - 1);
}

fn cells(img: &RangeImage) -> Vec<Option<(u64, u64)>> {
    let mut v = Vec::new();
    for r in 0..img.height() {
        for c in 0..img.width() {
            v.push(img.get(r, c).map(|x| (x.range.to_bits(), x.intensity.to_bits())));
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn strides_compose(a in 1usize..4, b in 1usize..4, c in 1usize..4, d in 1usize..4) {
        let spec = SensorSpec::new(24, 120, -0.4, 0.1).unwrap();
        let img = build_range_image(&full_scan(&spec), &spec);
        let twice = downsample_range_image(&downsample_range_image(&img, a, b).unwrap(), c, d).unwrap();
        let once = downsample_range_image(&img, a * c, b * d).unwrap();
        prop_assert_eq!((twice.height(), twice.width()), (once.height(), once.width()));
        prop_assert_eq!(cells(&twice), cells(&once));
        prop_assert_eq!(backproject(&twice), backproject(&once));
    }

    #[test]
    fn factors_are_at_least_one(
        ch_s in 1usize..128, ch_t in 1usize..128,
        ppc_s in 1usize..4000, ppc_t in 1usize..4000,
        lo_s in -40.0..-1.0f64, hi_s in 0.0..15.0f64,
        lo_t in -40.0..-1.0f64, hi_t in 0.0..15.0f64,
    ) {
        let s = SensorSpec::from_degrees(ch_s, ppc_s, lo_s, hi_s).unwrap();
        let t = SensorSpec::from_degrees(ch_t, ppc_t, lo_t, hi_t).unwrap();
        let f = downsample_factors(&s, &t).unwrap();
        prop_assert!(f.vertical >= 1 && f.horizontal >= 1);
        prop_assert_eq!(f.upsample_required(), f.raw_vertical < 1.0 || f.raw_horizontal < 1.0);
        let expected_v = (hi_t - lo_t) / (hi_s - lo_s) * ch_s as f64 / ch_t as f64;
        prop_assert!((f.raw_vertical - expected_v).abs() < 1e-9 * expected_v.max(1.0));
    }

    #[test]
    fn range_image_never_grows(
        pts in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, -10.0..5.0f64), 0..300),
    ) {
        let spec = SensorSpec::nuscenes();
        let scene = Scene::new(
            pts.iter().map(|&(x, y, z)| Point::new(x, y, z, 0.0)).collect(),
            vec![],
            DomainTag::Source,
        );
        let out = backproject(&build_range_image(&scene, &spec));
        prop_assert!(out.points.len() <= scene.points.len());
    }
}
