use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use domaug::adv::{
    adversarial_perturb, batch_consistency, consistency_loss, point_delta, surrogate_loss,
    PerturbationConfig, SurrogateLoss,
};
use domaug::geom::{Box3D, DomainTag, Point, Scene};
use domaug::gradcheck::{numeric_gradient, random_fixture, relative_error, run_gradcheck};

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[test]
fn single_point_quadratic_branch_by_hand() {
    let b = Box3D::new([3.0, 4.0, 0.0], [2.0, 4.0, 2.0], 0.7, 0);
    let d = 0.6;
    let (s, c) = b.yaw.sin_cos();
    let p = Point::new(b.cx + c * d, b.cy + s * d, b.cz, 0.0);
    let scene = Scene::new(vec![p], vec![b], DomainTag::TargetUnlabeled);
    let (loss, grad) = surrogate_loss(&scene, &[b]).unwrap();
    assert!((loss - d * d / 2.0).abs() < 1e-12);
    assert!((norm(grad.grads[0]) - d).abs() < 1e-12);
}

#[test]
fn library_gradcheck_agrees_with_its_own_fixture_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    assert!(run_gradcheck(&mut rng, 20, 1e-5, 1.0).unwrap() < 1e-5);
    // a different knee moves fixtures across both branches
    assert!(run_gradcheck(&mut rng, 20, 1e-5, 0.3).unwrap() < 1e-5);
}

#[test]
fn numeric_gradient_detects_a_wrong_provider() {
    struct Doubled(SurrogateLoss);
    impl domaug::adv::GradientProvider for Doubled {
        fn loss_and_gradient(
            &self,
            scene: &Scene,
            boxes: &[Box3D],
        ) -> domaug::Result<(f64, domaug::adv::GradientField)> {
            let (l, mut g) = self.0.loss_and_gradient(scene, boxes)?;
            for v in &mut g.grads {
                v[0] *= 2.0;
            }
            Ok((l, g))
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (scene, boxes) = random_fixture(&mut rng, 1.0);
    let wrong = Doubled(SurrogateLoss::default());
    use domaug::adv::GradientProvider;
    let (_, analytic) = wrong.loss_and_gradient(&scene, &boxes).unwrap();
    let numeric = numeric_gradient(&wrong, &scene, &boxes, 1e-5).unwrap();
    assert!(relative_error(&analytic, &numeric) > 1e-2);
}

#[test]
fn translate_only_keeps_count_and_moves_by_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let cfg = PerturbationConfig {
        rho: 1.0,
        mode_weights: [1.0, 0.0, 0.0],
        ..Default::default()
    };
    for _ in 0..50 {
        let (scene, boxes) = random_fixture(&mut rng, 1.0);
        let (out, stats) = adversarial_perturb(&scene, &boxes, &SurrogateLoss::default(), &cfg, &mut rng).unwrap();
        assert_eq!(out.points.len(), scene.points.len());
        assert_eq!(stats.translated + stats.zero_gradient, stats.candidates);
        for (a, b) in scene.points.iter().zip(&out.points) {
            let d = norm([b.x - a.x, b.y - a.y, b.z - a.z]);
            assert!(d == 0.0 || (d - cfg.epsilon).abs() < 1e-9);
        }
    }
}

#[test]
fn remove_only_drops_selected_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let cfg = PerturbationConfig {
        rho: 1.0,
        mode_weights: [0.0, 0.0, 1.0],
        ..Default::default()
    };
    let (scene, boxes) = random_fixture(&mut rng, 1.0);
    let (out, stats) = adversarial_perturb(&scene, &boxes, &SurrogateLoss::default(), &cfg, &mut rng).unwrap();
    assert_eq!(stats.removed, stats.candidates);
    assert_eq!(out.points.len() as u64, stats.total_points - stats.candidates);
    assert!(out.points.iter().all(|p| boxes.iter().all(|b| !b.contains(p.xyz()))));
}

#[test]
fn add_only_appends_copies() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let cfg = PerturbationConfig {
        rho: 1.0,
        mode_weights: [0.0, 1.0, 0.0],
        ..Default::default()
    };
    let (scene, boxes) = random_fixture(&mut rng, 1.0);
    let (out, stats) = adversarial_perturb(&scene, &boxes, &SurrogateLoss::default(), &cfg, &mut rng).unwrap();
    let n = scene.points.len();
    assert_eq!(&out.points[..n], &scene.points[..]);
    assert_eq!(out.points.len() - n, stats.added as usize);
}

#[test]
fn mode_frequencies_follow_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let cfg = PerturbationConfig {
        rho: 1.0,
        mode_weights: [0.5, 0.3, 0.2],
        ..Default::default()
    };
    let (mut t, mut a, mut r) = (0u64, 0u64, 0u64);
    for _ in 0..100 {
        let (scene, boxes) = random_fixture(&mut rng, 1.0);
        let (_, s) = adversarial_perturb(&scene, &boxes, &SurrogateLoss::default(), &cfg, &mut rng).unwrap();
        t += s.translated + s.zero_gradient;
        a += s.added;
        r += s.removed;
    }
    let total = (t + a + r) as f64;
    assert!((t as f64 / total - 0.5).abs() < 0.03);
    assert!((a as f64 / total - 0.3).abs() < 0.03);
    assert!((r as f64 / total - 0.2).abs() < 0.03);
}

#[test]
fn batch_skips_one_sided_samples() {
    let a = vec![Box3D::new([0.0; 3], [1.0, 1.0, 1.0], 0.0, 0)];
    let b = vec![Box3D::new([2.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0, 0)];
    let v = batch_consistency(&[(a.clone(), b.clone()), (a.clone(), vec![]), (vec![], vec![])]);
    // defined samples: 2.0 and 0.0
    assert!((v - 1.0).abs() < 1e-15);
    assert_eq!(batch_consistency(&[(a, vec![])]), 0.0);
}

prop_compose! {
    fn arb_boxes(max: usize)(
        raw in prop::collection::vec(
            (-40.0..40.0f64, -40.0..40.0f64, -2.0..1.0f64, 0.5..3.0f64, 0.5..6.0f64, 0.5..3.0f64, -PI..PI),
            1..max,
        )
    ) -> Vec<Box3D> {
        raw.into_iter().map(|(x, y, z, w, l, h, yaw)| Box3D::new([x, y, z], [w, l, h], yaw, 0)).collect()
    }
}

proptest! {
    #[test]
    fn delta_norm_is_epsilon(
        g in (-1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64),
        mag in -300i32..300,
        eps in 1e-6..1.0f64,
    ) {
        let s = 10f64.powi(mag);
        let grad = [g.0 * s, g.1 * s, g.2 * s];
        prop_assume!(grad.iter().all(|v| v.is_finite()) && grad.iter().any(|&v| v != 0.0));
        let d = point_delta(grad, eps);
        prop_assert!((norm(d) - eps).abs() < 1e-9 * eps.max(1.0));
        let dot = d[0] * grad[0] + d[1] * grad[1] + d[2] * grad[2];
        prop_assert!(dot < 0.0);
    }

    #[test]
    fn consistency_is_symmetric_and_nonnegative(a in arb_boxes(8), b in arb_boxes(8)) {
        let ab = consistency_loss(&a, &b).unwrap();
        let ba = consistency_loss(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert_eq!(consistency_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn outside_points_never_move(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scene, boxes) = random_fixture(&mut rng, 1.0);
        let cfg = PerturbationConfig { rho: rng.random_range(0.0..=1.0), ..Default::default() };
        let (out, _) = adversarial_perturb(&scene, &boxes, &SurrogateLoss::default(), &cfg, &mut rng).unwrap();
        for p in scene.points.iter().filter(|p| boxes.iter().all(|b| !b.contains(p.xyz()))) {
            prop_assert!(out.points.contains(p));
        }
        prop_assert_eq!(out.boxes, boxes);
    }
}
