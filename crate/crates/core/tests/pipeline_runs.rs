use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use domaug::geom::{DomainTag, Point, Scene};
use domaug::pipeline::{
    run_advmix_stage, run_full, run_targetmix_stage, ClusterOracle, Datasets, PipelineConfig,
};
use domaug::synth::{synthesize_dataset, DatasetSizes, NoiseParams};
use domaug::Error;

fn small_data(seed: u64) -> (PipelineConfig, Datasets) {
    let cfg = PipelineConfig {
        seed,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = DatasetSizes {
        source: 6,
        target_labeled: 3,
        target_unlabeled: 5,
    };
    let data = synthesize_dataset(&mut rng, &cfg, sizes, &NoiseParams::default()).unwrap();
    (cfg, data)
}

fn report_json(cfg: &PipelineConfig, data: &Datasets) -> String {
    let (a, b) = run_full(cfg, data, &ClusterOracle::default()).unwrap();
    serde_json::to_string(&(a, b)).unwrap()
}

#[test]
fn fixed_seed_gives_identical_reports() {
    let (cfg, data) = small_data(61);
    assert_eq!(report_json(&cfg, &data), report_json(&cfg, &data));
    let other = PipelineConfig { seed: 62, ..cfg };
    assert_ne!(report_json(&cfg, &data), report_json(&other, &data));
}

#[test]
fn thread_count_does_not_change_reports() {
    let (cfg, data) = small_data(63);
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| report_json(&cfg, &data))
    };
    assert_eq!(run_with(1), run_with(4));
}

#[test]
fn mixed_fraction_tracks_p_tm_over_a_large_epoch() {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let scene = |rng: &mut ChaCha8Rng, domain| {
        let points = (0..20)
            .map(|_| Point::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), -1.7, 0.1))
            .collect();
        Scene::new(points, vec![], domain)
    };
    let source: Vec<Scene> = (0..1500).map(|_| scene(&mut rng, DomainTag::Source)).collect();
    let labeled: Vec<Scene> = (0..500).map(|_| scene(&mut rng, DomainTag::TargetLabeled)).collect();
    let cfg = PipelineConfig {
        epochs_tm: 1,
        ..Default::default()
    };
    let report = run_targetmix_stage(&cfg, &source, &labeled, &ClusterOracle::default()).unwrap();
    assert_eq!(report.scenes_processed, 2000);
    assert!((report.mixed_fraction - cfg.p_tm).abs() < 0.04, "{}", report.mixed_fraction);
}

#[test]
fn stage_two_without_unlabeled_scenes_has_no_samples() {
    let (cfg, data) = small_data(65);
    let oracle = ClusterOracle::default();
    let report = run_advmix_stage(&cfg, &data.target_labeled, &[], &oracle, &oracle).unwrap();
    assert!(report.epochs.iter().all(|e| e.samples == 0));
    assert_eq!(report.scenes_processed, 0);
}

#[test]
fn wrong_domain_tags_are_rejected() {
    let (cfg, mut data) = small_data(66);
    data.target_labeled[0].domain = DomainTag::Source;
    assert!(matches!(
        run_full(&cfg, &data, &ClusterOracle::default()),
        Err(Error::DomainMismatch { .. })
    ));
}

#[test]
fn stage_two_sees_every_slot_each_epoch() {
    let (cfg, data) = small_data(67);
    let (first, second) = run_full(&cfg, &data, &ClusterOracle::default()).unwrap();
    for e in &first.epochs {
        assert_eq!(e.samples as usize, data.source.len() + data.target_labeled.len());
        assert_eq!(e.nonfinite_samples, 0);
    }
    for e in &second.epochs {
        assert_eq!(e.samples as usize, data.target_labeled.len() + data.target_unlabeled.len());
        assert!((e.mean_total_loss - (e.mean_detection_loss + cfg.lambda * e.mean_consistency_loss)).abs() < 1e-12);
        assert!(e.perturb.max_delta_norm_error < 1e-9);
    }
    assert!(second.pseudo_boxes_kept > 0);
}
