use std::fs;
use std::sync::Arc;

use anukf::adaptive_q::{AdaptiveQ, ConstantOracle};
use anukf::experiment::{
    run_experiment, run_experiment_with, ExperimentConfig, OutageConfig, TrackSource,
};
use anukf::fusion::FilterKind;
use anukf::simkit::{Segment, TrajectorySpec};
use nalgebra::{DVector, Vector3};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        mc_runs: 4,
        tracks: vec![
            TrackSource::Synthetic(TrajectorySpec::new(
                "a",
                vec![Segment::straight(20.0, 1.5), Segment::turn(20.0, 4.0, 2.0)],
            )),
            TrackSource::Synthetic(TrajectorySpec::new(
                "b",
                vec![Segment::turn(40.0, -2.0, 1.8)],
            )),
        ],
        ..Default::default()
    }
}

fn nominal_pipeline(cfg: &ExperimentConfig) -> AdaptiveQ {
    let f = &cfg.filter;
    AdaptiveQ::new(
        Arc::new(ConstantOracle(Vector3::repeat(f.nominal_accel_std.powi(2)))),
        Arc::new(ConstantOracle(Vector3::repeat(f.nominal_gyro_std.powi(2)))),
        cfg.adaptive.tau,
        cfg.adaptive.bounds,
        DVector::from_element(12, 1e-6),
    )
    .unwrap()
}

#[test]
fn constant_nominal_regressor_reproduces_fixed_noise_filter() {
    let mut cfg = small_config();
    cfg.filters = vec![FilterKind::Ukf, FilterKind::Anukf];
    let report = run_experiment_with(&cfg, Some(nominal_pipeline(&cfg)), None).unwrap();
    for track in ["a", "b"] {
        let u = report.summary(track, FilterKind::Ukf).unwrap().vrmse.0;
        let a = report.summary(track, FilterKind::Anukf).unwrap().vrmse.0;
        assert!((u - a).abs() <= 1e-12 * u, "{track}: {u} vs {a}");
    }
}

#[test]
fn metrics_agree_with_written_error_series() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.filters = vec![FilterKind::Ukf];
    cfg.outage = Some(OutageConfig {
        start: 25.0,
        duration: 5.0,
    });
    let report = run_experiment(&cfg, Some(dir.path())).unwrap();
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    for track in ["a", "b"] {
        let series =
            fs::read_to_string(dir.path().join(format!("errors/{track}_ukf.csv"))).unwrap();
        let mut sum = 0.0;
        let mut n = 0.0;
        for line in series.lines().skip(1) {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            sum += cols[2] * cols[2] + cols[3] * cols[3] + cols[4] * cols[4];
            n += 1.0;
        }
        let recomputed = (sum / n).sqrt();
        let row = metrics
            .lines()
            .find(|l| l.starts_with(&format!("{track},ukf,")))
            .unwrap();
        let written: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
        assert!((recomputed - written).abs() <= 1e-12 * written);
        assert_eq!(
            written,
            report.summary(track, FilterKind::Ukf).unwrap().vrmse.0
        );
    }
    let avg = metrics
        .lines()
        .find(|l| l.starts_with("average,ukf,"))
        .unwrap();
    assert!(avg.contains(",8,0,"));
}

#[test]
fn adding_a_filter_leaves_other_results_unchanged() {
    let mut cfg = small_config();
    cfg.filters = vec![FilterKind::Ukf];
    let alone = run_experiment_with(&cfg, None, None).unwrap();
    cfg.filters = vec![FilterKind::Anekf, FilterKind::Ukf];
    let both = run_experiment_with(&cfg, Some(nominal_pipeline(&cfg)), None).unwrap();
    for track in ["a", "b"] {
        assert_eq!(
            alone.summary(track, FilterKind::Ukf).unwrap().vrmse,
            both.summary(track, FilterKind::Ukf).unwrap().vrmse
        );
    }
}

#[test]
fn adaptive_filters_require_weights() {
    let cfg = small_config();
    assert_eq!(run_experiment(&cfg, None).unwrap_err().kind(), "config");
}
