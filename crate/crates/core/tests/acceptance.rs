//! Acceptance suite. Runs every criterion in order and prints one PASS/FAIL
//! line each. Set `ANUKF_ACCEPTANCE_STRICT=1` to exit nonzero on any FAIL.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anukf::ekf::EkfSession;
use anukf::experiment::{
    load_adaptive, run_experiment, train_command, ExperimentConfig, OutageConfig, TrainSummary,
};
use anukf::fusion::FilterKind;
use anukf::metrics::{mrmse, track_average, vrmse, MetersPerSecond, RunErrorSeries};
use anukf::model::QPlacement;
use anukf::par::with_threads;
use anukf::processnet::{ImuWindow, ProcessNetModel, WINDOW};
use anukf::simkit::{
    corrupt, default_tracks, generate_truth, CorruptionSpec, FactorSchedule, ScheduleSpec,
};
use anukf::ukf::{
    compute_weights, generate_sigma_points, CovWeightForm, GaussianState, UnscentedFilter, UtParams,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(budget_s: f64, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let o = f();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        o.pass && secs < budget_s,
        format!("{}; {secs:.2} s (budget {budget_s:.0} s)", o.detail),
    )
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, n, n);
    (&a * a.transpose()) / n as f64 + DMatrix::identity(n, n) * floor
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn linear_oracle() -> Outcome {
    let n = 12;
    let m = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = gaussian_matrix(&mut rng, n, n);
    let radius = a
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    let a = a * (0.98 / radius);
    let h = gaussian_matrix(&mut rng, m, n);
    let q = random_spd(&mut rng, n, 0.01) * 0.1;
    let r = random_spd(&mut rng, m, 0.05) * 0.2;
    let p0 = random_spd(&mut rng, n, 0.1);
    let x0 = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let prior = GaussianState::new(x0.clone(), p0.clone()).unwrap();
    let mut ukf = UnscentedFilter::new(prior.clone(), UtParams::standard(n)).unwrap();
    let mut ekf = EkfSession::new(prior).unwrap();
    let (mut x, mut p) = (x0, p0);
    let mut truth = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (mut state_err, mut cov_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        truth = &a * truth
            + q.clone().cholesky().unwrap().l()
                * DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = &h * &truth
            + r.clone().cholesky().unwrap().l()
                * DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        // Textbook predict/update.
        x = &a * x;
        p = &a * p * a.transpose() + &q;
        let s = &h * &p * h.transpose() + &r;
        let k = &p * h.transpose() * s.try_inverse().unwrap();
        x = &x + &k * (&z - &h * &x);
        p = (DMatrix::identity(n, n) - &k * &h) * p;
        p = (&p + p.transpose()) * 0.5;

        ukf.predict(|v| &a * v, &q).unwrap();
        ukf.update(|v| &h * v, &r, &z).unwrap();
        ekf.predict(&a, &q).unwrap();
        ekf.update(&h, &r, &z).unwrap();
        for est in [ukf.state(), ekf.state()] {
            state_err = state_err.max((&est.mean - &x).amax());
            cov_err = cov_err.max(rel(&est.cov, &p));
        }
    }
    outcome(
        state_err <= 1e-7 && cov_err <= 1e-7,
        format!("max state error {state_err:.2e}, max covariance error {cov_err:.2e} relative"),
    )
}

fn ut_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut wsum, mut mean_err, mut cov_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let alpha = 10f64.powf(rng.random_range(-3.0..0.0));
        let beta = rng.random_range(0.0..3.0);
        let kappa = rng.random_range(0.0..3.0);
        let form = if rng.random_bool(0.5) {
            CovWeightForm::AsPrinted
        } else {
            CovWeightForm::Canonical
        };
        let params = UtParams::new(n, alpha, beta, kappa)
            .unwrap()
            .with_form(form);
        let w = compute_weights(&params).unwrap();
        wsum = wsum.max((w.wm.sum() - 1.0).abs());
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let cov = random_spd(&mut rng, n, 0.05);
        let state = GaussianState::new(mean.clone(), cov.clone()).unwrap();
        let back = generate_sigma_points(&state, &params)
            .unwrap()
            .reconstruct(&w);
        mean_err = mean_err.max((&back.mean - &mean).norm() / mean.norm().max(1.0));
        cov_err = cov_err.max(rel(&back.cov, &cov));
    }
    outcome(
        wsum <= 1e-9 && mean_err <= 1e-8 && cov_err <= 1e-8,
        format!(
            "weight sum error {wsum:.2e}, mean {mean_err:.2e}, covariance {cov_err:.2e} relative"
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = common::GradProbe {
        tensor: "",
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut count = 0;
    let mut tensors = std::collections::BTreeSet::new();
    for model_seed in 0..20 {
        let model = common::random_model(1000 + model_seed);
        let window = common::random_window(&mut rng, 1.0);
        let upstream = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        for p in common::gradient_probes(&model, &window, upstream, 8, model_seed) {
            count += 1;
            tensors.insert(p.tensor);
            if p.relative_error() > worst.relative_error() || worst.tensor.is_empty() {
                worst = p;
            }
        }
    }
    outcome(
        worst.relative_error() <= 1e-4 && tensors.len() == 10,
        format!(
            "{count} probes over {} tensors, worst {:.2e} relative ({}[{}])",
            tensors.len(),
            worst.relative_error(),
            worst.tensor,
            worst.index
        ),
    )
}

fn shape_chain() -> Outcome {
    let model = ProcessNetModel::accelerometer(1);
    let acts = model.forward_cached(&ImuWindow::zeros()).unwrap();
    let got = acts.shape_trace();
    let want = vec![
        (100, 3),
        (100, 30),
        (100, 30),
        (50, 30),
        (50, 30),
        (50, 30),
        (25, 30),
        (750, 1),
        (3, 1),
    ];
    outcome(got == want, format!("{got:?}"))
}

fn training(summary: &TrainSummary, config: &ExperimentConfig) -> Outcome {
    let ratio_a = summary.accel.final_loss() / summary.accel.initial_loss;
    let ratio_g = summary.gyro.final_loss() / summary.gyro.initial_loss;
    let mut short = config.clone();
    short.training.epochs = 3;
    let a = train_command(&short, None).unwrap();
    let b = with_threads(Some(1), || train_command(&short, None).unwrap()).unwrap();
    let same = a.accel.epoch_losses == b.accel.epoch_losses
        && a.gyro.epoch_losses == b.gyro.epoch_losses
        && a.accel_model.params == b.accel_model.params
        && a.gyro_model.params == b.gyro_model.params;
    outcome(
        ratio_a < 0.1 && ratio_g < 0.1 && same,
        format!(
            "{} epochs on {} windows: accel final/initial {ratio_a:.2e}, gyro {ratio_g:.2e}; repeat runs bit-identical: {same}; training took {:.1} s",
            summary.accel.epoch_losses.len(),
            summary.samples,
            summary.seconds
        ),
    )
}

fn regime_ratio(model: &ProcessNetModel, gyro: bool) -> (f64, f64) {
    let (_, tests) = default_tracks();
    let mut spec = CorruptionSpec::default();
    let times: Vec<f64> = (0..8).map(|i| i as f64 * 30.0).collect();
    let factors: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { 6.0 }).collect();
    spec.schedule = ScheduleSpec::Fixed(FactorSchedule::steps(times, factors));
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for (ti, track) in tests.iter().enumerate() {
        let truth = generate_truth(track).unwrap();
        let run = corrupt(&truth, &spec, 500 + ti as u64, WINDOW).unwrap();
        for (j, t) in run.labels.t.iter().enumerate() {
            let rows: Vec<[f64; 3]> = run.imu[j * WINDOW..(j + 1) * WINDOW]
                .iter()
                .map(|s| if gyro { s.w_b.into() } else { s.f_b.into() })
                .collect();
            let y = model
                .forward(&ImuWindow::from_rows(&rows).unwrap())
                .unwrap();
            let mean = y.iter().sum::<f64>() / 3.0;
            if run.schedule.at(*t) > 3.0 {
                hi.push(mean);
            } else {
                lo.push(mean);
            }
        }
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (avg(&lo), avg(&hi))
}

fn regime_detection(summary: &TrainSummary) -> Outcome {
    let (lo, hi) = regime_ratio(&summary.accel_model, false);
    let (glo, ghi) = regime_ratio(&summary.gyro_model, true);
    let ratio = hi / lo;
    outcome(
        ratio >= 3.0,
        format!(
            "accelerometer mean prediction high/low {ratio:.2} ({hi:.3e} / {lo:.3e}); gyroscope {:.2} (not separated)",
            ghi / glo
        ),
    )
}

fn adaptive_config(base: &ExperimentConfig, weights: &Path) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.adaptive.accel_weights = Some(weights.join("accel.json"));
    cfg.adaptive.gyro_weights = Some(weights.join("gyro.json"));
    cfg.output.error_series = false;
    cfg.output.plot_series = false;
    cfg
}

fn table_one(cfg: &ExperimentConfig) -> Outcome {
    let report = run_experiment(cfg, None).unwrap();
    let v = |f| report.average(f).unwrap().0 .0;
    let (ukf, anekf, anukf) = (
        v(FilterKind::Ukf),
        v(FilterKind::Anekf),
        v(FilterKind::Anukf),
    );
    let improvement = (ukf - anukf) / ukf;
    let failures: usize = report.summaries.iter().map(|s| s.failures.len()).sum();
    outcome(
        anukf < ukf && improvement >= 0.05 && anukf <= 1.05 * anekf && failures == 0,
        format!(
            "VRMSE ukf {ukf:.5}, anekf {anekf:.5}, anukf {anukf:.5} m/s; improvement over ukf {:.1}%; anukf/anekf {:.4}",
            improvement * 100.0,
            anukf / anekf
        ),
    )
}

fn table_two(cfg: &ExperimentConfig) -> Outcome {
    let mut cfg = cfg.clone();
    let outage = OutageConfig::default();
    cfg.outage = Some(outage);
    let report = run_experiment(&cfg, None).unwrap();
    let v = |f| report.average(f).unwrap().0 .0;
    let (anekf, anukf) = (v(FilterKind::Anekf), v(FilterKind::Anukf));
    let mut monotone = true;
    for s in report
        .summaries
        .iter()
        .filter(|s| s.filter != FilterKind::Ukf)
    {
        let idx: Vec<usize> = (0..s.epoch_times.len())
            .filter(|&j| {
                s.epoch_times[j] >= outage.start - 1.0 - 1e-9
                    && s.epoch_times[j] < outage.start + outage.duration - 1e-9
            })
            .collect();
        let rms: Vec<f64> = idx
            .iter()
            .map(|&j| {
                (s.series.iter().map(|r| r.dv[j].norm_squared()).sum::<f64>()
                    / s.series.len() as f64)
                    .sqrt()
            })
            .collect();
        monotone &= rms.windows(2).all(|w| w[1] >= w[0]);
    }
    outcome(
        anukf < anekf && monotone,
        format!(
            "VRMSE with outage anekf {anekf:.7}, anukf {anukf:.7} m/s (difference {:.1e}); outage error growth nondecreasing: {monotone}",
            anekf - anukf
        ),
    )
}

/// Fraction of post-convergence epochs whose 20-run average NEES lies in
/// the two-sided 95% band, per track.
fn nees_band(placement: QPlacement) -> (Vec<(String, f64)>, f64, f64, bool) {
    let mut cfg = ExperimentConfig {
        filters: vec![FilterKind::Ukf],
        simulation: CorruptionSpec::static_noise(),
        ..Default::default()
    };
    cfg.filter.q_placement = placement;
    let report = run_experiment(&cfg, None).unwrap();
    let runs = cfg.mc_runs as f64;
    let chi = ChiSquared::new(12.0 * runs).unwrap();
    let (lo, hi) = (chi.inverse_cdf(0.025) / runs, chi.inverse_cdf(0.975) / runs);
    let mut fractions = Vec::new();
    let mut clean = true;
    for s in &report.summaries {
        clean &= s.failures.is_empty();
        let epochs: Vec<usize> = (0..s.epoch_times.len())
            .filter(|&j| s.epoch_times[j] >= 30.0)
            .collect();
        let inside = epochs
            .iter()
            .filter(|&&j| {
                let avg = s.nees.iter().map(|r| r[j]).sum::<f64>() / s.nees.len() as f64;
                avg >= lo && avg <= hi
            })
            .count();
        fractions.push((s.track.clone(), inside as f64 / epochs.len() as f64));
    }
    (fractions, lo, hi, clean)
}

fn consistency() -> Outcome {
    let show = |f: &[(String, f64)]| {
        f.iter()
            .map(|(t, x)| format!("{t} {:.1}%", x * 100.0))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let (fractions, lo, hi, clean) = nees_band(QPlacement::Endpoint);
    let (trap, _, _, _) = nees_band(QPlacement::Trapezoidal);
    outcome(
        clean && fractions.iter().all(|(_, f)| *f >= 0.9),
        format!(
            "average NEES inside [{lo:.2}, {hi:.2}] after 30 s: {}; with trapezoidal Q placement: {}",
            show(&fractions),
            show(&trap)
        ),
    )
}

fn metric_fixtures() -> Outcome {
    let series = |norms: &[f64]| RunErrorSeries {
        dv: norms.iter().map(|n| Vector3::new(0.0, *n, 0.0)).collect(),
        dpsi: norms
            .iter()
            .map(|n| Some(Vector3::new(0.0, 0.0, *n)))
            .collect(),
    };
    let checks = [
        (vrmse(&[series(&[3.0, 4.0])]).unwrap().0, 12.5f64.sqrt()),
        (vrmse(&[series(&[0.0; 5])]).unwrap().0, 0.0),
        (
            vrmse(&[series(&[1.0, 2.0]), series(&[2.0, 4.0])])
                .unwrap()
                .0,
            (25.0f64 / 4.0).sqrt(),
        ),
        (
            mrmse(&[series(&[3.0, 4.0])]).unwrap().value.0,
            12.5f64.sqrt(),
        ),
        (
            track_average(MetersPerSecond(3.0), MetersPerSecond(4.0))
                .unwrap()
                .0,
            12.5f64.sqrt(),
        ),
        (
            track_average(MetersPerSecond(0.37), MetersPerSecond(0.37))
                .unwrap()
                .0,
            0.37,
        ),
    ];
    let worst = checks
        .iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let rounded = (checks[0].0 - 3.5355).abs() < 5e-5;
    outcome(
        worst <= 1e-12 && rounded,
        format!(
            "worst fixture error {worst:.1e}; {{3,4}} -> {:.4}",
            checks[0].0
        ),
    )
}

fn determinism(cfg: &ExperimentConfig, scratch: &Path) -> Outcome {
    let mut cfg = cfg.clone();
    cfg.mc_runs = 6;
    cfg.outage = Some(OutageConfig::default());
    let (a, b) = (scratch.join("det-1"), scratch.join("det-3"));
    with_threads(Some(1), || run_experiment(&cfg, Some(&a)).unwrap()).unwrap();
    with_threads(Some(3), || run_experiment(&cfg, Some(&b)).unwrap()).unwrap();
    let (x, y) = (
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap(),
    );
    outcome(
        x == y && !x.is_empty(),
        format!(
            "metrics.csv with 1 and 3 worker threads: {} bytes, identical: {}",
            x.len(),
            x == y
        ),
    )
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().unwrap();
    let base = ExperimentConfig::default();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!(
            "CRITERION {id:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o));
    };

    report(1, "linear oracle", timed(5.0, linear_oracle));
    report(
        2,
        "unscented transform identities",
        timed(10.0, ut_identities),
    );
    report(3, "regressor gradient check", timed(60.0, gradient_check));
    report(4, "regressor shape chain", timed(1.0, shape_chain));

    let started = Instant::now();
    let summary = train_command(&base, Some(scratch.path())).unwrap();
    let train_secs = started.elapsed().as_secs_f64();
    let o = timed(600.0 - train_secs, || training(&summary, &base));
    report(5, "training progress", o);
    report(
        6,
        "regime detection",
        timed(120.0, || regime_detection(&summary)),
    );

    let cfg = adaptive_config(&base, scratch.path());
    assert!(load_adaptive(&cfg).is_ok());
    report(7, "monte carlo ordering", timed(900.0, || table_one(&cfg)));
    report(8, "dvl outage robustness", timed(900.0, || table_two(&cfg)));
    report(9, "filter consistency", timed(600.0, consistency));
    report(10, "metric fixtures", timed(1.0, metric_fixtures));
    report(
        11,
        "end-to-end determinism",
        timed(900.0, || determinism(&cfg, scratch.path())),
    );

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "{} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
    }
    // A FAIL line is a reported result; only strict mode turns it into a
    // failing test.
    if failed.is_empty() || std::env::var_os("ANUKF_ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
