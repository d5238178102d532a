use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, ExperimentConfig, ExperimentError, SENSOR_STREAM};
use crate::adaptive_q::AdaptiveQ;
use crate::fusion::{run_filter, FilterKind, FilterSetup, FilterTrace, ProcessNoise, RunFailure};
use crate::metrics::{mrmse, rms_of, vrmse, MetersPerSecond, Mrmse, Radians, RunErrorSeries};
use crate::model::MEAS_DIM;
use crate::par;
use crate::processnet::{load_weights, WINDOW};
use crate::simkit::{corrupt, draw_initial_error, DvlSample, TruthStream};

/// Marks DVL epochs in `[start, start + duration)` unusable.
pub fn apply_outage(
    dvl: &[DvlSample],
    start: f64,
    duration: f64,
) -> Result<Vec<DvlSample>, ExperimentError> {
    let last = dvl
        .last()
        .ok_or_else(|| ExperimentError::Outage("empty DVL stream".into()))?
        .t;
    const EPS: f64 = 1e-9;
    if !(start >= 0.0 && duration >= 0.0) || start + duration > last + EPS {
        return Err(ExperimentError::Outage(format!(
            "window [{start}, {}) is outside the DVL span ending at {last}",
            start + duration
        )));
    }
    Ok(dvl
        .iter()
        .map(|d| {
            let masked = d.t >= start - EPS && d.t < start + duration - EPS;
            DvlSample {
                valid: d.valid && !masked,
                ..*d
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Result<FilterTrace, RunFailure>,
    pub seconds: f64,
}

/// Aggregates for one (track, filter) pair.
#[derive(Debug, Clone)]
pub struct FilterSummary {
    pub track: String,
    pub filter: FilterKind,
    /// Indices of the successful runs, aligned with `series` and `nees`.
    pub run_index: Vec<usize>,
    pub series: Vec<RunErrorSeries>,
    pub nees: Vec<Vec<f64>>,
    pub epoch_times: Vec<f64>,
    pub vrmse: MetersPerSecond,
    pub mrmse: Mrmse,
    pub clamp_events: usize,
    pub replaced_outputs: usize,
    pub failures: Vec<(usize, RunFailure)>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summaries: Vec<FilterSummary>,
    /// Quadratic mean over tracks per filter: `(filter, vrmse, mrmse)`.
    pub averages: Vec<(FilterKind, MetersPerSecond, Radians)>,
}

impl ExperimentReport {
    pub fn summary(&self, track: &str, filter: FilterKind) -> Option<&FilterSummary> {
        self.summaries
            .iter()
            .find(|s| s.track == track && s.filter == filter)
    }

    pub fn average(&self, filter: FilterKind) -> Option<(MetersPerSecond, Radians)> {
        self.averages
            .iter()
            .find(|a| a.0 == filter)
            .map(|a| (a.1, a.2))
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("track,filter,runs,failed_runs,vrmse,mrmse,mrmse_excluded,clamp_events,replaced_outputs\n");
        for m in &self.summaries {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                m.track,
                m.filter,
                m.series.len(),
                m.failures.len(),
                m.vrmse.0,
                m.mrmse.value.0,
                m.mrmse.excluded,
                m.clamp_events,
                m.replaced_outputs
            );
        }
        for (f, v, r) in &self.averages {
            let runs: usize = self
                .summaries
                .iter()
                .filter(|m| m.filter == *f)
                .map(|m| m.series.len())
                .sum();
            let failed: usize = self
                .summaries
                .iter()
                .filter(|m| m.filter == *f)
                .map(|m| m.failures.len())
                .sum();
            let clamps: usize = self
                .summaries
                .iter()
                .filter(|m| m.filter == *f)
                .map(|m| m.clamp_events)
                .sum();
            let replaced: usize = self
                .summaries
                .iter()
                .filter(|m| m.filter == *f)
                .map(|m| m.replaced_outputs)
                .sum();
            let excluded: usize = self
                .summaries
                .iter()
                .filter(|m| m.filter == *f)
                .map(|m| m.mrmse.excluded)
                .sum();
            let _ = writeln!(
                s,
                "average,{f},{runs},{failed},{},{},{excluded},{clamps},{replaced}",
                v.0, r.0
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("track,filter,seconds\n");
        for m in &self.summaries {
            let _ = writeln!(s, "{},{},{:.6}", m.track, m.filter, m.seconds);
        }
        s
    }

    pub fn failures_csv(&self) -> String {
        let mut s = String::from("track,filter,run,t,reason\n");
        for m in &self.summaries {
            for (run, f) in &m.failures {
                let _ = writeln!(
                    s,
                    "{},{},{run},{},\"{}\"",
                    m.track,
                    m.filter,
                    f.t,
                    f.reason.replace('"', "'")
                );
            }
        }
        s
    }
}

fn series_csv(m: &FilterSummary) -> String {
    let mut s = String::from("run,t,dv_n,dv_e,dv_d,yaw,pitch,roll,flagged,nees\n");
    for ((run, series), nees) in m.run_index.iter().zip(&m.series).zip(&m.nees) {
        for (j, dv) in series.dv.iter().enumerate() {
            let (e, flag) = match series.dpsi[j] {
                Some(e) => (e, 0),
                None => (nalgebra::Vector3::zeros(), 1),
            };
            let _ = writeln!(
                s,
                "{run},{},{},{},{},{},{},{},{flag},{}",
                m.epoch_times[j], dv.x, dv.y, dv.z, e[0], e[1], e[2], nees[j]
            );
        }
    }
    s
}

fn plot_csv(m: &FilterSummary) -> String {
    let mut s = String::from("t,mean_dv_norm,std_dv_norm\n");
    let n = m.series.len() as f64;
    for (j, t) in m.epoch_times.iter().enumerate() {
        let norms: Vec<f64> = m.series.iter().map(|r| r.dv[j].norm()).collect();
        let mean = norms.iter().sum::<f64>() / n;
        let var = norms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let _ = writeln!(s, "{t},{mean},{}", var.sqrt());
    }
    s
}

fn write(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

/// Writes metrics, timing, failures and the optional series files.
pub fn write_report(
    report: &ExperimentReport,
    config: &ExperimentConfig,
    out: &Path,
) -> Result<(), ExperimentError> {
    fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    write(&out.join("metrics.csv"), &report.metrics_csv())?;
    write(&out.join("timing.csv"), &report.timing_csv())?;
    write(&out.join("failures.csv"), &report.failures_csv())?;
    for (flag, dir, render) in [
        (
            config.output.error_series,
            "errors",
            series_csv as fn(&FilterSummary) -> String,
        ),
        (config.output.plot_series, "plots", plot_csv),
    ] {
        if !flag {
            continue;
        }
        let d = out.join(dir);
        fs::create_dir_all(&d).map_err(|e| ExperimentError::io(&d, e))?;
        for m in report.summaries.iter().filter(|m| !m.series.is_empty()) {
            write(&d.join(format!("{}_{}.csv", m.track, m.filter)), &render(m))?;
        }
    }
    Ok(())
}

fn static_qstar(config: &ExperimentConfig) -> Result<DVector<f64>, ExperimentError> {
    let f = &config.filter;
    config
        .adaptive
        .tau
        .static_noise(f.nominal_accel_std.powi(2), f.nominal_gyro_std.powi(2), 1.0)
        .map(|s| s.qstar(1.0))
        .map_err(|e| ExperimentError::Config(e.to_string()))
}

/// Loads both regressors named in the config into an adaptive pipeline.
pub fn load_adaptive(config: &ExperimentConfig) -> Result<AdaptiveQ, ExperimentError> {
    let path_of = |p: &Option<std::path::PathBuf>, which: &str| {
        p.clone().ok_or_else(|| {
            ExperimentError::Config(format!("adaptive filters need adaptive.{which}_weights"))
        })
    };
    let load = |p: std::path::PathBuf| {
        load_weights(&p).map_err(|source| ExperimentError::Weights { path: p, source })
    };
    let accel = load(path_of(&config.adaptive.accel_weights, "accel")?)?;
    let gyro = load(path_of(&config.adaptive.gyro_weights, "gyro")?)?;
    AdaptiveQ::new(
        Arc::new(accel),
        Arc::new(gyro),
        config.adaptive.tau,
        config.adaptive.bounds,
        static_qstar(config)?,
    )
    .map_err(|e| ExperimentError::Config(e.to_string()))
}

/// Loads weights from the config paths when an adaptive filter is listed,
/// then runs every (track, run, filter) combination.
pub fn run_experiment(
    config: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let adaptive = if config.filters.iter().any(|f| f.is_adaptive()) {
        Some(load_adaptive(config)?)
    } else {
        None
    };
    run_experiment_with(config, adaptive, out)
}

/// Like [`run_experiment`] with an explicit adaptive pipeline.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    adaptive: Option<AdaptiveQ>,
    out: Option<&Path>,
) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let sources = config.test_tracks();
    let truths: Vec<TruthStream> = sources.iter().map(|s| s.load()).collect::<Result<_, _>>()?;
    let qstar = static_qstar(config)?;
    let ut = config.ut_params()?;
    let r = DMatrix::identity(MEAS_DIM, MEAS_DIM) * config.filter.dvl_noise_std.powi(2);
    let initial_cov = DMatrix::from_diagonal(&DVector::from_row_slice(
        &config.simulation.initial_covariance_diag(),
    ));

    let setups: Vec<FilterSetup> = config
        .filters
        .iter()
        .map(|&kind| {
            let noise = if kind.is_adaptive() {
                let pipe = adaptive.clone().ok_or_else(|| {
                    ExperimentError::Config(format!("{kind} needs trained regressors"))
                })?;
                ProcessNoise::Adaptive(pipe)
            } else {
                ProcessNoise::Static(qstar.clone())
            };
            Ok(FilterSetup {
                kind,
                ut,
                r: r.clone(),
                noise,
                initial_cov: initial_cov.clone(),
                q_placement: config.filter.q_placement,
            })
        })
        .collect::<Result<_, ExperimentError>>()?;

    let mut dvl_streams = Vec::with_capacity(truths.len());
    for t in &truths {
        dvl_streams.push(match &config.outage {
            Some(o) => apply_outage(&t.dvl, o.start, o.duration)?,
            None => t.dvl.clone(),
        });
    }

    let tasks: Vec<(usize, usize)> = (0..truths.len())
        .flat_map(|t| (0..config.mc_runs).map(move |r| (t, r)))
        .collect();
    let results = par::map_ordered(
        &tasks,
        |&(ti, run)| -> Result<Vec<RunOutcome>, ExperimentError> {
            let truth = &truths[ti];
            let seed = derive_seed(config.seed, ti as u64, SENSOR_STREAM, run as u64);
            let corrupted = corrupt(truth, &config.simulation, seed, WINDOW)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed,
                ti as u64,
                SENSOR_STREAM + 1,
                run as u64,
            ));
            let init = draw_initial_error(&config.simulation, &mut rng);
            // Outage masks apply on top of the corrupted readings.
            let dvl: Vec<DvlSample> = corrupted
                .dvl
                .iter()
                .zip(&dvl_streams[ti])
                .map(|(c, m)| DvlSample {
                    valid: m.valid,
                    ..*c
                })
                .collect();
            Ok(setups
                .iter()
                .map(|setup| {
                    let started = Instant::now();
                    let trace = run_filter(setup, truth, &corrupted, &dvl, &init);
                    RunOutcome {
                        trace,
                        seconds: started.elapsed().as_secs_f64(),
                    }
                })
                .collect())
        },
    );
    let results: Vec<Vec<RunOutcome>> = results.into_iter().collect::<Result<_, _>>()?;

    let mut summaries = Vec::new();
    for (ti, truth) in truths.iter().enumerate() {
        for (fi, &filter) in config.filters.iter().enumerate() {
            let mut s = FilterSummary {
                track: truth.name.clone(),
                filter,
                run_index: Vec::new(),
                series: Vec::new(),
                nees: Vec::new(),
                epoch_times: Vec::new(),
                vrmse: MetersPerSecond(f64::NAN),
                mrmse: Mrmse {
                    value: Radians(f64::NAN),
                    excluded: 0,
                },
                clamp_events: 0,
                replaced_outputs: 0,
                failures: Vec::new(),
                seconds: 0.0,
            };
            for run in 0..config.mc_runs {
                let outcome = &results[ti * config.mc_runs + run][fi];
                s.seconds += outcome.seconds;
                match &outcome.trace {
                    Ok(trace) => {
                        if s.epoch_times.is_empty() {
                            s.epoch_times = trace.epochs.iter().map(|e| e.t).collect();
                        }
                        s.run_index.push(run);
                        s.series.push(RunErrorSeries {
                            dv: trace.epochs.iter().map(|e| e.dv).collect(),
                            dpsi: trace.epochs.iter().map(|e| e.dpsi).collect(),
                        });
                        s.nees.push(trace.epochs.iter().map(|e| e.nees).collect());
                        s.clamp_events += trace.clamp.clamp_events;
                        s.replaced_outputs += trace.clamp.replaced_non_finite;
                    }
                    Err(f) => s.failures.push((run, f.clone())),
                }
            }
            if !s.series.is_empty() {
                s.vrmse = vrmse(&s.series).map_err(|e| ExperimentError::Config(e.to_string()))?;
                if let Ok(m) = mrmse(&s.series) {
                    s.mrmse = m;
                }
            }
            summaries.push(s);
        }
    }

    let averages = config
        .filters
        .iter()
        .map(|&f| {
            let rows: Vec<&FilterSummary> = summaries.iter().filter(|s| s.filter == f).collect();
            let v: Vec<f64> = rows.iter().map(|s| s.vrmse.0).collect();
            let m: Vec<f64> = rows.iter().map(|s| s.mrmse.value.0).collect();
            (
                f,
                MetersPerSecond(rms_of(&v).unwrap_or(f64::NAN)),
                Radians(rms_of(&m).unwrap_or(f64::NAN)),
            )
        })
        .collect();
    let report = ExperimentReport {
        summaries,
        averages,
    };
    if let Some(dir) = out {
        write_report(&report, config, dir)?;
    }
    Ok(report)
}
