use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{derive_seed, ExperimentConfig, ExperimentError, SENSOR_STREAM, TRAINING_STREAM};
use crate::processnet::{save_weights, train, ImuWindow, ProcessNetModel, TrainReport, WINDOW};
use crate::simkit::{
    corrupt, write_dvl_csv, write_imu_csv, write_labels_csv, write_truth_csv, CorruptedRun,
};
use crate::strapdown::ImuSample;

type Dataset = Vec<(ImuWindow, [f64; 3])>;

fn windows_of(
    run: &CorruptedRun,
    pick: fn(&ImuSample) -> [f64; 3],
    labels: &[[f64; 3]],
) -> Dataset {
    labels
        .iter()
        .enumerate()
        .filter_map(|(j, label)| {
            let rows: Vec<[f64; 3]> = run.imu[j * WINDOW..(j + 1) * WINDOW]
                .iter()
                .map(pick)
                .collect();
            ImuWindow::from_rows(&rows).ok().map(|w| (w, *label))
        })
        .collect()
}

/// Labeled accelerometer and gyroscope windows from every training track
/// and realization.
pub fn training_windows(config: &ExperimentConfig) -> Result<(Dataset, Dataset), ExperimentError> {
    let mut accel = Vec::new();
    let mut gyro = Vec::new();
    for (ti, source) in config.train_tracks().iter().enumerate() {
        let truth = source.load()?;
        for r in 0..config.training.realizations {
            let seed = derive_seed(config.seed, ti as u64, TRAINING_STREAM, r as u64);
            let run = corrupt(&truth, &config.simulation, seed, WINDOW)?;
            accel.extend(windows_of(
                &run,
                |s| [s.f_b.x, s.f_b.y, s.f_b.z],
                &run.labels.accel,
            ));
            gyro.extend(windows_of(
                &run,
                |s| [s.w_b.x, s.w_b.y, s.w_b.z],
                &run.labels.gyro,
            ));
        }
    }
    Ok((accel, gyro))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub accel_model: ProcessNetModel,
    pub gyro_model: ProcessNetModel,
    pub accel: TrainReport,
    pub gyro: TrainReport,
    pub samples: usize,
    pub seconds: f64,
}

impl TrainSummary {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,accel_loss,gyro_loss\n");
        let _ = writeln!(
            s,
            "0,{},{}",
            self.accel.initial_loss, self.gyro.initial_loss
        );
        for (i, (a, g)) in self
            .accel
            .epoch_losses
            .iter()
            .zip(&self.gyro.epoch_losses)
            .enumerate()
        {
            let _ = writeln!(s, "{},{a},{g}", i + 1);
        }
        s
    }
}

/// Trains both regressors; with `out`, writes `accel.json`, `gyro.json`
/// and `loss.csv` there.
pub fn train_command(
    config: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<TrainSummary, ExperimentError> {
    config.validate()?;
    let started = Instant::now();
    let (accel_data, gyro_data) = training_windows(config)?;
    let tc = &config.training;
    let mut accel_model = ProcessNetModel::accelerometer(tc.accel_seed);
    let mut gyro_model = if tc.unscaled_gyro {
        ProcessNetModel::new(tc.gyro_seed, 1.0, 1.0)
    } else {
        ProcessNetModel::gyroscope(tc.gyro_seed)
    };
    let accel =
        train(&mut accel_model, &accel_data, &tc.optimizer(tc.accel_seed)).map_err(|e| {
            ExperimentError::Training {
                sensor: "accelerometer",
                message: e.to_string(),
            }
        })?;
    let gyro = train(&mut gyro_model, &gyro_data, &tc.optimizer(tc.gyro_seed)).map_err(|e| {
        ExperimentError::Training {
            sensor: "gyroscope",
            message: e.to_string(),
        }
    })?;
    let summary = TrainSummary {
        accel_model,
        gyro_model,
        accel,
        gyro,
        samples: accel_data.len(),
        seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        for (name, model) in [
            ("accel.json", &summary.accel_model),
            ("gyro.json", &summary.gyro_model),
        ] {
            let path = dir.join(name);
            save_weights(model, &path)
                .map_err(|source| ExperimentError::Weights { path, source })?;
        }
        let path = dir.join("loss.csv");
        fs::write(&path, summary.loss_csv()).map_err(|e| ExperimentError::io(&path, e))?;
    }
    Ok(summary)
}

/// Writes each track's clean streams to `<out>/<track>/` and one corrupted
/// realization to `<out>/<track>/corrupted/`. Returns the track directories.
pub fn simulate_command(
    config: &ExperimentConfig,
    out: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    config.validate()?;
    let mut dirs = Vec::new();
    let sets = [
        (config.test_tracks(), SENSOR_STREAM),
        (config.train_tracks(), TRAINING_STREAM),
    ];
    for (sources, stream) in sets {
        for (ti, source) in sources.iter().enumerate() {
            let truth = source.load()?;
            let dir = out.join(&truth.name);
            let noisy = dir.join("corrupted");
            fs::create_dir_all(&noisy).map_err(|e| ExperimentError::io(&noisy, e))?;
            write_imu_csv(&dir.join("imu.csv"), &truth.imu)?;
            write_dvl_csv(&dir.join("dvl.csv"), &truth.dvl)?;
            write_truth_csv(&dir.join("truth.csv"), &truth.states)?;
            let run = corrupt(
                &truth,
                &config.simulation,
                derive_seed(config.seed, ti as u64, stream, 0),
                WINDOW,
            )?;
            write_imu_csv(&noisy.join("imu.csv"), &run.imu)?;
            write_dvl_csv(&noisy.join("dvl.csv"), &run.dvl)?;
            write_truth_csv(&noisy.join("truth.csv"), &truth.states)?;
            write_labels_csv(&noisy.join("labels.csv"), &run.labels)?;
            dirs.push(dir);
        }
    }
    Ok(dirs)
}
