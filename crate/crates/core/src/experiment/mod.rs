//! Experiment configuration and the simulate / train / run drivers.

mod run;
mod train;

pub use run::{
    apply_outage, load_adaptive, run_experiment, run_experiment_with, write_report,
    ExperimentReport, FilterSummary, RunOutcome,
};
pub use train::{simulate_command, train_command, training_windows, TrainSummary};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive_q::{ClampBounds, TauFactors};
use crate::fusion::FilterKind;
use crate::model::QPlacement;
use crate::processnet::{TrainConfig, WeightError};
use crate::simkit::{
    default_tracks, generate_truth, ingest_csv, CorruptionSpec, IngestError, SimError,
    TrajectorySpec, TruthStream,
};
use crate::ukf::{CovWeightForm, UtParams};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("weights {path}: {source}")]
    Weights {
        path: PathBuf,
        #[source]
        source: WeightError,
    },
    #[error("training the {sensor} network: {message}")]
    Training {
        sensor: &'static str,
        message: String,
    },
    #[error("outage: {0}")]
    Outage(String),
}

impl ExperimentError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "config",
            ExperimentError::Io { .. } => "io",
            ExperimentError::Ingest(_) => "ingest",
            ExperimentError::Simulation(_) => "simulation",
            ExperimentError::Weights { .. } => "weights",
            ExperimentError::Training { .. } => "training",
            ExperimentError::Outage(_) => "outage",
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// A recorded track directory holding `imu.csv`, `dvl.csv` and `truth.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvTrack {
    pub name: String,
    pub csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackSource {
    Csv(CsvTrack),
    Synthetic(TrajectorySpec),
}

impl TrackSource {
    pub fn name(&self) -> &str {
        match self {
            TrackSource::Csv(c) => &c.name,
            TrackSource::Synthetic(s) => &s.name,
        }
    }

    pub fn load(&self) -> Result<TruthStream, ExperimentError> {
        match self {
            TrackSource::Synthetic(spec) => Ok(generate_truth(spec)?),
            TrackSource::Csv(c) => Ok(ingest_csv(&c.csv)?.into_truth_stream(&c.name)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub cov_weights: CovWeightForm,
    pub dvl_noise_std: f64,
    /// Sensor noise STDs assumed by the fixed-noise filter.
    pub nominal_accel_std: f64,
    pub nominal_gyro_std: f64,
    pub q_placement: QPlacement,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            alpha: UtParams::DEFAULT_ALPHA,
            beta: UtParams::DEFAULT_BETA,
            kappa: UtParams::DEFAULT_KAPPA,
            cov_weights: CovWeightForm::default(),
            dvl_noise_std: 0.02,
            nominal_accel_std: 0.03,
            nominal_gyro_std: 7.3e-6,
            q_placement: QPlacement::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct AdaptiveConfig {
    pub tau: TauFactors,
    pub bounds: ClampBounds,
    pub accel_weights: Option<PathBuf>,
    pub gyro_weights: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Independent corruption draws per training track.
    pub realizations: usize,
    pub accel_seed: u64,
    pub gyro_seed: u64,
    /// Train the gyroscope network with unit scales instead of the defaults.
    pub unscaled_gyro: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            realizations: 1,
            accel_seed: 11,
            gyro_seed: 12,
            unscaled_gyro: false,
        }
    }
}

impl TrainingConfig {
    pub fn optimizer(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageConfig {
    pub start: f64,
    pub duration: f64,
}

impl Default for OutageConfig {
    fn default() -> Self {
        Self {
            start: 180.0,
            duration: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Per-run, per-epoch error series.
    pub error_series: bool,
    /// Mean and spread of the velocity error norm across runs.
    pub plot_series: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            error_series: true,
            plot_series: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mc_runs: usize,
    pub filters: Vec<FilterKind>,
    /// Evaluation tracks; the built-in test pair when empty.
    pub tracks: Vec<TrackSource>,
    /// Training tracks; the built-in training set when empty.
    pub training_tracks: Vec<TrackSource>,
    pub simulation: CorruptionSpec,
    pub filter: FilterConfig,
    pub adaptive: AdaptiveConfig,
    pub training: TrainingConfig,
    pub outage: Option<OutageConfig>,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            mc_runs: 20,
            filters: FilterKind::ALL.to_vec(),
            tracks: Vec::new(),
            training_tracks: Vec::new(),
            simulation: CorruptionSpec::default(),
            filter: FilterConfig::default(),
            adaptive: AdaptiveConfig::default(),
            training: TrainingConfig::default(),
            outage: None,
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Parses a config file; relative paths inside resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for t in cfg.tracks.iter_mut().chain(cfg.training_tracks.iter_mut()) {
            if let TrackSource::Csv(c) = t {
                fix(&mut c.csv);
            }
        }
        if let Some(p) = cfg.adaptive.accel_weights.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.adaptive.gyro_weights.as_mut() {
            fix(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ExperimentError> {
        toml::to_string(self).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.mc_runs == 0 {
            return bad("mc_runs must be at least 1".into());
        }
        if self.filters.is_empty() {
            return bad("at least one filter is required".into());
        }
        let mut seen = self.filters.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.filters.len() {
            return bad("filters are listed more than once".into());
        }
        self.simulation.validate()?;
        self.adaptive
            .tau
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.adaptive
            .bounds
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.ut_params()?;
        if !(self.filter.dvl_noise_std > 0.0)
            || !(self.filter.nominal_accel_std > 0.0)
            || !(self.filter.nominal_gyro_std > 0.0)
        {
            return bad("filter noise STDs must be positive".into());
        }
        if self.training.epochs == 0
            || self.training.batch_size == 0
            || self.training.realizations == 0
            || !(self.training.learning_rate > 0.0)
        {
            return bad(
                "training epochs, batch size, realizations and learning rate must be positive"
                    .into(),
            );
        }
        let tracks = self.test_tracks();
        let mut names: Vec<&str> = Vec::new();
        for t in &tracks {
            if names.contains(&t.name()) {
                return bad(format!("duplicate track name {}", t.name()));
            }
            names.push(t.name());
        }
        if let Some(o) = &self.outage {
            if !(o.start >= 0.0 && o.duration >= 0.0) {
                return bad("outage start and duration must be nonnegative".into());
            }
        }
        Ok(())
    }

    pub fn ut_params(&self) -> Result<UtParams, ExperimentError> {
        UtParams::new(
            crate::model::STATE_DIM,
            self.filter.alpha,
            self.filter.beta,
            self.filter.kappa,
        )
        .map(|p| p.with_form(self.filter.cov_weights))
        .map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn test_tracks(&self) -> Vec<TrackSource> {
        if self.tracks.is_empty() {
            default_tracks()
                .1
                .into_iter()
                .map(TrackSource::Synthetic)
                .collect()
        } else {
            self.tracks.clone()
        }
    }

    pub fn train_tracks(&self) -> Vec<TrackSource> {
        if self.training_tracks.is_empty() {
            default_tracks()
                .0
                .into_iter()
                .map(TrackSource::Synthetic)
                .collect()
        } else {
            self.training_tracks.clone()
        }
    }
}

/// Stream identifiers mixed into derived seeds alongside the filter id.
pub const SENSOR_STREAM: u64 = 0;
pub const TRAINING_STREAM: u64 = 100;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit mix of `(base, track, stream, run)`.
pub fn derive_seed(base: u64, track: u64, stream: u64, run: u64) -> u64 {
    [track, stream, run]
        .iter()
        .fold(splitmix64(base), |h, v| splitmix64(h ^ splitmix64(*v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, 2, 3, 4), derive_seed(1, 2, 3, 4));
        let mut all: Vec<u64> = (0..4)
            .flat_map(|t| (0..4).flat_map(move |f| (0..50).map(move |r| derive_seed(7, t, f, r))))
            .collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = ExperimentConfig::from_toml_str("mc_runs = 3\nfilters = [\"ukf\", \"anukf\"]\n")
            .unwrap();
        assert_eq!(cfg.mc_runs, 3);
        assert_eq!(cfg.filters, vec![FilterKind::Ukf, FilterKind::Anukf]);
        assert_eq!(cfg.test_tracks().len(), 2);
        assert_eq!(cfg.train_tracks().len(), 4);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn config_rejections() {
        assert!(ExperimentConfig::from_toml_str("mc_runs = 0")
            .unwrap()
            .validate()
            .is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("filters = [\"kf\"]").is_err());
    }

    #[test]
    fn parses_track_sources() {
        let text = r#"
[[tracks]]
name = "rec"
csv = "data/rec"

[[tracks]]
name = "syn"
duration = 20.0
segments = [{ duration = 20.0, speed = 1.5 }]
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert!(matches!(cfg.tracks[0], TrackSource::Csv(_)));
        assert!(matches!(cfg.tracks[1], TrackSource::Synthetic(_)));
    }
}
