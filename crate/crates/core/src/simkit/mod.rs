//! Synthetic AUV trajectories, sensor corruption and label generation.
//!
//! Truth is built from an analytic attitude/velocity profile. The ideal IMU
//! stream is obtained by inverting [`mechanize_step`], so mechanizing it
//! from the initial truth reproduces the profile to rounding error.

mod csvio;

pub use csvio::{
    ingest_csv, read_dvl_csv, read_imu_csv, read_truth_csv, write_dvl_csv, write_imu_csv,
    write_labels_csv, write_truth_csv, IngestError, RecordedDataset, TruthRow,
};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ErrorState12;
use crate::strapdown::{mechanize_step, rotation_vector, ImuSample, NavState, GRAVITY_NED};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("segments cover {covered} s but the track lasts {duration} s")]
    Tiling { covered: f64, duration: f64 },
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
    #[error("invalid corruption settings: {0}")]
    Corruption(String),
}

/// One maneuver leg. Speed and vertical rate ramp linearly from the previous
/// leg's values to these over the leg; yaw changes at a constant rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration: f64,
    /// deg/s, positive clockwise seen from above.
    #[serde(default)]
    pub turn_rate_deg: f64,
    /// Forward speed at the end of the leg (m/s).
    pub speed: f64,
    /// Down velocity at the end of the leg (m/s).
    #[serde(default)]
    pub down_rate: f64,
}

impl Segment {
    pub fn straight(duration: f64, speed: f64) -> Self {
        Self {
            duration,
            turn_rate_deg: 0.0,
            speed,
            down_rate: 0.0,
        }
    }

    pub fn turn(duration: f64, rate_deg: f64, speed: f64) -> Self {
        Self {
            duration,
            turn_rate_deg: rate_deg,
            speed,
            down_rate: 0.0,
        }
    }

    pub fn with_down_rate(mut self, down_rate: f64) -> Self {
        self.down_rate = down_rate;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub name: String,
    pub duration: f64,
    #[serde(default = "default_imu_rate")]
    pub imu_rate: f64,
    #[serde(default = "default_dvl_rate")]
    pub dvl_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial_yaw_deg: f64,
    /// Defaults to the first leg's speed.
    #[serde(default)]
    pub initial_speed: Option<f64>,
    /// Amplitude of a slow pitch/roll oscillation (deg).
    #[serde(default)]
    pub sway_amplitude_deg: f64,
    #[serde(default = "default_sway_period")]
    pub sway_period: f64,
    pub segments: Vec<Segment>,
}

fn default_imu_rate() -> f64 {
    100.0
}
fn default_dvl_rate() -> f64 {
    1.0
}
fn default_sway_period() -> f64 {
    10.0
}

fn is_whole(x: f64) -> bool {
    (x - x.round()).abs() < 1e-9 * x.abs().max(1.0)
}

impl TrajectorySpec {
    pub fn new(name: &str, segments: Vec<Segment>) -> Self {
        Self {
            name: name.to_string(),
            duration: segments.iter().map(|s| s.duration).sum(),
            imu_rate: default_imu_rate(),
            dvl_rate: default_dvl_rate(),
            seed: 0,
            initial_yaw_deg: 0.0,
            initial_speed: None,
            sway_amplitude_deg: 0.0,
            sway_period: default_sway_period(),
            segments,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Trajectory(format!("{}: {m}", self.name)));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.imu_rate > 0.0 && self.dvl_rate > 0.0) {
            return bad("rates must be positive");
        }
        if !is_whole(self.imu_rate / self.dvl_rate)
            || !is_whole(self.duration * self.imu_rate)
            || !is_whole(self.duration * self.dvl_rate)
        {
            return bad(
                "duration and rates must give whole sample counts with IMU/DVL ratio integral",
            );
        }
        if self.segments.is_empty() {
            return bad("at least one segment is required");
        }
        if self.segments.iter().any(|s| {
            !(s.duration > 0.0)
                || !s.speed.is_finite()
                || !s.turn_rate_deg.is_finite()
                || !s.down_rate.is_finite()
        }) {
            return bad("segment durations must be positive and values finite");
        }
        if !(self.sway_period > 0.0) || !self.sway_amplitude_deg.is_finite() {
            return bad("sway period must be positive");
        }
        let covered: f64 = self.segments.iter().map(|s| s.duration).sum();
        if (covered - self.duration).abs() > 1e-9 * self.duration {
            return Err(SimError::Tiling {
                covered,
                duration: self.duration,
            });
        }
        Ok(())
    }

    pub fn imu_count(&self) -> usize {
        (self.duration * self.imu_rate).round() as usize
    }

    pub fn imu_per_dvl(&self) -> usize {
        (self.imu_rate / self.dvl_rate).round() as usize
    }

    /// `(yaw, pitch, roll)` and NED velocity at time `t`.
    pub fn profile(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        let mut yaw = self.initial_yaw_deg.to_radians();
        let mut speed0 = self.initial_speed.unwrap_or(self.segments[0].speed);
        let mut down0 = 0.0;
        let mut start = 0.0;
        let mut speed = speed0;
        let mut down = down0;
        for (i, seg) in self.segments.iter().enumerate() {
            let last = i + 1 == self.segments.len();
            let tau = (t - start).min(seg.duration).max(0.0);
            let frac = tau / seg.duration;
            yaw += seg.turn_rate_deg.to_radians() * tau;
            speed = speed0 + (seg.speed - speed0) * frac;
            down = down0 + (seg.down_rate - down0) * frac;
            if t <= start + seg.duration || last {
                break;
            }
            start += seg.duration;
            speed0 = seg.speed;
            down0 = seg.down_rate;
        }
        let a = self.sway_amplitude_deg.to_radians();
        let w = std::f64::consts::TAU / self.sway_period;
        let pitch = a * (w * t).sin();
        let roll = a * (0.7 * w * t + 1.0).sin();
        let v = Vector3::new(speed * yaw.cos(), speed * yaw.sin(), down);
        (Vector3::new(yaw, pitch, roll), v)
    }
}

/// A body-frame velocity reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvlSample {
    pub t: f64,
    pub v_b: Vector3<f64>,
    pub valid: bool,
}

/// Truth navigation states plus the ideal sensor streams that reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthStream {
    pub name: String,
    pub imu_rate: f64,
    /// States at every IMU epoch, one more than `imu`.
    pub states: Vec<NavState>,
    pub imu: Vec<ImuSample>,
    pub dvl: Vec<DvlSample>,
}

impl TruthStream {
    pub fn dt(&self) -> f64 {
        1.0 / self.imu_rate
    }

    pub fn imu_per_dvl(&self) -> usize {
        if self.dvl.is_empty() {
            return 1;
        }
        ((self.dvl[0].t * self.imu_rate).round() as usize).max(1)
    }

    /// Truth state at IMU index `k`.
    pub fn state(&self, k: usize) -> &NavState {
        &self.states[k]
    }

    pub fn duration(&self) -> f64 {
        self.imu.len() as f64 / self.imu_rate
    }
}

pub fn generate_truth(spec: &TrajectorySpec) -> Result<TruthStream, SimError> {
    spec.validate()?;
    let n = spec.imu_count();
    let dt = 1.0 / spec.imu_rate;
    let states: Vec<NavState> = (0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            let (e, v) = spec.profile(t);
            NavState::from_euler(e[0], e[1], e[2], v, t)
        })
        .collect();
    let imu = ideal_imu(&states, dt);
    let step = spec.imu_per_dvl();
    let dvl = (1..=n / step)
        .map(|j| {
            let s = &states[j * step];
            DvlSample {
                t: s.t,
                v_b: s.c_nb() * s.v_n,
                valid: true,
            }
        })
        .collect();
    Ok(TruthStream {
        name: spec.name.clone(),
        imu_rate: spec.imu_rate,
        states,
        imu,
        dvl,
    })
}

/// Inverts one mechanization step between consecutive truth states.
pub fn ideal_imu(states: &[NavState], dt: f64) -> Vec<ImuSample> {
    states
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let w_b = rotation_vector(&(a.c_bn.transpose() * b.c_bn)) / dt;
            let f_b = a.c_nb() * ((b.v_n - a.v_n) / dt - GRAVITY_NED);
            ImuSample { f_b, w_b, t: a.t }
        })
        .collect()
}

/// Mechanizes `imu` from `start`, returning every intermediate state.
pub fn mechanize_all(start: &NavState, imu: &[ImuSample], dt: f64) -> Vec<NavState> {
    let mut out = Vec::with_capacity(imu.len() + 1);
    out.push(start.clone());
    let mut nav = start.clone();
    for s in imu {
        nav = mechanize_step(&nav, s, dt, &GRAVITY_NED).expect("finite samples");
        out.push(nav.clone());
    }
    out
}

/// Piecewise-constant multiplier on noise and bias-walk STDs. `factors[i]`
/// applies from `times[i]` (the first time is 0) until the next change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSchedule {
    pub times: Vec<f64>,
    pub factors: Vec<f64>,
}

impl Default for FactorSchedule {
    fn default() -> Self {
        Self::constant(1.0)
    }
}

impl FactorSchedule {
    pub fn constant(f: f64) -> Self {
        Self {
            times: vec![0.0],
            factors: vec![f],
        }
    }

    pub fn steps(times: Vec<f64>, factors: Vec<f64>) -> Self {
        Self { times, factors }
    }

    /// Uniform factors in `[lo, hi]` held for `dwell` seconds each.
    pub fn random(duration: f64, dwell: f64, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let count = (duration / dwell).ceil().max(1.0) as usize;
        Self {
            times: (0..count).map(|i| i as f64 * dwell).collect(),
            factors: (0..count).map(|_| rng.random_range(lo..=hi)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Corruption(format!("factor schedule: {m}")));
        if self.times.is_empty() || self.times.len() != self.factors.len() {
            return bad("times and factors must be nonempty and the same length");
        }
        if self.times[0] != 0.0 || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return bad("times must start at 0 and increase");
        }
        if self.factors.iter().any(|f| !(1.0..=6.0).contains(f)) {
            return bad("factors must lie in [1, 6]");
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        let i = self.times.partition_point(|s| *s <= t + 1e-9);
        self.factors[i.saturating_sub(1)]
    }
}

/// How factor schedules are chosen for a corruption run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Fresh uniform draw per run from the corruption seed.
    Random {
        dwell: f64,
        min: f64,
        max: f64,
    },
    Fixed(FactorSchedule),
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Random {
            dwell: 30.0,
            min: 1.0,
            max: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub accel_noise_std: f64,
    pub gyro_noise_std: f64,
    pub accel_bias_std: f64,
    pub gyro_bias_std: f64,
    /// Bias random-walk densities at factor 1 (unit/√s).
    pub accel_bias_walk: f64,
    pub gyro_bias_walk: f64,
    pub dvl_noise_std: f64,
    pub schedule: ScheduleSpec,
    pub init_vel_err_std: [f64; 3],
    pub init_misalign_std_deg: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            accel_noise_std: 0.03,
            gyro_noise_std: 7.3e-6,
            accel_bias_std: 0.3,
            gyro_bias_std: 7.3e-5,
            accel_bias_walk: 0.003,
            gyro_bias_walk: 7.3e-7,
            dvl_noise_std: 0.02,
            schedule: ScheduleSpec::default(),
            init_vel_err_std: [0.25, 0.25, 0.05],
            init_misalign_std_deg: 0.01,
        }
    }
}

impl CorruptionSpec {
    /// Every STD zero and a unit factor.
    pub fn noiseless() -> Self {
        Self {
            accel_noise_std: 0.0,
            gyro_noise_std: 0.0,
            accel_bias_std: 0.0,
            gyro_bias_std: 0.0,
            accel_bias_walk: 0.0,
            gyro_bias_walk: 0.0,
            dvl_noise_std: 0.0,
            schedule: ScheduleSpec::Fixed(FactorSchedule::constant(1.0)),
            init_vel_err_std: [0.0; 3],
            init_misalign_std_deg: 0.0,
        }
    }

    /// Static sensors: unit factor throughout.
    pub fn static_noise() -> Self {
        Self {
            schedule: ScheduleSpec::Fixed(FactorSchedule::constant(1.0)),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let stds = [
            self.accel_noise_std,
            self.gyro_noise_std,
            self.accel_bias_std,
            self.gyro_bias_std,
            self.accel_bias_walk,
            self.gyro_bias_walk,
            self.dvl_noise_std,
            self.init_misalign_std_deg,
            self.init_vel_err_std[0],
            self.init_vel_err_std[1],
            self.init_vel_err_std[2],
        ];
        if stds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(SimError::Corruption(
                "standard deviations must be nonnegative".into(),
            ));
        }
        match &self.schedule {
            ScheduleSpec::Random { dwell, min, max } => {
                if !(*dwell > 0.0) || !(1.0 <= *min && min <= max && *max <= 6.0) {
                    return Err(SimError::Corruption(
                        "random schedule needs dwell > 0 and 1 ≤ min ≤ max ≤ 6".into(),
                    ));
                }
                Ok(())
            }
            ScheduleSpec::Fixed(s) => s.validate(),
        }
    }

    pub fn schedule_for(&self, duration: f64, rng: &mut impl Rng) -> FactorSchedule {
        match &self.schedule {
            ScheduleSpec::Random { dwell, min, max } => {
                FactorSchedule::random(duration, *dwell, *min, *max, rng)
            }
            ScheduleSpec::Fixed(s) => s.clone(),
        }
    }

    /// Initial filter covariance diagonal matching the drawn initial errors.
    pub fn initial_covariance_diag(&self) -> [f64; 12] {
        let m = self.init_misalign_std_deg.to_radians();
        let v = self.init_vel_err_std;
        [
            v[0] * v[0],
            v[1] * v[1],
            v[2] * v[2],
            m * m,
            m * m,
            m * m,
            self.accel_bias_std.powi(2),
            self.accel_bias_std.powi(2),
            self.accel_bias_std.powi(2),
            self.gyro_bias_std.powi(2),
            self.gyro_bias_std.powi(2),
            self.gyro_bias_std.powi(2),
        ]
    }
}

/// Per-window targets for the regressors: the noise variance in effect.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelStream {
    /// Window start times.
    pub t: Vec<f64>,
    pub accel: Vec<[f64; 3]>,
    pub gyro: Vec<[f64; 3]>,
}

/// Corrupted sensor streams and the hidden quantities behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedRun {
    pub imu: Vec<ImuSample>,
    pub dvl: Vec<DvlSample>,
    pub labels: LabelStream,
    pub schedule: FactorSchedule,
    /// True biases at each IMU sample.
    pub accel_bias: Vec<Vector3<f64>>,
    pub gyro_bias: Vec<Vector3<f64>>,
}

fn normal3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Adds biases, white noise and DVL noise; deterministic per `seed`.
/// Labels cover consecutive windows of `window` IMU samples.
pub fn corrupt(
    truth: &TruthStream,
    spec: &CorruptionSpec,
    seed: u64,
    window: usize,
) -> Result<CorruptedRun, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = spec.schedule_for(truth.duration(), &mut rng);
    schedule.validate()?;
    let dt = truth.dt();
    let sdt = dt.sqrt();
    let mut ba = normal3(&mut rng) * spec.accel_bias_std;
    let mut bg = normal3(&mut rng) * spec.gyro_bias_std;
    let n = truth.imu.len();
    let mut imu = Vec::with_capacity(n);
    let mut accel_bias = Vec::with_capacity(n);
    let mut gyro_bias = Vec::with_capacity(n);
    let mut var_a = Vec::with_capacity(n);
    let mut var_g = Vec::with_capacity(n);
    for s in &truth.imu {
        let f = schedule.at(s.t);
        let sa = spec.accel_noise_std * f;
        let sg = spec.gyro_noise_std * f;
        let na = normal3(&mut rng) * sa;
        let ng = normal3(&mut rng) * sg;
        accel_bias.push(ba);
        gyro_bias.push(bg);
        imu.push(ImuSample {
            f_b: s.f_b + ba + na,
            w_b: s.w_b + bg + ng,
            t: s.t,
        });
        var_a.push(sa * sa);
        var_g.push(sg * sg);
        ba += normal3(&mut rng) * (spec.accel_bias_walk * f * sdt);
        bg += normal3(&mut rng) * (spec.gyro_bias_walk * f * sdt);
    }
    let dvl = truth
        .dvl
        .iter()
        .map(|d| DvlSample {
            t: d.t,
            v_b: d.v_b + normal3(&mut rng) * spec.dvl_noise_std,
            valid: d.valid,
        })
        .collect();
    let mut labels = LabelStream::default();
    if let Some(count) = n.checked_div(window) {
        for start in (0..count).map(|j| j * window) {
            let mean = |v: &[f64]| v[start..start + window].iter().sum::<f64>() / window as f64;
            let (a, g) = (mean(&var_a), mean(&var_g));
            labels.t.push(truth.imu[start].t);
            labels.accel.push([a; 3]);
            labels.gyro.push([g; 3]);
        }
    }
    Ok(CorruptedRun {
        imu,
        dvl,
        labels,
        schedule,
        accel_bias,
        gyro_bias,
    })
}

/// Draws initial velocity and misalignment errors. Bias components are
/// left zero; the caller fills them from the true initial biases.
pub fn draw_initial_error(spec: &CorruptionSpec, rng: &mut impl Rng) -> ErrorState12 {
    let mut e = ErrorState12::zero();
    let m = spec.init_misalign_std_deg.to_radians();
    for i in 0..3 {
        let z: f64 = rng.sample(StandardNormal);
        e.dv_n[i] = z * spec.init_vel_err_std[i];
    }
    for i in 0..3 {
        let z: f64 = rng.sample(StandardNormal);
        e.dpsi_n[i] = z * m;
    }
    e
}

/// Four training and two test tracks of four minutes each with mixed
/// maneuver density.
pub fn default_tracks() -> (Vec<TrajectorySpec>, Vec<TrajectorySpec>) {
    let s = Segment::straight;
    let t = Segment::turn;
    let mk = |name: &str, seed: u64, yaw: f64, sway: f64, segs: Vec<Segment>| {
        let mut spec = TrajectorySpec::new(name, segs);
        spec.seed = seed;
        spec.initial_yaw_deg = yaw;
        spec.sway_amplitude_deg = sway;
        spec.sway_period = 12.0;
        spec
    };
    let train = vec![
        mk(
            "track1",
            1,
            0.0,
            1.0,
            vec![
                s(40.0, 1.5),
                t(30.0, 3.0, 1.8),
                s(50.0, 2.0),
                t(30.0, -3.0, 1.6).with_down_rate(0.2),
                s(60.0, 1.6).with_down_rate(0.0),
                t(30.0, 2.0, 1.5),
            ],
        ),
        mk(
            "track2",
            2,
            45.0,
            2.0,
            vec![
                t(20.0, 4.5, 1.2),
                s(20.0, 1.8),
                t(20.0, -4.5, 2.2),
                s(20.0, 2.2).with_down_rate(-0.2),
                t(40.0, 6.0, 1.5).with_down_rate(0.0),
                s(20.0, 1.0),
                t(20.0, -3.0, 1.4),
                s(20.0, 2.0),
                t(40.0, 4.5, 2.0),
                s(20.0, 2.0),
            ],
        ),
        mk(
            "track3",
            3,
            120.0,
            0.5,
            vec![
                s(80.0, 2.5),
                t(60.0, 1.5, 2.5),
                s(100.0, 1.2).with_down_rate(0.1),
            ],
        ),
        mk(
            "track4",
            4,
            -60.0,
            3.0,
            vec![
                t(15.0, 6.0, 1.5),
                t(15.0, -6.0, 1.5),
                t(15.0, 6.0, 2.0),
                t(15.0, -6.0, 2.0),
                s(30.0, 1.0),
                t(30.0, 3.0, 1.8).with_down_rate(0.3),
                s(30.0, 1.8).with_down_rate(-0.3),
                t(30.0, -3.0, 1.8).with_down_rate(0.0),
                s(30.0, 2.4),
                t(30.0, 6.0, 1.5),
            ],
        ),
    ];
    let test = vec![
        mk(
            "track5",
            5,
            10.0,
            1.5,
            vec![
                s(30.0, 1.8),
                t(30.0, 3.0, 2.0),
                s(40.0, 2.0),
                t(20.0, -4.5, 1.5).with_down_rate(0.2),
                s(40.0, 1.5).with_down_rate(0.0),
                t(30.0, 3.0, 2.2),
                s(50.0, 2.0),
            ],
        ),
        mk(
            "track6",
            6,
            200.0,
            2.5,
            vec![
                t(25.0, -3.0, 1.4),
                s(35.0, 2.2),
                t(30.0, 6.0, 1.6),
                s(30.0, 1.6).with_down_rate(-0.2),
                t(30.0, -3.0, 2.0).with_down_rate(0.0),
                s(40.0, 2.4),
                t(50.0, 2.0, 1.8),
            ],
        ),
    ];
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_track_is_trivial() {
        let spec = TrajectorySpec::new("s", vec![Segment::straight(10.0, 2.0)]);
        let truth = generate_truth(&spec).unwrap();
        assert_eq!(truth.imu.len(), 1000);
        assert_eq!(truth.dvl.len(), 10);
        for s in &truth.imu {
            assert!(s.w_b.norm() < 1e-14);
            assert!((s.f_b + GRAVITY_NED).norm() < 1e-12);
        }
        assert!(truth
            .states
            .iter()
            .all(|s| (s.v_n - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-15));
        assert!((truth.dvl[3].v_b - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn quarter_turn_heading() {
        let spec = TrajectorySpec::new("q", vec![Segment::turn(30.0, 3.0, 1.5)]);
        let truth = generate_truth(&spec).unwrap();
        let yaw = truth.states.last().unwrap().euler()[0];
        assert!((yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn tiling_enforced() {
        let mut spec = TrajectorySpec::new("x", vec![Segment::straight(10.0, 1.0)]);
        spec.duration = 12.0;
        assert!(matches!(
            generate_truth(&spec),
            Err(SimError::Tiling { .. })
        ));
    }

    #[test]
    fn mechanization_round_trip() {
        let (train, _) = default_tracks();
        for spec in train.iter().take(2) {
            let truth = generate_truth(spec).unwrap();
            let mech = mechanize_all(&truth.states[0], &truth.imu, truth.dt());
            let worst = mech
                .iter()
                .zip(&truth.states)
                .map(|(a, b)| (a.v_n - b.v_n).norm())
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "{}: {worst}", spec.name);
        }
    }

    #[test]
    fn noiseless_corruption_is_identity() {
        let spec = TrajectorySpec::new("n", vec![Segment::turn(5.0, 3.0, 1.0)]);
        let truth = generate_truth(&spec).unwrap();
        let run = corrupt(&truth, &CorruptionSpec::noiseless(), 9, 100).unwrap();
        assert_eq!(run.imu, truth.imu);
        assert_eq!(run.dvl, truth.dvl);
        assert_eq!(run.labels.accel.len(), 5);
        assert!(run
            .labels
            .accel
            .iter()
            .chain(&run.labels.gyro)
            .all(|l| *l == [0.0; 3]));
    }

    #[test]
    fn corruption_is_deterministic() {
        let spec = TrajectorySpec::new("d", vec![Segment::turn(20.0, 3.0, 1.0)]);
        let truth = generate_truth(&spec).unwrap();
        let a = corrupt(&truth, &CorruptionSpec::default(), 4, 100).unwrap();
        let b = corrupt(&truth, &CorruptionSpec::default(), 4, 100).unwrap();
        let c = corrupt(&truth, &CorruptionSpec::default(), 5, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.imu, c.imu);
    }

    #[test]
    fn label_steps_with_schedule() {
        let spec = TrajectorySpec::new("l", vec![Segment::straight(240.0, 1.5)]);
        let truth = generate_truth(&spec).unwrap();
        let c = CorruptionSpec {
            schedule: ScheduleSpec::Fixed(FactorSchedule::steps(vec![0.0, 120.0], vec![1.0, 6.0])),
            ..CorruptionSpec::default()
        };
        let run = corrupt(&truth, &c, 1, 100).unwrap();
        assert_eq!(run.labels.accel.len(), 240);
        let lo = run.labels.accel[119][0];
        let hi = run.labels.accel[120][0];
        assert!((lo - 9e-4).abs() < 1e-15);
        assert!((hi / lo - 36.0).abs() < 1e-9);
    }

    #[test]
    fn schedule_lookup_and_validation() {
        let s = FactorSchedule::steps(vec![0.0, 30.0, 60.0], vec![1.0, 2.0, 3.0]);
        assert_eq!(s.at(0.0), 1.0);
        assert_eq!(s.at(29.99), 1.0);
        assert_eq!(s.at(30.0), 2.0);
        assert_eq!(s.at(1e6), 3.0);
        assert!(FactorSchedule::steps(vec![0.0], vec![7.0])
            .validate()
            .is_err());
        assert!(FactorSchedule::steps(vec![1.0], vec![2.0])
            .validate()
            .is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = FactorSchedule::random(240.0, 30.0, 1.0, 6.0, &mut rng);
        assert_eq!(r.factors.len(), 8);
        r.validate().unwrap();
    }

    #[test]
    fn default_roster_is_valid() {
        let (train, test) = default_tracks();
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 2);
        for s in train.iter().chain(&test) {
            s.validate().unwrap();
            assert_eq!(s.duration, 240.0);
        }
    }
}
