//! Closed-loop INS/DVL fusion over one track: mechanize at the IMU rate,
//! propagate the error covariance and apply DVL corrections at the DVL rate.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::adaptive_q::{AdaptiveQ, ClampReport};
use crate::ekf::EkfSession;
use crate::error::FilterError;
use crate::metrics::{misalignment_angles, nees};
use crate::model::{
    build_f_matrix, build_g_matrix, build_q_discrete, discretize, dvl_innovation, dvl_jacobian,
    dvl_measurement_fn, ErrorState12, QPlacement, STATE_DIM,
};
use crate::processnet::{ImuWindow, WINDOW};
use crate::simkit::{CorruptedRun, DvlSample, TruthStream};
use crate::strapdown::{
    apply_error_correction, inject_error, mechanize_step, rotation_vector, ImuSample, NavState,
    GRAVITY_NED,
};
use crate::ukf::{GaussianState, UnscentedFilter, UtParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    /// Unscented filter with fixed, nominal process noise.
    Ukf,
    /// Extended filter with regressed process noise.
    Anekf,
    /// Unscented filter with regressed process noise.
    Anukf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Ukf, FilterKind::Anekf, FilterKind::Anukf];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ukf => "ukf",
            FilterKind::Anekf => "anekf",
            FilterKind::Anukf => "anukf",
        }
    }

    /// Stable identifier used in seed derivation.
    pub fn id(self) -> u64 {
        match self {
            FilterKind::Ukf => 1,
            FilterKind::Anekf => 2,
            FilterKind::Anukf => 3,
        }
    }

    pub fn is_adaptive(self) -> bool {
        !matches!(self, FilterKind::Ukf)
    }

    pub fn is_unscented(self) -> bool {
        !matches!(self, FilterKind::Anekf)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ukf" => Ok(FilterKind::Ukf),
            "anekf" => Ok(FilterKind::Anekf),
            "anukf" => Ok(FilterKind::Anukf),
            other => Err(format!(
                "unknown filter {other:?}; expected ukf, anekf or anukf"
            )),
        }
    }
}

/// Source of the process-noise covariance at each propagation.
#[derive(Debug, Clone)]
pub enum ProcessNoise {
    /// Fixed `Q*` diagonal, rotated by the current `G`.
    Static(DVector<f64>),
    Adaptive(AdaptiveQ),
}

#[derive(Debug, Clone)]
pub struct FilterSetup {
    pub kind: FilterKind,
    pub ut: UtParams,
    pub r: DMatrix<f64>,
    pub noise: ProcessNoise,
    pub initial_cov: DMatrix<f64>,
    pub q_placement: QPlacement,
}

/// Errors after the correction at one DVL epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub t: f64,
    /// Estimated minus true velocity (m/s).
    pub dv: Vector3<f64>,
    /// `(yaw, pitch, roll)` misalignment, `None` near gimbal lock.
    pub dpsi: Option<Vector3<f64>>,
    /// Full 12-state error against the filter covariance.
    pub nees: f64,
    pub dvl_used: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub epochs: Vec<EpochRecord>,
    pub clamp: ClampReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub t: f64,
    pub reason: String,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "failed at t = {} s: {}", self.t, self.reason)
    }
}

enum Estimator {
    Unscented(UnscentedFilter),
    Extended(EkfSession),
}

impl Estimator {
    fn state(&self) -> &GaussianState {
        match self {
            Estimator::Unscented(f) => f.state(),
            Estimator::Extended(f) => f.state(),
        }
    }

    fn reset_mean(&mut self) {
        match self {
            Estimator::Unscented(f) => f.reset_mean(),
            Estimator::Extended(f) => f.reset_mean(),
        }
    }

    fn predict(&mut self, phi: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<(), FilterError> {
        match self {
            Estimator::Unscented(f) => f.predict(|x| phi * x, q),
            Estimator::Extended(f) => f.predict(phi, q),
        }
    }

    fn update(
        &mut self,
        nav: &NavState,
        r: &DMatrix<f64>,
        z: &DVector<f64>,
    ) -> Result<(), FilterError> {
        match self {
            Estimator::Unscented(f) => f.update(dvl_measurement_fn(nav), r, z),
            Estimator::Extended(f) => f.update(&dvl_jacobian(nav), r, z),
        }
    }
}

/// True error of `nav` in the filter's state convention.
pub fn true_error(
    nav: &NavState,
    truth: &NavState,
    ba_true: &Vector3<f64>,
    bg_true: &Vector3<f64>,
) -> ErrorState12 {
    ErrorState12 {
        dv_n: nav.v_n - truth.v_n,
        dpsi_n: rotation_vector(&(nav.c_bn * truth.c_bn.transpose())),
        ba: ba_true - nav.b_a_hat,
        bg: bg_true - nav.b_g_hat,
    }
}

fn window_of(
    samples: &[ImuSample],
    pick: impl Fn(&ImuSample) -> Vector3<f64>,
) -> Option<ImuWindow> {
    if samples.len() < WINDOW {
        return None;
    }
    let rows: Vec<[f64; 3]> = samples[samples.len() - WINDOW..]
        .iter()
        .map(|s| {
            let v = pick(s);
            [v.x, v.y, v.z]
        })
        .collect();
    ImuWindow::from_rows(&rows).ok()
}

/// Runs one filter over a corrupted track. `init` carries the initial
/// velocity and misalignment errors; bias estimates start at zero.
pub fn run_filter(
    setup: &FilterSetup,
    truth: &TruthStream,
    run: &CorruptedRun,
    dvl: &[DvlSample],
    init: &ErrorState12,
) -> Result<FilterTrace, RunFailure> {
    let fail = |t: f64, reason: String| RunFailure { t, reason };
    let dt = truth.dt();
    let start_err = ErrorState12 {
        dv_n: init.dv_n,
        dpsi_n: init.dpsi_n,
        ..ErrorState12::zero()
    };
    let mut nav = inject_error(&truth.states[0], &start_err);
    let prior = GaussianState::new(DVector::zeros(STATE_DIM), setup.initial_cov.clone())
        .map_err(|e| fail(0.0, e.to_string()))?;
    let mut est = if setup.kind.is_unscented() {
        Estimator::Unscented(
            UnscentedFilter::new(prior, setup.ut).map_err(|e| fail(0.0, e.to_string()))?,
        )
    } else {
        Estimator::Extended(EkfSession::new(prior).map_err(|e| fail(0.0, e.to_string()))?)
    };

    let mut clamp = ClampReport::default();
    let mut epochs = Vec::with_capacity(dvl.len());
    let mut k = 0usize;
    for d in dvl {
        let end = ((d.t * truth.imu_rate).round() as usize).min(run.imu.len());
        if end <= k {
            continue;
        }
        let mut phi = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM);
        for s in &run.imu[k..end] {
            let f_b = s.f_b - nav.b_a_hat;
            let phi_k = discretize(&build_f_matrix(&nav, &f_b), dt)
                .map_err(|e| fail(s.t, e.to_string()))?;
            phi = phi_k * phi;
            nav =
                mechanize_step(&nav, s, dt, &GRAVITY_NED).map_err(|e| fail(s.t, e.to_string()))?;
        }
        let g = build_g_matrix(&nav);
        let q = match &setup.noise {
            ProcessNoise::Static(qstar) => {
                build_q_discrete(&g, qstar).map_err(|e| fail(d.t, e.to_string()))?
            }
            ProcessNoise::Adaptive(pipe) => {
                let interval = &run.imu[end.saturating_sub(WINDOW)..end];
                let wa = window_of(interval, |s| s.f_b).unwrap_or_else(ImuWindow::zeros);
                let wg = window_of(interval, |s| s.w_b).unwrap_or_else(ImuWindow::zeros);
                let (q, report) = pipe
                    .evaluate(&wa, &wg, &g)
                    .map_err(|e| fail(d.t, e.to_string()))?;
                clamp += report;
                q
            }
        };
        est.predict(&phi, &setup.q_placement.effective(&phi, &q))
            .map_err(|e| fail(d.t, e.to_string()))?;
        k = end;

        if d.valid {
            let z = dvl_innovation(&nav, &d.v_b);
            let z = DVector::from_column_slice(z.as_slice());
            est.update(&nav, &setup.r, &z)
                .map_err(|e| fail(d.t, e.to_string()))?;
            let correction = ErrorState12::from_vector(&est.state().mean)
                .map_err(|e| fail(d.t, e.to_string()))?;
            nav =
                apply_error_correction(&nav, &correction).map_err(|e| fail(d.t, e.to_string()))?;
            est.reset_mean();
        }

        let idx = k.min(truth.states.len() - 1);
        let t_state = &truth.states[idx];
        let bi = idx.min(run.accel_bias.len().saturating_sub(1));
        let (ba, bg) = match (run.accel_bias.get(bi), run.gyro_bias.get(bi)) {
            (Some(a), Some(g)) => (*a, *g),
            _ => (Vector3::zeros(), Vector3::zeros()),
        };
        let err = true_error(&nav, t_state, &ba, &bg);
        let n = nees(&err.to_vector(), &est.state().cov).unwrap_or(f64::NAN);
        let dv = nav.v_n - t_state.v_n;
        if !dv.iter().all(|v| v.is_finite()) {
            return Err(fail(d.t, "non-finite velocity".into()));
        }
        epochs.push(EpochRecord {
            t: d.t,
            dv,
            dpsi: misalignment_angles(&nav.c_bn, &t_state.c_bn),
            nees: n,
            dvl_used: d.valid,
        });
    }
    Ok(FilterTrace { epochs, clamp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive_q::TauFactors;
    use crate::model::default_dvl_noise;
    use crate::simkit::{corrupt, generate_truth, CorruptionSpec, Segment, TrajectorySpec};

    fn setup(kind: FilterKind, init_cov: [f64; 12]) -> FilterSetup {
        let spec = TauFactors::default()
            .static_noise(0.03f64.powi(2), 7.3e-6f64.powi(2), 1.0)
            .unwrap();
        FilterSetup {
            kind,
            ut: UtParams::standard(STATE_DIM),
            r: default_dvl_noise(),
            noise: ProcessNoise::Static(spec.qstar(1.0)),
            initial_cov: DMatrix::from_diagonal(&DVector::from_row_slice(&init_cov)),
            q_placement: QPlacement::Endpoint,
        }
    }

    #[test]
    fn converges_on_clean_straight_track() {
        let spec = TrajectorySpec::new("clean", vec![Segment::straight(60.0, 2.0)]);
        let truth = generate_truth(&spec).unwrap();
        let run = corrupt(&truth, &CorruptionSpec::noiseless(), 0, 100).unwrap();
        let init = ErrorState12 {
            dv_n: Vector3::new(0.25, -0.25, 0.05),
            ..ErrorState12::zero()
        };
        let cov = CorruptionSpec::default().initial_covariance_diag();
        for kind in [FilterKind::Ukf, FilterKind::Anekf] {
            let trace = run_filter(&setup(kind, cov), &truth, &run, &run.dvl, &init).unwrap();
            assert_eq!(trace.epochs.len(), 60);
            let last = trace.epochs.last().unwrap();
            assert!(last.dv.norm() < 0.05, "{kind}: {}", last.dv.norm());
        }
    }

    #[test]
    fn filter_names_parse() {
        for k in FilterKind::ALL {
            assert_eq!(k.name().parse::<FilterKind>().unwrap(), k);
        }
        assert!("kf".parse::<FilterKind>().is_err());
    }
}
