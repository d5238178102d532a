//! 12-state INS/DVL error model: continuous dynamics, discretization,
//! process noise, and the DVL body-velocity measurement.
//!
//! State layout is fixed as `[δvⁿ, δΨⁿ, b_a, b_g]`. Conventions (see
//! [`crate::strapdown::apply_error_correction`]):
//!
//! * `δv = v̂ − v`
//! * `Ĉ_bⁿ = R(δΨ)·C_bⁿ`
//! * `b_a`, `b_g` are residual sensor biases left after compensation.
//!
//! With these, the linearized dynamics are
//! `δv̇ = −[(Ĉf)×]·δΨ + Ĉ·b_a`, `δΨ̇ = Ĉ·b_g`, and both bias blocks are random
//! walks.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::skew;
use crate::strapdown::{rodrigues, NavState};

pub const STATE_DIM: usize = 12;
pub const MEAS_DIM: usize = 3;

/// Offsets of the four 3-vector blocks.
pub const VEL: usize = 0;
pub const PSI: usize = 3;
pub const ACC_BIAS: usize = 6;
pub const GYRO_BIAS: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("time step {0} outside (0, 1] s")]
    TimeStep(f64),
    #[error("negative or non-finite process-noise diagonal at index {0}")]
    NegativeNoise(usize),
    #[error("expected {expected} entries, got {got}")]
    Length { expected: usize, got: usize },
    #[error("noise standard deviations must be strictly positive")]
    NonPositiveNoise,
}

/// Velocity error, misalignment, and residual biases.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorState12 {
    pub dv_n: Vector3<f64>,
    pub dpsi_n: Vector3<f64>,
    pub ba: Vector3<f64>,
    pub bg: Vector3<f64>,
}

impl ErrorState12 {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_slice(x: &[f64]) -> Result<Self, ModelError> {
        if x.len() != STATE_DIM {
            return Err(ModelError::Length {
                expected: STATE_DIM,
                got: x.len(),
            });
        }
        let v = |o: usize| Vector3::new(x[o], x[o + 1], x[o + 2]);
        Ok(Self {
            dv_n: v(VEL),
            dpsi_n: v(PSI),
            ba: v(ACC_BIAS),
            bg: v(GYRO_BIAS),
        })
    }

    pub fn from_vector(x: &DVector<f64>) -> Result<Self, ModelError> {
        Self::from_slice(x.as_slice())
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut out = DVector::zeros(STATE_DIM);
        out.fixed_rows_mut::<3>(VEL).copy_from(&self.dv_n);
        out.fixed_rows_mut::<3>(PSI).copy_from(&self.dpsi_n);
        out.fixed_rows_mut::<3>(ACC_BIAS).copy_from(&self.ba);
        out.fixed_rows_mut::<3>(GYRO_BIAS).copy_from(&self.bg);
        out
    }

    pub fn is_finite(&self) -> bool {
        [self.dv_n, self.dpsi_n, self.ba, self.bg]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        [self.dv_n, self.dpsi_n, self.ba, self.bg]
            .iter()
            .all(|v| v.iter().all(|x| *x == 0.0))
    }
}

/// Continuous white-noise densities driving the error model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Accelerometer white noise (m/s²/√Hz).
    pub sigma_a: f64,
    /// Gyroscope white noise (rad/s/√Hz).
    pub sigma_g: f64,
    /// Accelerometer bias random walk (m/s²·√s⁻¹).
    pub sigma_ab: f64,
    /// Gyroscope bias random walk (rad/s·√s⁻¹).
    pub sigma_gb: f64,
}

impl NoiseSpec {
    pub fn new(
        sigma_a: f64,
        sigma_g: f64,
        sigma_ab: f64,
        sigma_gb: f64,
    ) -> Result<Self, ModelError> {
        let spec = Self {
            sigma_a,
            sigma_g,
            sigma_ab,
            sigma_gb,
        };
        if [sigma_a, sigma_g, sigma_ab, sigma_gb]
            .iter()
            .all(|s| *s > 0.0 && s.is_finite())
        {
            Ok(spec)
        } else {
            Err(ModelError::NonPositiveNoise)
        }
    }

    /// Densities whose discrete covariance over `dt` equals the adaptive
    /// block layout fed with the given per-sample sensor variances:
    /// `[q_a·τ·τ_a, q_g·τ·τ_g, q_a·τ, q_g·τ]`.
    pub fn from_sensor_variances(
        accel_var: f64,
        gyro_var: f64,
        tau: f64,
        tau_a: f64,
        tau_g: f64,
        dt: f64,
    ) -> Result<Self, ModelError> {
        Self::new(
            (accel_var * tau * tau_a / dt).sqrt(),
            (gyro_var * tau * tau_g / dt).sqrt(),
            (accel_var * tau / dt).sqrt(),
            (gyro_var * tau / dt).sqrt(),
        )
    }

    /// Diagonal of `Q*` for an interval `dt`: `σ²·dt` per axis in state order.
    pub fn qstar(&self, dt: f64) -> DVector<f64> {
        let mut d = DVector::zeros(STATE_DIM);
        for (block, s) in [self.sigma_a, self.sigma_g, self.sigma_ab, self.sigma_gb]
            .iter()
            .enumerate()
        {
            for k in 0..3 {
                d[3 * block + k] = s * s * dt;
            }
        }
        d
    }
}

fn put_block(m: &mut DMatrix<f64>, row: usize, col: usize, b: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(row, col).copy_from(b);
}

/// Continuous-time system matrix for the current attitude and the
/// bias-compensated specific force `f_b`.
pub fn build_f_matrix(nav: &NavState, f_b: &Vector3<f64>) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(STATE_DIM, STATE_DIM);
    let f_n = nav.c_bn * f_b;
    put_block(&mut f, VEL, PSI, &(-skew(&f_n)));
    put_block(&mut f, VEL, ACC_BIAS, &nav.c_bn);
    put_block(&mut f, PSI, GYRO_BIAS, &nav.c_bn);
    f
}

/// Noise distribution matrix `blockdiag(C_bⁿ, C_bⁿ, I, I)`.
pub fn build_g_matrix(nav: &NavState) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(STATE_DIM, STATE_DIM);
    put_block(&mut g, VEL, VEL, &nav.c_bn);
    put_block(&mut g, PSI, PSI, &nav.c_bn);
    put_block(&mut g, ACC_BIAS, ACC_BIAS, &Matrix3::identity());
    put_block(&mut g, GYRO_BIAS, GYRO_BIAS, &Matrix3::identity());
    g
}

/// Second-order transition matrix `I + F·dt + F²·dt²/2`.
pub fn discretize(f: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>, ModelError> {
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(ModelError::TimeStep(dt));
    }
    let n = f.nrows();
    let fdt = f * dt;
    Ok(DMatrix::identity(n, n) + &fdt + &fdt * &fdt * 0.5)
}

/// `Q = G·diag(q*)·Gᵀ`, symmetrized.
pub fn build_q_discrete(
    g: &DMatrix<f64>,
    qstar: &DVector<f64>,
) -> Result<DMatrix<f64>, ModelError> {
    if qstar.len() != g.ncols() {
        return Err(ModelError::Length {
            expected: g.ncols(),
            got: qstar.len(),
        });
    }
    if let Some(i) = qstar.iter().position(|q| !(*q >= 0.0) || !q.is_finite()) {
        return Err(ModelError::NegativeNoise(i));
    }
    let q = g * DMatrix::from_diagonal(qstar) * g.transpose();
    Ok((&q + q.transpose()) * 0.5)
}

/// Where the interval's process noise enters the covariance prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QPlacement {
    /// `P⁻ = Φ·P·Φᵀ + Q`.
    #[default]
    Endpoint,
    /// `P⁻ = Φ·P·Φᵀ + (Φ·Q·Φᵀ + Q)/2`, which keeps the coupling that noise
    /// injected early in the interval picks up through `Φ`.
    Trapezoidal,
}

impl QPlacement {
    pub fn effective(self, phi: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            QPlacement::Endpoint => q.clone(),
            QPlacement::Trapezoidal => {
                let m = (phi * q * phi.transpose() + q) * 0.5;
                (&m + m.transpose()) * 0.5
            }
        }
    }
}

/// Predicted body-frame velocity innovation for a hypothesized error:
/// `C_nᵇ·R(δΨ)·(vⁿ − δvⁿ) − C_nᵇ·vⁿ`.
pub fn dvl_measurement_map(err: &ErrorState12, nav: &NavState) -> Vector3<f64> {
    let c_nb = nav.c_nb();
    c_nb * (rodrigues(&err.dpsi_n) * (nav.v_n - err.dv_n)) - c_nb * nav.v_n
}

/// Adapts [`dvl_measurement_map`] to the vector interface of the UKF.
pub fn dvl_measurement_fn(nav: &NavState) -> impl Fn(&DVector<f64>) -> DVector<f64> + '_ {
    move |x| {
        let err = ErrorState12::from_slice(x.as_slice()).expect("12-dimensional error state");
        let z = dvl_measurement_map(&err, nav);
        DVector::from_column_slice(z.as_slice())
    }
}

/// Observed innovation: DVL body velocity minus the INS body velocity.
pub fn dvl_innovation(nav: &NavState, dvl_v_b: &Vector3<f64>) -> Vector3<f64> {
    dvl_v_b - nav.c_nb() * nav.v_n
}

/// First-order Jacobian of [`dvl_measurement_map`] at zero error:
/// `[−C_nᵇ, −C_nᵇ·[vⁿ×], 0, 0]`.
pub fn dvl_jacobian(nav: &NavState) -> DMatrix<f64> {
    let c_nb = nav.c_nb();
    let mut h = DMatrix::zeros(MEAS_DIM, STATE_DIM);
    h.fixed_view_mut::<3, 3>(0, VEL).copy_from(&(-c_nb));
    h.fixed_view_mut::<3, 3>(0, PSI)
        .copy_from(&(-c_nb * skew(&nav.v_n)));
    h
}

/// Default DVL noise covariance, `diag(0.02²)` (m/s)².
pub fn default_dvl_noise() -> DMatrix<f64> {
    DMatrix::identity(MEAS_DIM, MEAS_DIM) * (0.02 * 0.02)
}
