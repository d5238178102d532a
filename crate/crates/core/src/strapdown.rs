//! Strapdown velocity/attitude mechanization in a local-level NED frame.
//!
//! Earth rotation and transport rate are neglected and gravity is a constant
//! vector, which is adequate for missions of a few minutes.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ErrorState12;

/// Default NED gravity vector (m/s²).
pub const GRAVITY_NED: Vector3<f64> = Vector3::new(0.0, 0.0, 9.7963);

/// Largest misalignment correction accepted in one closed-loop reset (rad).
pub const MAX_ATTITUDE_CORRECTION: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrapdownError {
    #[error("rejected input: {0}")]
    InvalidInput(String),
    #[error("implausible attitude correction of {angle} rad")]
    ImplausibleCorrection { angle: f64 },
}

/// Navigation solution carried by the mechanization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    /// Body-to-navigation direction cosine matrix.
    pub c_bn: Matrix3<f64>,
    /// Velocity in the navigation frame, north/east/down (m/s).
    pub v_n: Vector3<f64>,
    /// Accelerometer bias estimate removed from every sample (m/s²).
    pub b_a_hat: Vector3<f64>,
    /// Gyroscope bias estimate removed from every sample (rad/s).
    pub b_g_hat: Vector3<f64>,
    pub t: f64,
}

impl NavState {
    pub fn new(c_bn: Matrix3<f64>, v_n: Vector3<f64>, t: f64) -> Self {
        Self {
            c_bn,
            v_n,
            b_a_hat: Vector3::zeros(),
            b_g_hat: Vector3::zeros(),
            t,
        }
    }

    pub fn from_euler(yaw: f64, pitch: f64, roll: f64, v_n: Vector3<f64>, t: f64) -> Self {
        Self::new(dcm_from_euler(yaw, pitch, roll), v_n, t)
    }

    /// Navigation-to-body DCM, the transpose of `c_bn`.
    pub fn c_nb(&self) -> Matrix3<f64> {
        self.c_bn.transpose()
    }

    /// `(yaw, pitch, roll)` of `c_bn`.
    pub fn euler(&self) -> Vector3<f64> {
        euler_zyx(&self.c_bn)
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.c_bn * self.c_bn.transpose() - Matrix3::identity()).amax()
    }
}

/// One inertial sample in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Specific force (m/s²).
    pub f_b: Vector3<f64>,
    /// Angular rate (rad/s).
    pub w_b: Vector3<f64>,
    pub t: f64,
}

/// Exact rotation matrix `exp([φ×])` of a rotation vector.
pub fn rodrigues(phi: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*phi).into_inner()
}

/// Rotation vector of a rotation matrix (inverse of [`rodrigues`]).
pub fn rotation_vector(c: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*c).scaled_axis()
}

/// `Rz(yaw)·Ry(pitch)·Rx(roll)`.
pub fn dcm_from_euler(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    Rotation3::from_euler_angles(roll, pitch, yaw).into_inner()
}

/// Z-Y-X Euler angles `(yaw, pitch, roll)` of a body-to-navigation DCM.
pub fn euler_zyx(c: &Matrix3<f64>) -> Vector3<f64> {
    let yaw = c[(1, 0)].atan2(c[(0, 0)]);
    let pitch = (-c[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = c[(2, 1)].atan2(c[(2, 2)]);
    Vector3::new(yaw, pitch, roll)
}

/// One first-order polar step `C ← C·(3I − CᵀC)/2`; converges quadratically
/// toward the nearest rotation.
pub fn orthonormalize(c: &Matrix3<f64>) -> Matrix3<f64> {
    let ctc = c.transpose() * c;
    c * (Matrix3::identity() * 3.0 - ctc) * 0.5
}

fn finite3(v: &Vector3<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integrates one IMU sample over `dt`.
///
/// Velocity uses the attitude at the start of the step, so a stream built
/// from exact start-of-step kinematics mechanizes back to the same states.
pub fn mechanize_step(
    nav: &NavState,
    imu: &ImuSample,
    dt: f64,
    gravity_n: &Vector3<f64>,
) -> Result<NavState, StrapdownError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(StrapdownError::InvalidInput(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if !finite3(&imu.f_b) || !finite3(&imu.w_b) {
        return Err(StrapdownError::InvalidInput(format!(
            "non-finite IMU sample at t = {}",
            imu.t
        )));
    }
    let omega = imu.w_b - nav.b_g_hat;
    let force = imu.f_b - nav.b_a_hat;
    let v_n = nav.v_n + nav.c_bn * force * dt + gravity_n * dt;
    let c_bn = orthonormalize(&(nav.c_bn * rodrigues(&(omega * dt))));
    Ok(NavState {
        c_bn,
        v_n,
        b_a_hat: nav.b_a_hat,
        b_g_hat: nav.b_g_hat,
        t: nav.t + dt,
    })
}

/// Feeds an estimated error state back into the navigation solution.
///
/// Error convention: `δv = v̂ − v`, `Ĉ = R(δΨ)·C` (misalignment expressed in
/// the navigation frame), and the bias sub-vectors are residual biases that
/// are still present after compensation. The filter mean must be zeroed by
/// the caller afterwards.
pub fn apply_error_correction(
    nav: &NavState,
    err: &ErrorState12,
) -> Result<NavState, StrapdownError> {
    if !err.is_finite() {
        return Err(StrapdownError::InvalidInput(
            "non-finite error state".into(),
        ));
    }
    let angle = err.dpsi_n.norm();
    if angle > MAX_ATTITUDE_CORRECTION {
        return Err(StrapdownError::ImplausibleCorrection { angle });
    }
    if err.is_zero() {
        return Ok(nav.clone());
    }
    Ok(NavState {
        c_bn: orthonormalize(&(rodrigues(&-err.dpsi_n) * nav.c_bn)),
        v_n: nav.v_n - err.dv_n,
        b_a_hat: nav.b_a_hat + err.ba,
        b_g_hat: nav.b_g_hat + err.bg,
        t: nav.t,
    })
}

/// Inverse of [`apply_error_correction`]: corrupts a navigation state by a
/// known error. Used to seed filters with initial errors.
pub fn inject_error(nav: &NavState, err: &ErrorState12) -> NavState {
    NavState {
        c_bn: rodrigues(&err.dpsi_n) * nav.c_bn,
        v_n: nav.v_n + err.dv_n,
        b_a_hat: nav.b_a_hat - err.ba,
        b_g_hat: nav.b_g_hat - err.bg,
        t: nav.t,
    }
}
