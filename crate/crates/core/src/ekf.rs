//! Error-state extended Kalman filter, the first-order comparator to the UKF.
//!
//! Shares the error model and adaptive noise pipeline with the unscented
//! filter so that comparisons isolate the estimator itself.

use nalgebra::{DMatrix, DVector};

use crate::error::{FilterError, FilterResult};
use crate::linalg::{all_finite, cholesky_lower, is_symmetric, min_eigenvalue, symmetrize};
use crate::ukf::GaussianState;

#[derive(Debug, Clone)]
pub struct EkfSession {
    state: GaussianState,
}

impl EkfSession {
    pub fn new(state: GaussianState) -> FilterResult<Self> {
        state.validate()?;
        Ok(Self { state })
    }

    pub fn state(&self) -> &GaussianState {
        &self.state
    }

    pub fn reset_mean(&mut self) {
        self.state.mean.fill(0.0);
    }

    /// `x ← Φ·x`, `P ← Φ·P·Φᵀ + Q`.
    pub fn predict(&mut self, phi: &DMatrix<f64>, q: &DMatrix<f64>) -> FilterResult<()> {
        let n = self.state.dim();
        for (m, what) in [(phi, "transition matrix"), (q, "process noise")] {
            if m.nrows() != n || m.ncols() != n {
                return Err(FilterError::Dimension {
                    what,
                    expected: n,
                    got: m.nrows(),
                });
            }
        }
        if !all_finite(q) || !is_symmetric(q, 1e-10) {
            return Err(FilterError::InvalidNoise(
                "process noise must be finite and symmetric".into(),
            ));
        }
        let mean = phi * &self.state.mean;
        let cov = symmetrize(&(phi * &self.state.cov * phi.transpose() + q));
        if cholesky_lower(&cov).is_err() {
            return Err(FilterError::Conditioning {
                min_eigenvalue: min_eigenvalue(&cov),
            });
        }
        self.state = GaussianState { mean, cov };
        Ok(())
    }

    /// Joseph-form correction with measurement Jacobian `h_jac`.
    pub fn update(
        &mut self,
        h_jac: &DMatrix<f64>,
        r: &DMatrix<f64>,
        z: &DVector<f64>,
    ) -> FilterResult<()> {
        let n = self.state.dim();
        let m = z.len();
        if h_jac.nrows() != m || h_jac.ncols() != n {
            return Err(FilterError::Dimension {
                what: "measurement Jacobian",
                expected: m * n,
                got: h_jac.nrows() * h_jac.ncols(),
            });
        }
        if r.nrows() != m || r.ncols() != m || !all_finite(r) {
            return Err(FilterError::InvalidNoise(
                "measurement noise has wrong shape or non-finite entries".into(),
            ));
        }
        let p = &self.state.cov;
        let s = symmetrize(&(h_jac * p * h_jac.transpose() + r));
        let s_inv = s.try_inverse().ok_or(FilterError::SingularInnovation)?;
        if !all_finite(&s_inv) {
            return Err(FilterError::SingularInnovation);
        }
        let gain = p * h_jac.transpose() * s_inv;
        let innovation = z - h_jac * &self.state.mean;
        let mean = &self.state.mean + &gain * innovation;
        let i_kh = DMatrix::<f64>::identity(n, n) - &gain * h_jac;
        let cov = symmetrize(&(&i_kh * p * i_kh.transpose() + &gain * r * gain.transpose()));
        if cholesky_lower(&cov).is_err() {
            return Err(FilterError::Conditioning {
                min_eigenvalue: min_eigenvalue(&cov),
            });
        }
        self.state = GaussianState { mean, cov };
        Ok(())
    }
}

/// Functional form of [`EkfSession::predict`].
pub fn ekf_predict(
    session: &EkfSession,
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> FilterResult<EkfSession> {
    let mut next = session.clone();
    next.predict(phi, q)?;
    Ok(next)
}

/// Functional form of [`EkfSession::update`].
pub fn ekf_update(
    session: &EkfSession,
    h_jac: &DMatrix<f64>,
    r: &DMatrix<f64>,
    z: &DVector<f64>,
) -> FilterResult<EkfSession> {
    let mut next = session.clone();
    next.update(h_jac, r, z)?;
    Ok(next)
}
