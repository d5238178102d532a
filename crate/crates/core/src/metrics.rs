//! Velocity and misalignment error statistics over Monte Carlo runs.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::linalg::cholesky_lower;
use crate::strapdown::euler_zyx;

/// Samples whose extracted pitch exceeds this are flagged (rad).
pub const GIMBAL_LIMIT: f64 = 89.9 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no samples")]
    Empty,
    #[error("run {run} has {got} steps, expected {expected}")]
    Length {
        run: usize,
        expected: usize,
        got: usize,
    },
    #[error("metric inputs must be nonnegative and finite")]
    Domain,
    #[error("covariance is not positive definite")]
    Covariance,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct MetersPerSecond(pub f64);

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Radians(pub f64);

impl fmt::Display for MetersPerSecond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} m/s", self.0)
    }
}

impl fmt::Display for Radians {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} rad", self.0)
    }
}

/// Per-step errors of one run. `dpsi` is `None` where the sample was
/// flagged near gimbal lock.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunErrorSeries {
    pub dv: Vec<Vector3<f64>>,
    pub dpsi: Vec<Option<Vector3<f64>>>,
}

impl RunErrorSeries {
    pub fn len(&self) -> usize {
        self.dv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dv.is_empty()
    }
}

/// Sum by recursive halving; the tree shape depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn check_lengths(runs: &[RunErrorSeries]) -> Result<usize, MetricError> {
    let n = runs.first().map(|r| r.len()).ok_or(MetricError::Empty)?;
    if n == 0 {
        return Err(MetricError::Empty);
    }
    for (run, r) in runs.iter().enumerate() {
        if r.dv.len() != n || r.dpsi.len() != n {
            return Err(MetricError::Length {
                run,
                expected: n,
                got: r.dv.len().min(r.dpsi.len()),
            });
        }
    }
    Ok(n)
}

/// `√(Σᵢ Σⱼ ‖δvᵢ(j)‖² / (m·n))`.
pub fn vrmse(runs: &[RunErrorSeries]) -> Result<MetersPerSecond, MetricError> {
    let n = runs.first().map(|r| r.dv.len()).ok_or(MetricError::Empty)?;
    if n == 0 {
        return Err(MetricError::Empty);
    }
    if let Some((run, r)) = runs.iter().enumerate().find(|(_, r)| r.dv.len() != n) {
        return Err(MetricError::Length {
            run,
            expected: n,
            got: r.dv.len(),
        });
    }
    let sq: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.dv.iter().map(|v| v.norm_squared()))
        .collect();
    Ok(MetersPerSecond(
        (pairwise_sum(&sq) / sq.len() as f64).sqrt(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mrmse {
    pub value: Radians,
    /// Samples skipped because of the gimbal flag.
    pub excluded: usize,
}

/// Same reduction as [`vrmse`] over misalignment angle triples, skipping
/// flagged samples.
pub fn mrmse(runs: &[RunErrorSeries]) -> Result<Mrmse, MetricError> {
    check_lengths(runs)?;
    let total: usize = runs.iter().map(|r| r.dpsi.len()).sum();
    let sq: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.dpsi.iter().flatten().map(|v| v.norm_squared()))
        .collect();
    if sq.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(Mrmse {
        value: Radians((pairwise_sum(&sq) / sq.len() as f64).sqrt()),
        excluded: total - sq.len(),
    })
}

/// Quadratic mean of two per-track values.
pub fn track_average(
    v5: MetersPerSecond,
    v6: MetersPerSecond,
) -> Result<MetersPerSecond, MetricError> {
    rms_of(&[v5.0, v6.0]).map(MetersPerSecond)
}

/// Quadratic mean of any number of nonnegative per-track values.
pub fn rms_of(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(MetricError::Domain);
    }
    if values.windows(2).all(|w| w[0] == w[1]) {
        return Ok(values[0]);
    }
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    Ok((pairwise_sum(&sq) / values.len() as f64).sqrt())
}

/// `(yaw, pitch, roll)` of `Ĉ·Cᵀ`, or `None` near gimbal lock.
pub fn misalignment_angles(
    c_bn_est: &Matrix3<f64>,
    c_bn_truth: &Matrix3<f64>,
) -> Option<Vector3<f64>> {
    let e = euler_zyx(&(c_bn_est * c_bn_truth.transpose()));
    (e[1].abs() <= GIMBAL_LIMIT).then_some(e)
}

/// Normalized estimation error squared `eᵀ·P⁻¹·e`.
pub fn nees(err: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64, MetricError> {
    let l = cholesky_lower(cov).map_err(|_| MetricError::Covariance)?;
    let y = l
        .solve_lower_triangular(err)
        .ok_or(MetricError::Covariance)?;
    Ok(y.norm_squared())
}
