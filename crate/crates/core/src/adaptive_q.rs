//! Turns regressed sensor variances into a validated process-noise
//! covariance for either filter.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::symmetrize;
use crate::model::{NoiseSpec, ACC_BIAS, GYRO_BIAS, PSI, STATE_DIM, VEL};
use crate::processnet::{ImuWindow, ProcessNetError, ProcessNetModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptiveQError {
    #[error("clamp bounds for block {block} are invalid: [{min}, {max}]")]
    Bounds {
        block: &'static str,
        min: f64,
        max: f64,
    },
    #[error("expected a {STATE_DIM}×{STATE_DIM} matrix, got {rows}×{cols}")]
    Dimension { rows: usize, cols: usize },
    #[error("tau factors must be positive and finite")]
    Tau,
}

/// Integration interval and the per-sensor rate factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TauFactors {
    pub tau: f64,
    pub tau_a: f64,
    pub tau_g: f64,
}

impl Default for TauFactors {
    fn default() -> Self {
        Self {
            tau: 0.01,
            tau_a: 1.0,
            tau_g: 1.0,
        }
    }
}

impl TauFactors {
    pub fn validate(&self) -> Result<(), AdaptiveQError> {
        if [self.tau, self.tau_a, self.tau_g]
            .iter()
            .all(|t| t.is_finite() && *t > 0.0)
        {
            Ok(())
        } else {
            Err(AdaptiveQError::Tau)
        }
    }

    /// Fixed-noise densities over a `dt` interval reproducing
    /// [`assemble_qnet`] fed with constant variances.
    pub fn static_noise(
        &self,
        accel_var: f64,
        gyro_var: f64,
        dt: f64,
    ) -> Result<NoiseSpec, crate::model::ModelError> {
        NoiseSpec::from_sensor_variances(accel_var, gyro_var, self.tau, self.tau_a, self.tau_g, dt)
    }
}

/// Diagonal blocks of the regressed process noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QNetDiag {
    pub q_v: Vector3<f64>,
    pub q_psi: Vector3<f64>,
    pub q_a: Vector3<f64>,
    pub q_g: Vector3<f64>,
    pub tau: TauFactors,
}

impl QNetDiag {
    pub fn new(acc_out: &Vector3<f64>, gyro_out: &Vector3<f64>, tau: TauFactors) -> Self {
        let q_a = acc_out * tau.tau;
        let q_g = gyro_out * tau.tau;
        Self {
            q_v: q_a * tau.tau_a,
            q_psi: q_g * tau.tau_g,
            q_a,
            q_g,
            tau,
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(STATE_DIM);
        for (offset, block) in [
            (VEL, &self.q_v),
            (PSI, &self.q_psi),
            (ACC_BIAS, &self.q_a),
            (GYRO_BIAS, &self.q_g),
        ] {
            d.rows_mut(offset, 3).copy_from(block);
        }
        d
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diagonal())
    }
}

/// 12×12 diagonal `diag(q_v, q_ψ, q_a, q_g)` before validation.
pub fn assemble_qnet(
    acc_out: &Vector3<f64>,
    gyro_out: &Vector3<f64>,
    tau: f64,
    tau_a: f64,
    tau_g: f64,
) -> DMatrix<f64> {
    QNetDiag::new(acc_out, gyro_out, TauFactors { tau, tau_a, tau_g }).matrix()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockBounds {
    pub min: f64,
    pub max: f64,
}

impl BlockBounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }
}

/// Per-block clamp limits. Orientation and gyro-bias blocks sit many
/// decades below the velocity blocks for a navigation-grade gyro, so they
/// get their own range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClampBounds {
    pub velocity: BlockBounds,
    pub orientation: BlockBounds,
    pub accel_bias: BlockBounds,
    pub gyro_bias: BlockBounds,
}

impl Default for ClampBounds {
    fn default() -> Self {
        Self {
            velocity: BlockBounds::new(1e-12, 1e2),
            orientation: BlockBounds::new(1e-18, 1e-4),
            accel_bias: BlockBounds::new(1e-12, 1e2),
            gyro_bias: BlockBounds::new(1e-18, 1e-4),
        }
    }
}

impl ClampBounds {
    pub fn uniform(min: f64, max: f64) -> Self {
        let b = BlockBounds::new(min, max);
        Self {
            velocity: b,
            orientation: b,
            accel_bias: b,
            gyro_bias: b,
        }
    }

    fn blocks(&self) -> [(&'static str, usize, BlockBounds); 4] {
        [
            ("velocity", VEL, self.velocity),
            ("orientation", PSI, self.orientation),
            ("accel_bias", ACC_BIAS, self.accel_bias),
            ("gyro_bias", GYRO_BIAS, self.gyro_bias),
        ]
    }

    pub fn validate(&self) -> Result<(), AdaptiveQError> {
        for (block, _, b) in self.blocks() {
            if !(b.min > 0.0 && b.min < b.max && b.max.is_finite()) {
                return Err(AdaptiveQError::Bounds {
                    block,
                    min: b.min,
                    max: b.max,
                });
            }
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.blocks()
            .iter()
            .map(|b| b.2.min)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.blocks().iter().map(|b| b.2.max).fold(0.0, f64::max)
    }

    fn for_index(&self, i: usize) -> BlockBounds {
        self.blocks()[i / 3].2
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClampReport {
    pub clamp_events: usize,
    pub replaced_non_finite: usize,
}

impl std::ops::AddAssign for ClampReport {
    fn add_assign(&mut self, rhs: Self) {
        self.clamp_events += rhs.clamp_events;
        self.replaced_non_finite += rhs.replaced_non_finite;
    }
}

/// Clamps each diagonal entry into its block range. Non-finite entries take
/// the matching entry of `defaults` instead. Off-diagonal entries are dropped.
pub fn validate_clamp(
    qnet: &DMatrix<f64>,
    bounds: &ClampBounds,
    defaults: &DVector<f64>,
) -> Result<(DMatrix<f64>, ClampReport), AdaptiveQError> {
    bounds.validate()?;
    if qnet.nrows() != STATE_DIM || qnet.ncols() != STATE_DIM {
        return Err(AdaptiveQError::Dimension {
            rows: qnet.nrows(),
            cols: qnet.ncols(),
        });
    }
    if defaults.len() != STATE_DIM {
        return Err(AdaptiveQError::Dimension {
            rows: defaults.len(),
            cols: 1,
        });
    }
    let mut report = ClampReport::default();
    let mut out = DVector::zeros(STATE_DIM);
    for i in 0..STATE_DIM {
        let b = bounds.for_index(i);
        let raw = qnet[(i, i)];
        let v = if raw.is_finite() {
            raw
        } else {
            report.replaced_non_finite += 1;
            defaults[i]
        };
        out[i] = if v < b.min {
            report.clamp_events += 1;
            b.min
        } else if v > b.max {
            report.clamp_events += 1;
            b.max
        } else {
            v
        };
    }
    Ok((DMatrix::from_diagonal(&out), report))
}

/// `G·Q·Gᵀ`, symmetrized.
pub fn adapt_q(g: &DMatrix<f64>, qnet_validated: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(g * qnet_validated * g.transpose()))
}

/// Anything that maps an inertial window to three per-axis variances.
pub trait VarianceOracle: Send + Sync {
    fn predict(&self, window: &ImuWindow) -> Result<Vector3<f64>, ProcessNetError>;
}

impl VarianceOracle for ProcessNetModel {
    fn predict(&self, window: &ImuWindow) -> Result<Vector3<f64>, ProcessNetError> {
        self.forward(window).map(Vector3::from)
    }
}

/// Emits the same variances for every window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantOracle(pub Vector3<f64>);

impl VarianceOracle for ConstantOracle {
    fn predict(&self, _window: &ImuWindow) -> Result<Vector3<f64>, ProcessNetError> {
        Ok(self.0)
    }
}

/// The full pipeline: regress, assemble, validate, rotate.
#[derive(Clone)]
pub struct AdaptiveQ {
    pub accel: Arc<dyn VarianceOracle>,
    pub gyro: Arc<dyn VarianceOracle>,
    pub tau: TauFactors,
    pub bounds: ClampBounds,
    /// Replacement diagonal for non-finite regressor output.
    pub defaults: DVector<f64>,
}

impl AdaptiveQ {
    pub fn new(
        accel: Arc<dyn VarianceOracle>,
        gyro: Arc<dyn VarianceOracle>,
        tau: TauFactors,
        bounds: ClampBounds,
        defaults: DVector<f64>,
    ) -> Result<Self, AdaptiveQError> {
        tau.validate()?;
        bounds.validate()?;
        if defaults.len() != STATE_DIM {
            return Err(AdaptiveQError::Dimension {
                rows: defaults.len(),
                cols: 1,
            });
        }
        Ok(Self {
            accel,
            gyro,
            tau,
            bounds,
            defaults,
        })
    }

    /// A regressor fault counts as non-finite output and falls back to the
    /// block defaults.
    pub fn evaluate(
        &self,
        accel_window: &ImuWindow,
        gyro_window: &ImuWindow,
        g: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, ClampReport), AdaptiveQError> {
        let nan = Vector3::repeat(f64::NAN);
        let acc = self.accel.predict(accel_window).unwrap_or(nan);
        let gyr = self.gyro.predict(gyro_window).unwrap_or(nan);
        let raw = QNetDiag::new(&acc, &gyr, self.tau).matrix();
        let (validated, report) = validate_clamp(&raw, &self.bounds, &self.defaults)?;
        Ok((adapt_q(g, &validated), report))
    }
}

impl std::fmt::Debug for AdaptiveQ {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdaptiveQ")
            .field("tau", &self.tau)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}
