//! Scaled unscented Kalman filter over user-supplied process and measurement
//! mappings.
//!
//! The filter is generic: states are `DVector<f64>` of any dimension `n` and
//! the mappings are plain closures. Sigma points use the lower-triangular
//! Cholesky factor of `(n + λ)·P`; point `i` (and `i + n`) is the mean plus
//! (minus) column `i` of that factor.
//!
//! Weighted sums are accumulated relative to sigma point 0. With the usual
//! small `α` the zeroth mean weight is of order `-1/α²`, and centring avoids
//! the cancellation that a naive `Σ wᵢ·yᵢ` suffers from.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, FilterResult};
use crate::linalg::{all_finite, cholesky_lower, is_symmetric, min_eigenvalue, symmetrize};

/// Which expression is used for the zeroth covariance weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovWeightForm {
    /// `w₀ᶜ = λ/(n+λ) + (1 + α² + β)`.
    #[default]
    AsPrinted,
    /// `w₀ᶜ = λ/(n+λ) + (1 − α² + β)`, the form found in most references.
    Canonical,
}

/// Scaling parameters of the unscented transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtParams {
    n: usize,
    alpha: f64,
    beta: f64,
    kappa: f64,
    lambda: f64,
    form: CovWeightForm,
}

impl UtParams {
    pub const DEFAULT_ALPHA: f64 = 1e-3;
    pub const DEFAULT_BETA: f64 = 2.0;
    pub const DEFAULT_KAPPA: f64 = 0.0;

    pub fn new(n: usize, alpha: f64, beta: f64, kappa: f64) -> FilterResult<Self> {
        if n == 0 {
            return Err(FilterError::InvalidParams(
                "state dimension must be at least 1".into(),
            ));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(FilterError::InvalidParams(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !beta.is_finite() || !kappa.is_finite() {
            return Err(FilterError::InvalidParams(
                "beta and kappa must be finite".into(),
            ));
        }
        let nf = n as f64;
        let lambda = alpha * alpha * (nf + kappa) - nf;
        if nf + lambda == 0.0 {
            return Err(FilterError::InvalidParams(
                "n + lambda must be nonzero".into(),
            ));
        }
        Ok(Self {
            n,
            alpha,
            beta,
            kappa,
            lambda,
            form: CovWeightForm::AsPrinted,
        })
    }

    /// `α = 1e-3`, `β = 2`, `κ = 0`.
    pub fn standard(n: usize) -> Self {
        Self::new(
            n,
            Self::DEFAULT_ALPHA,
            Self::DEFAULT_BETA,
            Self::DEFAULT_KAPPA,
        )
        .expect("default parameters are valid for every n >= 1")
    }

    pub fn with_form(mut self, form: CovWeightForm) -> Self {
        self.form = form;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn form(&self) -> CovWeightForm {
        self.form
    }

    /// `n + λ`, the squared spread of the sigma points.
    pub fn spread(&self) -> f64 {
        self.n as f64 + self.lambda
    }
}

/// Mean and covariance weights, `2n + 1` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct UtWeights {
    pub wm: DVector<f64>,
    pub wc: DVector<f64>,
}

impl UtWeights {
    pub fn len(&self) -> usize {
        self.wm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wm.is_empty()
    }
}

pub fn compute_weights(params: &UtParams) -> FilterResult<UtWeights> {
    let spread = params.spread();
    if spread == 0.0 {
        return Err(FilterError::InvalidParams(
            "n + lambda must be nonzero".into(),
        ));
    }
    let count = 2 * params.n + 1;
    let wi = 1.0 / (2.0 * spread);
    let mut wm = DVector::from_element(count, wi);
    let mut wc = DVector::from_element(count, wi);
    let w0 = params.lambda / spread;
    let a2 = params.alpha * params.alpha;
    wm[0] = w0;
    wc[0] = match params.form {
        CovWeightForm::AsPrinted => w0 + (1.0 + a2 + params.beta),
        CovWeightForm::Canonical => w0 + (1.0 - a2 + params.beta),
    };
    Ok(UtWeights { wm, wc })
}

/// Mean and covariance of a Gaussian belief.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    /// Checks shape, symmetry (1e-10 relative) and positive definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> FilterResult<Self> {
        let state = Self { mean, cov };
        state.validate()?;
        Ok(state)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> FilterResult<()> {
        let n = self.mean.len();
        if self.cov.nrows() != n || self.cov.ncols() != n {
            return Err(FilterError::Dimension {
                what: "covariance",
                expected: n,
                got: self.cov.nrows(),
            });
        }
        if !is_symmetric(&self.cov, 1e-10) {
            return Err(FilterError::InvalidNoise(
                "covariance is not symmetric".into(),
            ));
        }
        cholesky_lower(&self.cov).map_err(|pivot| FilterError::NotPositiveDefinite { pivot })?;
        Ok(())
    }
}

/// The `2n + 1` sigma points generated from one Gaussian state.
#[derive(Debug, Clone)]
pub struct SigmaPointSet {
    pub points: Vec<DVector<f64>>,
    pub params: UtParams,
}

impl SigmaPointSet {
    /// Weighted mean and covariance of the points themselves.
    pub fn reconstruct(&self, weights: &UtWeights) -> GaussianState {
        let mean = weighted_mean(&self.points, weights);
        let cov = weighted_cov(&self.points, &mean, &self.points, &mean, weights);
        GaussianState {
            mean,
            cov: symmetrize(&cov),
        }
    }
}

pub fn generate_sigma_points(
    state: &GaussianState,
    params: &UtParams,
) -> FilterResult<SigmaPointSet> {
    let n = params.n;
    if state.mean.len() != n {
        return Err(FilterError::Dimension {
            what: "state mean",
            expected: n,
            got: state.mean.len(),
        });
    }
    if state.cov.nrows() != n || state.cov.ncols() != n {
        return Err(FilterError::Dimension {
            what: "state covariance",
            expected: n,
            got: state.cov.nrows(),
        });
    }
    let scaled = &state.cov * params.spread();
    let root =
        cholesky_lower(&scaled).map_err(|pivot| FilterError::NotPositiveDefinite { pivot })?;

    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(state.mean.clone());
    for i in 0..n {
        points.push(&state.mean + root.column(i));
    }
    for i in 0..n {
        points.push(&state.mean - root.column(i));
    }
    Ok(SigmaPointSet {
        points,
        params: *params,
    })
}

fn weighted_mean(points: &[DVector<f64>], weights: &UtWeights) -> DVector<f64> {
    let anchor = &points[0];
    let mut offset = DVector::zeros(anchor.len());
    for (p, w) in points.iter().zip(weights.wm.iter()).skip(1) {
        offset.axpy(*w, &(p - anchor), 1.0);
    }
    anchor + offset
}

fn weighted_cov(
    a: &[DVector<f64>],
    a_mean: &DVector<f64>,
    b: &[DVector<f64>],
    b_mean: &DVector<f64>,
    weights: &UtWeights,
) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(a_mean.len(), b_mean.len());
    for ((pa, pb), w) in a.iter().zip(b).zip(weights.wc.iter()) {
        let da = pa - a_mean;
        let db = pb - b_mean;
        acc.ger(*w, &da, &db, 1.0);
    }
    acc
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &'static str) -> FilterResult<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(FilterError::Dimension {
            what,
            expected: n,
            got: m.nrows(),
        });
    }
    if !all_finite(m) {
        return Err(FilterError::InvalidNoise(format!(
            "{what} has non-finite entries"
        )));
    }
    Ok(())
}

/// Propagates every sigma point through `f` and forms the predicted
/// mean and covariance, with `q` added to the latter.
pub fn time_update<F>(
    points: &SigmaPointSet,
    f: F,
    weights: &UtWeights,
    q: &DMatrix<f64>,
) -> FilterResult<GaussianState>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = points.params.n;
    check_square(q, n, "process noise")?;
    if !is_symmetric(q, 1e-10) {
        return Err(FilterError::InvalidNoise(
            "process noise is not symmetric".into(),
        ));
    }
    let mut propagated = Vec::with_capacity(points.points.len());
    for (index, p) in points.points.iter().enumerate() {
        let y = f(p);
        if y.len() != n {
            return Err(FilterError::Dimension {
                what: "process mapping output",
                expected: n,
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::Divergence { index });
        }
        propagated.push(y);
    }
    let mean = weighted_mean(&propagated, weights);
    let cov = weighted_cov(&propagated, &mean, &propagated, &mean, weights) + q;
    Ok(GaussianState {
        mean,
        cov: symmetrize(&cov),
    })
}

/// Corrects a predicted state with observation `z`.
///
/// Sigma points are regenerated from `pred` rather than reused from the
/// time update.
pub fn measurement_update<H>(
    pred: &GaussianState,
    h: H,
    weights: &UtWeights,
    r: &DMatrix<f64>,
    z: &DVector<f64>,
    params: &UtParams,
) -> FilterResult<GaussianState>
where
    H: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = z.len();
    check_square(r, m, "measurement noise")?;
    let sigma = generate_sigma_points(pred, params)?;

    let mut predicted = Vec::with_capacity(sigma.points.len());
    for (index, p) in sigma.points.iter().enumerate() {
        let zi = h(p);
        if zi.len() != m {
            return Err(FilterError::Dimension {
                what: "measurement mapping output",
                expected: m,
                got: zi.len(),
            });
        }
        if zi.iter().any(|v| !v.is_finite()) {
            return Err(FilterError::Divergence { index });
        }
        predicted.push(zi);
    }

    let z_hat = weighted_mean(&predicted, weights);
    let s = symmetrize(&(weighted_cov(&predicted, &z_hat, &predicted, &z_hat, weights) + r));
    let pxz = weighted_cov(&sigma.points, &pred.mean, &predicted, &z_hat, weights);

    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or(FilterError::SingularInnovation)?;
    if !all_finite(&s_inv) {
        return Err(FilterError::SingularInnovation);
    }
    let gain = &pxz * &s_inv;
    let mean = &pred.mean + &gain * (z - &z_hat);
    let cov = symmetrize(&(&pred.cov - &gain * &s * gain.transpose()));
    if cholesky_lower(&cov).is_err() {
        return Err(FilterError::Conditioning {
            min_eigenvalue: min_eigenvalue(&cov),
        });
    }
    Ok(GaussianState { mean, cov })
}

/// A filter session: one owner advancing a Gaussian belief through
/// alternating predictions and corrections.
#[derive(Debug, Clone)]
pub struct UnscentedFilter {
    params: UtParams,
    weights: UtWeights,
    state: GaussianState,
}

impl UnscentedFilter {
    pub fn new(state: GaussianState, params: UtParams) -> FilterResult<Self> {
        if state.dim() != params.n() {
            return Err(FilterError::Dimension {
                what: "initial state",
                expected: params.n(),
                got: state.dim(),
            });
        }
        state.validate()?;
        let weights = compute_weights(&params)?;
        Ok(Self {
            params,
            weights,
            state,
        })
    }

    pub fn state(&self) -> &GaussianState {
        &self.state
    }

    pub fn params(&self) -> &UtParams {
        &self.params
    }

    pub fn weights(&self) -> &UtWeights {
        &self.weights
    }

    pub fn predict<F>(&mut self, f: F, q: &DMatrix<f64>) -> FilterResult<()>
    where
        F: Fn(&DVector<f64>) -> DVector<f64>,
    {
        let points = generate_sigma_points(&self.state, &self.params)?;
        self.state = time_update(&points, f, &self.weights, q)?;
        Ok(())
    }

    pub fn update<H>(&mut self, h: H, r: &DMatrix<f64>, z: &DVector<f64>) -> FilterResult<()>
    where
        H: Fn(&DVector<f64>) -> DVector<f64>,
    {
        self.state = measurement_update(&self.state, h, &self.weights, r, z, &self.params)?;
        Ok(())
    }

    /// Zeroes the mean after its value has been fed back (closed loop).
    pub fn reset_mean(&mut self) {
        self.state.mean.fill(0.0);
    }
}
