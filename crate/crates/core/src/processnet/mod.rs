//! ProcessNet: a small 1D convolutional regressor from a 100-sample,
//! 3-channel inertial window to three per-axis noise variances.
//!
//! Layer chain (positions × channels):
//!
//! ```text
//! input 100×3 ─conv3+ReLU→ 100×30 ─conv3+ReLU→ 100×30 ─avgpool2→ 50×30
//!   ─conv3+ReLU→ 50×30 ─conv3+ReLU→ 50×30 ─maxpool2→ 25×30 ─flatten→ 750 ─linear→ 3
//! ```
//!
//! Every convolution has kernel length 3, stride 1, and one zero row of
//! padding on each side, computed as a cross-correlation. The flatten is
//! position-major: element `i·30 + k` holds position `i`, channel `k`.

mod io;
mod train;

pub use io::{
    from_json_str, load_weights, save_weights, to_json, WeightError, WEIGHT_FORMAT_VERSION,
};
pub use train::{mse_loss, train, LossError, TrainConfig, TrainError, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WINDOW: usize = 100;
pub const IN_CHANNELS: usize = 3;
pub const CHANNELS: usize = 30;
pub const KERNEL: usize = 3;
pub const OUTPUTS: usize = 3;
pub const FLAT: usize = (WINDOW / 4) * CHANNELS;

/// Gyroscope input/output scaling; keeps activations and targets O(0.01–1)
/// for rad/s readings and (rad/s)² variances.
pub const GYRO_IN_SCALE: f64 = 1e4;
pub const GYRO_OUT_SCALE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProcessNetError {
    #[error("window must be {WINDOW}×{IN_CHANNELS}, got {0} samples")]
    WindowShape(usize),
    #[error("window contains a non-finite entry at sample {0}")]
    NonFiniteInput(usize),
    #[error("non-finite activation in layer {layer}")]
    NumericFault { layer: &'static str },
}

/// One 100×3 block of inertial samples, stored position-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    data: Vec<f64>,
}

impl ImuWindow {
    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self, ProcessNetError> {
        if rows.len() != WINDOW {
            return Err(ProcessNetError::WindowShape(rows.len()));
        }
        if let Some(i) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(ProcessNetError::NonFiniteInput(i));
        }
        Ok(Self {
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn zeros() -> Self {
        Self {
            data: vec![0.0; WINDOW * IN_CHANNELS],
        }
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * IN_CHANNELS + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// How the first pooling stage combines a pair `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AvgPoolForm {
    /// `0.5·(a + b)`.
    #[default]
    Mean,
    /// `0.5·a + b`, the literal unparenthesized expression.
    AsPrinted,
}

impl AvgPoolForm {
    fn coefficients(self) -> (f64, f64) {
        match self {
            AvgPoolForm::Mean => (0.5, 0.5),
            AvgPoolForm::AsPrinted => (0.5, 1.0),
        }
    }
}

/// Learnable tensors. Convolution kernels are stored tap-major
/// (`[tap][in][out]`) for contiguous inner loops; [`ParamSet::theta`]
/// exposes the `Θ(in, out, tap)` indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub theta1: Vec<f64>,
    pub b1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub b2: Vec<f64>,
    pub theta3: Vec<f64>,
    pub b3: Vec<f64>,
    pub theta4: Vec<f64>,
    pub b4: Vec<f64>,
    /// `[position·channel][output]`, 750×3.
    pub theta5: Vec<f64>,
    pub b5: Vec<f64>,
}

pub const PARAM_NAMES: [&str; 10] = [
    "theta1", "b1", "theta2", "b2", "theta3", "b3", "theta4", "b4", "theta5", "b5",
];

fn conv_in_channels(layer: usize) -> usize {
    if layer == 1 {
        IN_CHANNELS
    } else {
        CHANNELS
    }
}

/// Flat index of `Θ_layer(j, k, t)` in the tap-major layout.
pub fn kernel_index(layer: usize, j: usize, k: usize, t: usize) -> usize {
    (t * conv_in_channels(layer) + j) * CHANNELS + k
}

impl ParamSet {
    pub fn zeros() -> Self {
        let k = |layer| vec![0.0; KERNEL * conv_in_channels(layer) * CHANNELS];
        Self {
            theta1: k(1),
            b1: vec![0.0; CHANNELS],
            theta2: k(2),
            b2: vec![0.0; CHANNELS],
            theta3: k(3),
            b3: vec![0.0; CHANNELS],
            theta4: k(4),
            b4: vec![0.0; CHANNELS],
            theta5: vec![0.0; FLAT * OUTPUTS],
            b5: vec![0.0; OUTPUTS],
        }
    }

    pub fn slices(&self) -> [&[f64]; 10] {
        [
            &self.theta1,
            &self.b1,
            &self.theta2,
            &self.b2,
            &self.theta3,
            &self.b3,
            &self.theta4,
            &self.b4,
            &self.theta5,
            &self.b5,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut Vec<f64>; 10] {
        [
            &mut self.theta1,
            &mut self.b1,
            &mut self.theta2,
            &mut self.b2,
            &mut self.theta3,
            &mut self.b3,
            &mut self.theta4,
            &mut self.b4,
            &mut self.theta5,
            &mut self.b5,
        ]
    }

    pub fn kernel(&self, layer: usize) -> &[f64] {
        match layer {
            1 => &self.theta1,
            2 => &self.theta2,
            3 => &self.theta3,
            4 => &self.theta4,
            _ => panic!("convolution layers are numbered 1..=4"),
        }
    }

    pub fn conv_bias(&self, layer: usize) -> &[f64] {
        match layer {
            1 => &self.b1,
            2 => &self.b2,
            3 => &self.b3,
            4 => &self.b4,
            _ => panic!("convolution layers are numbered 1..=4"),
        }
    }

    /// `Θ_layer(j, k, t)`: input channel `j`, output channel `k`, tap `t`.
    pub fn theta(&self, layer: usize, j: usize, k: usize, t: usize) -> f64 {
        self.kernel(layer)[kernel_index(layer, j, k, t)]
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += a·other`, tensor by tensor.
    pub fn axpy(&mut self, a: f64, other: &ParamSet) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Network weights plus the input/output scale factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessNetModel {
    pub params: ParamSet,
    pub in_scale: f64,
    pub out_scale: f64,
    pub pool: AvgPoolForm,
}

impl ProcessNetModel {
    /// Fan-in scaled uniform kernels, zero biases.
    pub fn new(seed: u64, in_scale: f64, out_scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::zeros();
        for (layer, tensor) in [
            (1usize, &mut params.theta1),
            (2, &mut params.theta2),
            (3, &mut params.theta3),
            (4, &mut params.theta4),
        ] {
            let bound = 1.0 / ((conv_in_channels(layer) * KERNEL) as f64).sqrt();
            tensor
                .iter_mut()
                .for_each(|w| *w = rng.random_range(-bound..bound));
        }
        let bound = 1.0 / (FLAT as f64).sqrt();
        params
            .theta5
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound..bound));
        Self {
            params,
            in_scale,
            out_scale,
            pool: AvgPoolForm::Mean,
        }
    }

    pub fn accelerometer(seed: u64) -> Self {
        Self::new(seed, 1.0, 1.0)
    }

    pub fn gyroscope(seed: u64) -> Self {
        Self::new(seed, GYRO_IN_SCALE, GYRO_OUT_SCALE)
    }

    pub fn zeros(in_scale: f64, out_scale: f64) -> Self {
        Self {
            params: ParamSet::zeros(),
            in_scale,
            out_scale,
            pool: AvgPoolForm::Mean,
        }
    }

    pub fn forward(&self, window: &ImuWindow) -> Result<[f64; OUTPUTS], ProcessNetError> {
        Ok(self.forward_cached(window)?.output)
    }

    /// Forward pass keeping every intermediate needed by [`Self::backward`].
    pub fn forward_cached(&self, window: &ImuWindow) -> Result<Activations, ProcessNetError> {
        let p = &self.params;
        let input: Vec<f64> = window.data.iter().map(|v| v * self.in_scale).collect();
        let l1 = conv_relu(&input, WINDOW, IN_CHANNELS, &p.theta1, &p.b1);
        check_finite(&l1, "l1")?;
        let l2 = conv_relu(&l1, WINDOW, CHANNELS, &p.theta2, &p.b2);
        check_finite(&l2, "l2")?;
        let l3 = avg_pool(&l2, WINDOW, self.pool);
        let l4 = conv_relu(&l3, WINDOW / 2, CHANNELS, &p.theta3, &p.b3);
        check_finite(&l4, "l4")?;
        let l5 = conv_relu(&l4, WINDOW / 2, CHANNELS, &p.theta4, &p.b4);
        check_finite(&l5, "l5")?;
        let (l6, argmax) = max_pool(&l5, WINDOW / 2);
        debug_assert_eq!(l6.len(), FLAT);

        let mut raw = [0.0; OUTPUTS];
        for (o, r) in raw.iter_mut().enumerate() {
            *r = p.b5[o];
        }
        for (pos, x) in l6.iter().enumerate() {
            if *x != 0.0 {
                let w = &p.theta5[pos * OUTPUTS..(pos + 1) * OUTPUTS];
                for o in 0..OUTPUTS {
                    raw[o] += x * w[o];
                }
            }
        }
        let output = raw.map(|r| r * self.out_scale);
        if output.iter().any(|v| !v.is_finite()) {
            return Err(ProcessNetError::NumericFault { layer: "output" });
        }
        Ok(Activations {
            input,
            l1,
            l2,
            l3,
            l4,
            l5,
            l6,
            argmax,
            raw,
            output,
        })
    }

    /// Reverse-mode gradient of `upstream · output` with respect to every
    /// parameter. ReLU has zero slope at zero; max-pool ties route to the
    /// first element of the pair.
    pub fn backward(&self, acts: &Activations, upstream: &[f64; OUTPUTS]) -> ParamSet {
        let p = &self.params;
        let mut g = ParamSet::zeros();
        let d_raw = upstream.map(|u| u * self.out_scale);
        g.b5.copy_from_slice(&d_raw);

        let mut d_l6 = vec![0.0; FLAT];
        for (pos, d) in d_l6.iter_mut().enumerate() {
            let x = acts.l6[pos];
            let w = &p.theta5[pos * OUTPUTS..(pos + 1) * OUTPUTS];
            let gw = &mut g.theta5[pos * OUTPUTS..(pos + 1) * OUTPUTS];
            let mut acc = 0.0;
            for o in 0..OUTPUTS {
                gw[o] = x * d_raw[o];
                acc += w[o] * d_raw[o];
            }
            *d = acc;
        }

        let half = WINDOW / 2;
        let mut d_l5 = vec![0.0; half * CHANNELS];
        for i in 0..WINDOW / 4 {
            for k in 0..CHANNELS {
                let src = 2 * i + acts.argmax[i * CHANNELS + k] as usize;
                d_l5[src * CHANNELS + k] = d_l6[i * CHANNELS + k];
            }
        }
        relu_mask(&mut d_l5, &acts.l5);
        let d_l4 = conv_backward(
            &acts.l4,
            half,
            CHANNELS,
            &p.theta4,
            &d_l5,
            &mut g.theta4,
            &mut g.b4,
            true,
        );
        let mut d_l4 = d_l4.expect("input gradient requested");
        relu_mask(&mut d_l4, &acts.l4);
        let d_l3 = conv_backward(
            &acts.l3,
            half,
            CHANNELS,
            &p.theta3,
            &d_l4,
            &mut g.theta3,
            &mut g.b3,
            true,
        )
        .expect("input gradient requested");

        let (ca, cb) = self.pool.coefficients();
        let mut d_l2 = vec![0.0; WINDOW * CHANNELS];
        for i in 0..half {
            for k in 0..CHANNELS {
                let d = d_l3[i * CHANNELS + k];
                d_l2[(2 * i) * CHANNELS + k] = ca * d;
                d_l2[(2 * i + 1) * CHANNELS + k] = cb * d;
            }
        }
        relu_mask(&mut d_l2, &acts.l2);
        let mut d_l1 = conv_backward(
            &acts.l1,
            WINDOW,
            CHANNELS,
            &p.theta2,
            &d_l2,
            &mut g.theta2,
            &mut g.b2,
            true,
        )
        .expect("input gradient requested");
        relu_mask(&mut d_l1, &acts.l1);
        conv_backward(
            &acts.input,
            WINDOW,
            IN_CHANNELS,
            &p.theta1,
            &d_l1,
            &mut g.theta1,
            &mut g.b1,
            false,
        );
        g
    }
}

/// Cached intermediates of one forward pass, all position-major.
#[derive(Debug, Clone)]
pub struct Activations {
    /// Scaled input, 100×3.
    pub input: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub l3: Vec<f64>,
    pub l4: Vec<f64>,
    pub l5: Vec<f64>,
    /// Max-pooled features; also the flattened 750-vector.
    pub l6: Vec<f64>,
    /// 0 or 1: which element of each pooled pair won.
    pub argmax: Vec<u8>,
    /// Linear head output before `out_scale`.
    pub raw: [f64; OUTPUTS],
    pub output: [f64; OUTPUTS],
}

impl Activations {
    /// `(positions, channels)` of each stage, input first.
    pub fn shape_trace(&self) -> Vec<(usize, usize)> {
        vec![
            (self.input.len() / IN_CHANNELS, IN_CHANNELS),
            (self.l1.len() / CHANNELS, CHANNELS),
            (self.l2.len() / CHANNELS, CHANNELS),
            (self.l3.len() / CHANNELS, CHANNELS),
            (self.l4.len() / CHANNELS, CHANNELS),
            (self.l5.len() / CHANNELS, CHANNELS),
            (self.l6.len() / CHANNELS, CHANNELS),
            (self.l6.len(), 1),
            (self.output.len(), 1),
        ]
    }
}

fn check_finite(v: &[f64], layer: &'static str) -> Result<(), ProcessNetError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ProcessNetError::NumericFault { layer })
    }
}

fn conv_relu(input: &[f64], len: usize, in_ch: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(input.len(), len * in_ch);
    debug_assert_eq!(w.len(), KERNEL * in_ch * CHANNELS);
    let mut out = vec![0.0; len * CHANNELS];
    for i in 0..len {
        let row = &mut out[i * CHANNELS..(i + 1) * CHANNELS];
        row.copy_from_slice(b);
        for t in 0..KERNEL {
            // Padded row i + t maps to unpadded row i + t - 1.
            let Some(src) = (i + t).checked_sub(1).filter(|s| *s < len) else {
                continue;
            };
            let x_row = &input[src * in_ch..(src + 1) * in_ch];
            for (j, x) in x_row.iter().enumerate() {
                if *x == 0.0 {
                    continue;
                }
                let wk = &w[(t * in_ch + j) * CHANNELS..(t * in_ch + j + 1) * CHANNELS];
                for (o, wv) in row.iter_mut().zip(wk) {
                    *o += x * wv;
                }
            }
        }
        for o in row.iter_mut() {
            if *o < 0.0 {
                *o = 0.0;
            }
        }
    }
    out
}

/// Accumulates kernel and bias gradients for pre-activation gradient `dz`
/// and optionally returns the gradient with respect to the layer input.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    len: usize,
    in_ch: usize,
    w: &[f64],
    dz: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let mut d_in = want_input.then(|| vec![0.0; len * in_ch]);
    for i in 0..len {
        let dz_row = &dz[i * CHANNELS..(i + 1) * CHANNELS];
        if dz_row.iter().all(|d| *d == 0.0) {
            continue;
        }
        for (g, d) in gb.iter_mut().zip(dz_row) {
            *g += d;
        }
        for t in 0..KERNEL {
            let Some(src) = (i + t).checked_sub(1).filter(|s| *s < len) else {
                continue;
            };
            for j in 0..in_ch {
                let base = (t * in_ch + j) * CHANNELS;
                let x = input[src * in_ch + j];
                let wk = &w[base..base + CHANNELS];
                let gwk = &mut gw[base..base + CHANNELS];
                let mut acc = 0.0;
                for k in 0..CHANNELS {
                    gwk[k] += x * dz_row[k];
                    acc += wk[k] * dz_row[k];
                }
                if let Some(d) = d_in.as_mut() {
                    d[src * in_ch + j] += acc;
                }
            }
        }
    }
    d_in
}

fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn avg_pool(input: &[f64], len: usize, form: AvgPoolForm) -> Vec<f64> {
    let (ca, cb) = form.coefficients();
    let mut out = vec![0.0; (len / 2) * CHANNELS];
    for i in 0..len / 2 {
        for k in 0..CHANNELS {
            out[i * CHANNELS + k] =
                ca * input[(2 * i) * CHANNELS + k] + cb * input[(2 * i + 1) * CHANNELS + k];
        }
    }
    out
}

fn max_pool(input: &[f64], len: usize) -> (Vec<f64>, Vec<u8>) {
    let mut out = vec![0.0; (len / 2) * CHANNELS];
    let mut arg = vec![0u8; (len / 2) * CHANNELS];
    for i in 0..len / 2 {
        for k in 0..CHANNELS {
            let a = input[(2 * i) * CHANNELS + k];
            let b = input[(2 * i + 1) * CHANNELS + k];
            let idx = i * CHANNELS + k;
            if b > a {
                out[idx] = b;
                arg[idx] = 1;
            } else {
                out[idx] = a;
            }
        }
    }
    (out, arg)
}
