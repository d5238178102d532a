#![allow(dead_code)]

use anukf::processnet::{
    ImuWindow, ParamSet, ProcessNetModel, CHANNELS, KERNEL, PARAM_NAMES, WINDOW,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Grid = Vec<Vec<f64>>;

#[allow(clippy::needless_range_loop)]
fn conv_relu(x: &Grid, p: &ParamSet, layer: usize, bias: &[f64]) -> Grid {
    let len = x.len();
    let in_ch = x[0].len();
    let mut out = vec![vec![0.0; CHANNELS]; len];
    for i in 0..len {
        for k in 0..CHANNELS {
            let mut s = bias[k];
            for t in 0..KERNEL {
                let src = i as isize + t as isize - 1;
                if src < 0 || src >= len as isize {
                    continue;
                }
                for j in 0..in_ch {
                    s += x[src as usize][j] * p.theta(layer, j, k, t);
                }
            }
            out[i][k] = s.max(0.0);
        }
    }
    out
}

/// Straight-line reference for the regressor, one loop per formula.
pub fn naive_forward(model: &ProcessNetModel, w: &ImuWindow) -> [f64; 3] {
    let p = &model.params;
    let x: Grid = (0..WINDOW)
        .map(|i| (0..3).map(|c| w.get(i, c) * model.in_scale).collect())
        .collect();
    let l1 = conv_relu(&x, p, 1, &p.b1);
    let l2 = conv_relu(&l1, p, 2, &p.b2);
    let l3: Grid = (0..WINDOW / 2)
        .map(|i| {
            (0..CHANNELS)
                .map(|k| 0.5 * (l2[2 * i][k] + l2[2 * i + 1][k]))
                .collect()
        })
        .collect();
    let l4 = conv_relu(&l3, p, 3, &p.b3);
    let l5 = conv_relu(&l4, p, 4, &p.b4);
    let l6: Grid = (0..WINDOW / 4)
        .map(|i| {
            (0..CHANNELS)
                .map(|k| l5[2 * i][k].max(l5[2 * i + 1][k]))
                .collect()
        })
        .collect();
    let flat: Vec<f64> = l6.into_iter().flatten().collect();
    let mut out = [0.0; 3];
    for (o, y) in out.iter_mut().enumerate() {
        let mut s = p.b5[o];
        for (pos, v) in flat.iter().enumerate() {
            s += v * p.theta5[pos * 3 + o];
        }
        *y = s * model.out_scale;
    }
    out
}

pub fn random_window(rng: &mut impl Rng, scale: f64) -> ImuWindow {
    let rows: Vec<[f64; 3]> = (0..WINDOW)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0) * scale,
                rng.random_range(-1.0..1.0) * scale,
                rng.random_range(-1.0..1.0) * scale,
            ]
        })
        .collect();
    ImuWindow::from_rows(&rows).unwrap()
}

/// Model with every tensor, biases included, drawn at random.
pub fn random_model(seed: u64) -> ProcessNetModel {
    let mut m = ProcessNetModel::new(seed, 1.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (i, s) in m.params.slices_mut().into_iter().enumerate() {
        if PARAM_NAMES[i].starts_with('b') {
            for v in s.iter_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    m
}

#[derive(Debug, Clone, Copy)]
pub struct GradProbe {
    pub tensor: &'static str,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradProbe {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale < 1e-10 {
            (self.analytic - self.numeric).abs()
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

/// Central differences of `u · output` at `per_tensor` random entries of
/// each parameter tensor.
pub fn gradient_probes(
    model: &ProcessNetModel,
    window: &ImuWindow,
    upstream: [f64; 3],
    per_tensor: usize,
    seed: u64,
) -> Vec<GradProbe> {
    let h = 1e-6;
    let acts = model.forward_cached(window).unwrap();
    let grads = model.backward(&acts, &upstream);
    let objective = |m: &ProcessNetModel| {
        let y = m.forward(window).unwrap();
        (0..3).map(|o| upstream[o] * y[o]).sum::<f64>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::new();
    let mut m = model.clone();
    for (ti, name) in PARAM_NAMES.iter().enumerate() {
        let len = grads.slices()[ti].len();
        for _ in 0..per_tensor.min(len) {
            let idx = rng.random_range(0..len);
            let orig = m.params.slices()[ti][idx];
            m.params.slices_mut()[ti][idx] = orig + h;
            let up = objective(&m);
            m.params.slices_mut()[ti][idx] = orig - h;
            let down = objective(&m);
            m.params.slices_mut()[ti][idx] = orig;
            probes.push(GradProbe {
                tensor: name,
                index: idx,
                analytic: grads.slices()[ti][idx],
                numeric: (up - down) / (2.0 * h),
            });
        }
    }
    probes
}
