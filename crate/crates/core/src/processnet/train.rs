//! Mean-squared-error loss and Adam training with deterministic batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ImuWindow, ParamSet, ProcessNetError, ProcessNetModel, OUTPUTS};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("prediction and target counts differ: {pred} vs {target}")]
    Length { pred: usize, target: usize },
    #[error("empty batch")]
    Empty,
    #[error("non-finite value at sample {0}")]
    NonFinite(usize),
}

/// Mean over samples and axes of `(pred - target)²`.
pub fn mse_loss(pred: &[[f64; OUTPUTS]], target: &[[f64; OUTPUTS]]) -> Result<f64, LossError> {
    if pred.len() != target.len() {
        return Err(LossError::Length {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    let mut sum = 0.0;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        if p.iter().chain(t).any(|v| !v.is_finite()) {
            return Err(LossError::NonFinite(i));
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sum / (pred.len() * OUTPUTS) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 7,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("target {0} is non-finite")]
    NonFiniteTarget(usize),
    #[error("loss became non-finite in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error(transparent)]
    Network(#[from] ProcessNetError),
}

/// Loss history in physical output units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full-dataset loss before the first update.
    pub initial_loss: f64,
    /// Mean per-sample loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses
            .last()
            .copied()
            .unwrap_or(self.initial_loss)
    }
}

fn sample_loss(pred: &[f64; OUTPUTS], target: &[f64; OUTPUTS]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / OUTPUTS as f64
}

/// Trains `model` in place with Adam on the loss expressed in the network's
/// native (pre-`out_scale`) units. Per-sample gradients are computed in
/// parallel and summed in sample order, so results do not depend on the
/// thread count.
pub fn train(
    model: &mut ProcessNetModel,
    data: &[(ImuWindow, [f64; OUTPUTS])],
    config: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if config.batch_size == 0
        || !(config.learning_rate > 0.0)
        || !(0.0..1.0).contains(&config.beta1)
        || !(0.0..1.0).contains(&config.beta2)
    {
        return Err(TrainError::Config(format!("{config:?}")));
    }
    if let Some(i) = data
        .iter()
        .position(|(_, t)| t.iter().any(|v| !v.is_finite()))
    {
        return Err(TrainError::NonFiniteTarget(i));
    }

    let preds = par::map_ordered(data, |(w, _)| model.forward(w));
    let mut initial = 0.0;
    for (p, (_, t)) in preds.into_iter().zip(data) {
        initial += sample_loss(&p?, t);
    }
    let initial_loss = initial / data.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut m = ParamSet::zeros();
    let mut v = ParamSet::zeros();
    let mut step = 0i32;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let per_sample =
                par::map_ordered(batch, |&i| -> Result<(ParamSet, f64), ProcessNetError> {
                    let (w, t) = &data[i];
                    let acts = model.forward_cached(w)?;
                    // d/d(raw) of mean squared error in native units, expressed as
                    // an upstream gradient on the scaled output.
                    let s = model.out_scale;
                    let upstream: [f64; OUTPUTS] = std::array::from_fn(|o| {
                        2.0 * (acts.raw[o] - t[o] / s) / (OUTPUTS as f64 * s)
                    });
                    let loss = sample_loss(&acts.output, t);
                    Ok((model.backward(&acts, &upstream), loss))
                });
            let mut grad = ParamSet::zeros();
            for r in per_sample {
                let (g, loss) = r?;
                epoch_sum += loss;
                grad.axpy(1.0 / batch.len() as f64, &g);
            }
            if !grad.all_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            step += 1;
            let bc1 = 1.0 - config.beta1.powi(step);
            let bc2 = 1.0 - config.beta2.powi(step);
            for ((p, g), (mt, vt)) in model
                .params
                .slices_mut()
                .into_iter()
                .zip(grad.slices())
                .zip(m.slices_mut().into_iter().zip(v.slices_mut()))
            {
                for i in 0..p.len() {
                    mt[i] = config.beta1 * mt[i] + (1.0 - config.beta1) * g[i];
                    vt[i] = config.beta2 * vt[i] + (1.0 - config.beta2) * g[i] * g[i];
                    let mhat = mt[i] / bc1;
                    let vhat = vt[i] / bc2;
                    p[i] -= config.learning_rate * mhat / (vhat.sqrt() + config.epsilon);
                }
            }
        }
        let epoch_loss = epoch_sum / data.len() as f64;
        if !epoch_loss.is_finite() || !model.params.all_finite() {
            return Err(TrainError::Divergence { epoch });
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainReport {
        initial_loss,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(
            mse_loss(&[[1.0, 2.0, 3.0]], &[[1.0, 2.0, 3.0]]).unwrap(),
            0.0
        );
        assert!((mse_loss(&[[1.0, 0.0, 0.0]], &[[0.0; 3]]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mse_loss(&[], &[]), Err(LossError::Empty));
        assert_eq!(
            mse_loss(&[[0.0; 3]], &[]),
            Err(LossError::Length { pred: 1, target: 0 })
        );
        assert_eq!(
            mse_loss(&[[f64::NAN, 0.0, 0.0]], &[[0.0; 3]]),
            Err(LossError::NonFinite(0))
        );
    }

    fn tiny_dataset(n: usize) -> Vec<(ImuWindow, [f64; 3])> {
        (0..n)
            .map(|i| {
                let rows: Vec<[f64; 3]> = (0..100)
                    .map(|k| {
                        let x = ((i * 31 + k * 7) % 13) as f64 / 13.0 - 0.5;
                        [x, -x * 0.5, 1.0 + x * 0.1]
                    })
                    .collect();
                (ImuWindow::from_rows(&rows).unwrap(), [0.5, 0.2, 0.1])
            })
            .collect()
    }

    #[test]
    fn constant_target_learned_by_bias() {
        let mut model = ProcessNetModel::zeros(1.0, 1.0);
        let data = tiny_dataset(8);
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &data, &cfg).unwrap();
        assert!(report.final_loss() < 1e-6, "{}", report.final_loss());
    }

    #[test]
    fn single_sample_small_step_monotone() {
        let mut model = ProcessNetModel::accelerometer(3);
        let data = tiny_dataset(1);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 1,
            learning_rate: 1e-4,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &data, &cfg).unwrap();
        let mut prev = report.initial_loss;
        for l in &report.epoch_losses {
            assert!(*l <= prev * (1.0 + 1e-12), "{l} > {prev}");
            prev = *l;
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(10);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut a = ProcessNetModel::accelerometer(1);
        let mut b = ProcessNetModel::accelerometer(1);
        let ra = train(&mut a, &data, &cfg).unwrap();
        let rb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut model = ProcessNetModel::accelerometer(1);
        assert_eq!(
            train(&mut model, &[], &TrainConfig::default()),
            Err(TrainError::EmptyDataset)
        );
        let mut data = tiny_dataset(2);
        data[1].1[2] = f64::NAN;
        assert_eq!(
            train(&mut model, &data, &TrainConfig::default()),
            Err(TrainError::NonFiniteTarget(1))
        );
    }
}
