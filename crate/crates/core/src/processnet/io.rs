//! JSON weight files: named nested-array tensors plus the scale factors.
//! Floats are written in shortest round-trip form, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};
use thiserror::Error;

use super::{
    conv_in_channels, kernel_index, AvgPoolForm, ParamSet, ProcessNetModel, CHANNELS, FLAT, KERNEL,
    OUTPUTS,
};

pub const WEIGHT_FORMAT_VERSION: u64 = 1;
const FORMAT_TAG: &str = "processnet";

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("cannot access weight file: {0}")]
    Io(#[from] std::io::Error),
    #[error("weight file is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported weight file format or version: {0}")]
    Format(String),
    #[error("tensor {name} is missing")]
    Missing { name: String },
    #[error("tensor {name} has shape {got:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor {name} contains a non-finite or non-numeric entry")]
    NonFinite { name: String },
}

fn conv_to_json(params: &ParamSet, layer: usize) -> Value {
    let in_ch = conv_in_channels(layer);
    let nested: Vec<Vec<Vec<f64>>> = (0..in_ch)
        .map(|j| {
            (0..CHANNELS)
                .map(|k| (0..KERNEL).map(|t| params.theta(layer, j, k, t)).collect())
                .collect()
        })
        .collect();
    json!(nested)
}

pub fn to_json(model: &ProcessNetModel) -> Value {
    let p = &model.params;
    let theta5: Vec<Vec<f64>> = p.theta5.chunks(OUTPUTS).map(|c| c.to_vec()).collect();
    let mut tensors = Map::new();
    for layer in 1..=4 {
        tensors.insert(format!("theta{layer}"), conv_to_json(p, layer));
        tensors.insert(format!("b{layer}"), json!(p.conv_bias(layer)));
    }
    tensors.insert("theta5".into(), json!(theta5));
    tensors.insert("b5".into(), json!(p.b5));
    json!({
        "format": FORMAT_TAG,
        "version": WEIGHT_FORMAT_VERSION,
        "in_scale": model.in_scale,
        "out_scale": model.out_scale,
        "pool": model.pool,
        "tensors": tensors,
    })
}

pub fn save_weights(model: &ProcessNetModel, path: &Path) -> Result<(), WeightError> {
    let text = serde_json::to_string_pretty(&to_json(model))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ProcessNetModel, WeightError> {
    let text = fs::read_to_string(path)?;
    from_json_str(&text)
}

fn shape_of(v: &Value) -> Vec<usize> {
    let mut shape = Vec::new();
    let mut cur = v;
    while let Value::Array(a) = cur {
        shape.push(a.len());
        match a.first() {
            Some(first) => cur = first,
            None => break,
        }
    }
    shape
}

/// Flattens `v` row-major after checking every level has the expected length.
fn flatten(name: &str, v: &Value, expected: &[usize]) -> Result<Vec<f64>, WeightError> {
    let shape_err = || WeightError::Shape {
        name: name.to_string(),
        expected: expected.to_vec(),
        got: shape_of(v),
    };
    fn walk(
        v: &Value,
        dims: &[usize],
        out: &mut Vec<f64>,
        name: &str,
        shape_err: &dyn Fn() -> WeightError,
    ) -> Result<(), WeightError> {
        match dims.split_first() {
            None => match v.as_f64() {
                Some(x) if x.is_finite() => {
                    out.push(x);
                    Ok(())
                }
                _ if v.is_array() => Err(shape_err()),
                _ => Err(WeightError::NonFinite {
                    name: name.to_string(),
                }),
            },
            Some((&n, rest)) => {
                let arr = v
                    .as_array()
                    .filter(|a| a.len() == n)
                    .ok_or_else(shape_err)?;
                arr.iter()
                    .try_for_each(|e| walk(e, rest, out, name, shape_err))
            }
        }
    }
    let mut out = Vec::with_capacity(expected.iter().product());
    walk(v, expected, &mut out, name, &shape_err)?;
    Ok(out)
}

fn scale(root: &Value, key: &str) -> Result<f64, WeightError> {
    root.get(key)
        .and_then(Value::as_f64)
        .filter(|s| s.is_finite() && *s > 0.0)
        .ok_or_else(|| WeightError::Format(format!("{key} must be a positive number")))
}

pub fn from_json_str(text: &str) -> Result<ProcessNetModel, WeightError> {
    let root: Value = serde_json::from_str(text)?;
    if root.get("format").and_then(Value::as_str) != Some(FORMAT_TAG) {
        return Err(WeightError::Format("missing processnet format tag".into()));
    }
    match root.get("version").and_then(Value::as_u64) {
        Some(WEIGHT_FORMAT_VERSION) => {}
        other => return Err(WeightError::Format(format!("version {other:?}"))),
    }
    let in_scale = scale(&root, "in_scale")?;
    let out_scale = scale(&root, "out_scale")?;
    let pool: AvgPoolForm = match root.get("pool") {
        None => AvgPoolForm::default(),
        Some(v) => serde_json::from_value(v.clone())?,
    };
    let tensors = root
        .get("tensors")
        .and_then(Value::as_object)
        .ok_or_else(|| WeightError::Format("missing tensors object".into()))?;
    let get = |name: &str| {
        tensors
            .get(name)
            .ok_or_else(|| WeightError::Missing { name: name.into() })
    };

    let mut params = ParamSet::zeros();
    for layer in 1..=4 {
        let name = format!("theta{layer}");
        let in_ch = conv_in_channels(layer);
        let flat = flatten(&name, get(&name)?, &[in_ch, CHANNELS, KERNEL])?;
        let dst = match layer {
            1 => &mut params.theta1,
            2 => &mut params.theta2,
            3 => &mut params.theta3,
            _ => &mut params.theta4,
        };
        for j in 0..in_ch {
            for k in 0..CHANNELS {
                for t in 0..KERNEL {
                    dst[kernel_index(layer, j, k, t)] = flat[(j * CHANNELS + k) * KERNEL + t];
                }
            }
        }
        let bname = format!("b{layer}");
        let bias = flatten(&bname, get(&bname)?, &[CHANNELS])?;
        match layer {
            1 => params.b1 = bias,
            2 => params.b2 = bias,
            3 => params.b3 = bias,
            _ => params.b4 = bias,
        }
    }
    params.theta5 = flatten("theta5", get("theta5")?, &[FLAT, OUTPUTS])?;
    params.b5 = flatten("b5", get("b5")?, &[OUTPUTS])?;
    Ok(ProcessNetModel {
        params,
        in_scale,
        out_scale,
        pool,
    })
}
