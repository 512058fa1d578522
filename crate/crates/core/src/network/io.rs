//! Versioned JSON model files.
//!
//! ```json
//! {"version": "v1", "task": {...}, "input_shape": {...}, "seed": 42,
//!  "layers": [{"name": "h", "kind": "dense", "in": 2, "out": 8}, ...],
//!  "params": [{"weight": [[...], ...], "bias": [...]}, null, ...],
//!  "metadata": {}}
//! ```
//!
//! `params` has one entry per layer (`null` for parameter-free layers).
//! Weights are nested row-major arrays: `[out][in]` for dense layers and
//! `[out_ch][in_ch][k][k]` for convolutions.

use std::path::Path;

use serde_json::{json, Map, Value};

use super::layer::{check_chain, LayerKind, LayerSpec};
use super::{NetworkModel, Params};
use crate::dataset::{InputShape, LabelKind};
use crate::error::{Result, TwinError};
use crate::scalar::Scalar;
use crate::util::write_atomic;

pub const MODEL_VERSION: &str = "v1";

fn weight_dims(kind: &LayerKind) -> Option<Vec<usize>> {
    match *kind {
        LayerKind::Dense { inputs, outputs } => Some(vec![outputs, inputs]),
        LayerKind::Conv2d {
            in_ch,
            out_ch,
            kernel,
            ..
        } => Some(vec![out_ch, in_ch, kernel, kernel]),
        _ => None,
    }
}

fn nest<T: Scalar>(data: &[T], dims: &[usize]) -> Value {
    match dims {
        [] | [_] => Value::Array(data.iter().map(|&v| json!(v)).collect()),
        [_, rest @ ..] => {
            let stride: usize = rest.iter().product();
            Value::Array(data.chunks(stride).map(|c| nest(c, rest)).collect())
        }
    }
}

fn unnest<T: Scalar>(v: &Value, dims: &[usize], out: &mut Vec<T>, what: &str) -> Result<()> {
    let arr = v
        .as_array()
        .ok_or_else(|| TwinError::Malformed(format!("{what}: expected array")))?;
    let (n, rest) = dims
        .split_first()
        .ok_or_else(|| TwinError::Malformed(format!("{what}: too deeply nested")))?;
    if arr.len() != *n {
        return Err(TwinError::shape(what.to_string(), n, arr.len()));
    }
    for item in arr {
        if rest.is_empty() {
            let x = item
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| TwinError::Malformed(format!("{what}: non-numeric parameter")))?;
            out.push(T::lit(x));
        } else {
            unnest(item, rest, out, what)?;
        }
    }
    Ok(())
}

pub fn to_json<T: Scalar>(model: &NetworkModel<T>) -> String {
    let params: Vec<Value> = model
        .layers
        .iter()
        .zip(&model.params)
        .map(|(spec, p)| match (p, weight_dims(&spec.kind)) {
            (Some(p), Some(dims)) => json!({
                "weight": nest(&p.weight, &dims),
                "bias": nest(&p.bias, &[p.bias.len()]),
            }),
            _ => Value::Null,
        })
        .collect();
    let doc = json!({
        "version": MODEL_VERSION,
        "task": model.task,
        "input_shape": model.input_shape,
        "seed": model.seed,
        "layers": model.layers,
        "params": params,
        "metadata": Value::Object(model.metadata.clone()),
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("model serializes");
    s.push('\n');
    s
}

pub fn from_json<T: Scalar>(text: &str) -> Result<NetworkModel<T>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| TwinError::Malformed(e.to_string()))?;
    let version = doc
        .get("version")
        .and_then(Value::as_str)
        .ok_or_else(|| TwinError::Malformed("missing version".into()))?;
    if version != MODEL_VERSION {
        return Err(TwinError::VersionMismatch {
            expected: MODEL_VERSION.into(),
            found: version.into(),
        });
    }
    let field = |name: &str| {
        doc.get(name)
            .cloned()
            .ok_or_else(|| TwinError::Malformed(format!("missing field {name:?}")))
    };
    let malformed = |e: serde_json::Error| TwinError::Malformed(e.to_string());
    let task: LabelKind = serde_json::from_value(field("task")?).map_err(malformed)?;
    let input_shape: InputShape =
        serde_json::from_value(field("input_shape")?).map_err(malformed)?;
    let seed: u64 = serde_json::from_value(field("seed")?).map_err(malformed)?;
    let layers: Vec<LayerSpec> = serde_json::from_value(field("layers")?).map_err(malformed)?;
    let metadata: Map<String, Value> = match doc.get("metadata") {
        Some(Value::Object(m)) => m.clone(),
        _ => Map::new(),
    };
    let shapes = check_chain(&layers, input_shape, &task)?;

    let raw_params = field("params")?;
    let raw_params = raw_params
        .as_array()
        .ok_or_else(|| TwinError::Malformed("params: expected array".into()))?;
    if raw_params.len() != layers.len() {
        return Err(TwinError::shape("params", layers.len(), raw_params.len()));
    }
    let mut params = Vec::with_capacity(layers.len());
    for (spec, raw) in layers.iter().zip(raw_params) {
        let what = format!("params of {:?}", spec.name);
        match (weight_dims(&spec.kind), raw) {
            (None, Value::Null) => params.push(None),
            (Some(dims), Value::Object(obj)) => {
                let mut weight = Vec::new();
                let w = obj
                    .get("weight")
                    .ok_or_else(|| TwinError::Malformed(format!("{what}: missing weight")))?;
                unnest(w, &dims, &mut weight, &what)?;
                let mut bias = Vec::new();
                let b = obj
                    .get("bias")
                    .ok_or_else(|| TwinError::Malformed(format!("{what}: missing bias")))?;
                unnest(b, &[dims[0]], &mut bias, &what)?;
                params.push(Some(Params { weight, bias }));
            }
            _ => {
                return Err(TwinError::Malformed(format!(
                    "{what}: does not match layer kind"
                )))
            }
        }
    }
    Ok(NetworkModel {
        layers,
        params,
        input_shape,
        shapes,
        task,
        seed,
        metadata,
    })
}

pub fn save<T: Scalar>(model: &NetworkModel<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), to_json(model).as_bytes())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<NetworkModel<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TwinError::io(path, e))?;
    from_json(&text)
}
