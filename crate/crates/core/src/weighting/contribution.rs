//! Difference-from-baseline contributions (DeepLIFT, Rescale rule).
//!
//! Multipliers are propagated backwards from the target logit. Linear and
//! convolutional layers pass them through their weights; an element-wise
//! nonlinearity scales them by `delta_out / delta_in` (its derivative at the
//! baseline when `|delta_in|` is tiny); max-pooling routes them to the
//! query's selected positions. The contribution of a unit is its multiplier
//! times its own difference from the baseline, so for networks without
//! pooling the contributions add up to `logit(query) - logit(baseline)`.

use super::{FeatureWeights, Scheme, Scope, Space};
use crate::dataset::Dataset;
use crate::error::{Result, TwinError};
use crate::network::{argmax, sigmoid, LayerKind, NetworkModel};
use crate::scalar::Scalar;

const RESCALE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct Contributions<T> {
    /// Signed contribution of each unit of the chosen space.
    pub values: Vec<T>,
    pub target: usize,
    /// `logit(query) - logit(baseline)` for the target output.
    pub delta: T,
}

/// Baseline used when the caller gives none: all-zero images, or the
/// per-feature mean for tabular data.
pub fn default_baseline<T: Scalar>(train: &Dataset<T>) -> Vec<T> {
    if train.schema.input_shape.is_image() || train.is_empty() {
        vec![T::zero(); train.feature_count()]
    } else {
        train.feature_means()
    }
}

/// Signed contributions to output `target` (the predicted class, or output
/// 0 for regression, when `None`).
pub fn contributions<T: Scalar>(
    model: &NetworkModel<T>,
    query: &[T],
    baseline: &[T],
    target: Option<usize>,
    space: &Space,
) -> Result<Contributions<T>> {
    if query.len() != model.input_len() {
        return Err(TwinError::shape("query", model.input_len(), query.len()));
    }
    if baseline.len() != query.len() {
        return Err(TwinError::shape("baseline", query.len(), baseline.len()));
    }
    let top = model.logit_layer();
    let stop = match space {
        Space::Input => None,
        Space::Layer(name) => {
            let l = model.layer_index(name)?;
            if l > top {
                return Err(TwinError::InvalidArgument(format!(
                    "layer {name:?} lies after the logits"
                )));
            }
            Some(l)
        }
    };

    let acts_q = model.activations(query);
    let acts_b = model.activations(baseline);
    let logits_q = &acts_q[top + 1];
    let target = match target {
        Some(t) => t,
        None if model.task().is_classification() => argmax(acts_q.last().expect("output")),
        None => 0,
    };
    if target >= logits_q.len() {
        return Err(TwinError::InvalidTarget {
            index: target,
            outputs: logits_q.len(),
        });
    }
    let delta = logits_q[target] - acts_b[top + 1][target];

    let mut mult = vec![T::zero(); logits_q.len()];
    mult[target] = T::one();
    // multipliers w.r.t. the output of layer `l` on entry to each iteration
    let lowest = stop.map_or(0, |s| s + 1);
    for l in (lowest..=top).rev() {
        mult = match model.layers()[l].kind {
            LayerKind::Relu | LayerKind::Sigmoid => {
                let kind = &model.layers()[l].kind;
                mult.iter()
                    .enumerate()
                    .map(|(i, &m)| {
                        let d_in = acts_q[l][i] - acts_b[l][i];
                        let d_out = acts_q[l + 1][i] - acts_b[l + 1][i];
                        if d_in.abs() < T::lit(RESCALE_EPS) {
                            m * derivative(kind, acts_b[l][i])
                        } else {
                            m * (d_out / d_in)
                        }
                    })
                    .collect()
            }
            _ => model.layer_backward(l, &acts_q[l], &acts_q[l + 1], &mult, None),
        };
    }

    let (q_vals, b_vals) = match stop {
        None => (&acts_q[0], &acts_b[0]),
        Some(s) => (&acts_q[s + 1], &acts_b[s + 1]),
    };
    let values = mult
        .iter()
        .zip(q_vals.iter().zip(b_vals))
        .map(|(&m, (&q, &b))| m * (q - b))
        .collect();
    Ok(Contributions {
        values,
        target,
        delta,
    })
}

fn derivative<T: Scalar>(kind: &LayerKind, x: T) -> T {
    match kind {
        LayerKind::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        LayerKind::Sigmoid => {
            let s = sigmoid(x);
            s * (T::one() - s)
        }
        _ => T::one(),
    }
}

/// Local weights from the positive part of the contributions; the signed
/// values are kept alongside.
pub fn contribution_weights<T: Scalar>(
    model: &NetworkModel<T>,
    query: &[T],
    baseline: &[T],
    target: Option<usize>,
    space: &Space,
) -> Result<FeatureWeights<T>> {
    let c = contributions(model, query, baseline, target, space)?;
    let raw = c.values.iter().map(|&v| v.max(T::zero())).collect();
    let mut w = FeatureWeights::from_scores(
        Scheme::Contribution,
        Scope::Local { query: None },
        space.clone(),
        raw,
    )?;
    w.signed_contributions = Some(c.values);
    Ok(w)
}
