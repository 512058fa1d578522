use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureWeights, Scheme, Scope, Space};
use crate::dataset::Dataset;
use crate::error::{Result, TwinError};
use crate::network::{LayerKind, NetworkModel};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalScheme {
    /// Mean L1 change of the output vector when a feature is replaced by its
    /// training mean.
    Sensitivity,
    /// `sum_j W1[i,j]^2 * Var(h_j)` over the first hidden layer.
    Activity,
    /// `sum_j |W1[i,j]| * max_k |W2[j,k]|`.
    Relevance,
    /// `sum_j sum_k W1[i,j]^2 * W2[j,k]^2`.
    Saliency,
}

impl GlobalScheme {
    pub fn scheme(self) -> Scheme {
        match self {
            GlobalScheme::Sensitivity => Scheme::Sensitivity,
            GlobalScheme::Activity => Scheme::Activity,
            GlobalScheme::Relevance => Scheme::Relevance,
            GlobalScheme::Saliency => Scheme::Saliency,
        }
    }
}

/// First dense layer over the inputs and the layer whose output is the first
/// hidden representation (the dense layer itself or its activation).
struct FirstHidden {
    dense: usize,
    hidden_end: usize,
    inputs: usize,
    units: usize,
}

fn first_hidden<T: Scalar>(model: &NetworkModel<T>, scheme: GlobalScheme) -> Result<FirstHidden> {
    let layers = model.layers();
    let dense = layers
        .iter()
        .position(|s| s.kind != LayerKind::Flatten)
        .expect("built networks have a parameterised layer");
    let LayerKind::Dense { inputs, outputs } = layers[dense].kind else {
        return Err(TwinError::NeedsDenseFirstLayer {
            scheme: scheme.scheme().name(),
            layer: layers[dense].name.clone(),
            kind: layers[dense].kind.label(),
        });
    };
    let hidden_end = match layers.get(dense + 1) {
        Some(s) if s.kind.is_elementwise() => dense + 1,
        _ => dense,
    };
    Ok(FirstHidden {
        dense,
        hidden_end,
        inputs,
        units: outputs,
    })
}

/// Second-layer matrix `[hidden unit][output]`: the next dense layer's
/// weights when it directly produces the logits, the identity when the
/// hidden layer already is the logit layer, and otherwise the logit Jacobian
/// w.r.t. the hidden activations averaged over `data`.
fn second_layer<T: Scalar>(
    model: &NetworkModel<T>,
    data: &Dataset<T>,
    fh: &FirstHidden,
) -> Vec<Vec<T>> {
    let top = model.logit_layer();
    let n_out = model.layer_shape(top).len();
    if fh.hidden_end >= top {
        return (0..fh.units)
            .map(|j| {
                (0..n_out)
                    .map(|k| if j == k { T::one() } else { T::zero() })
                    .collect()
            })
            .collect();
    }
    if fh.hidden_end + 1 == top {
        if let LayerKind::Dense { inputs, .. } = model.layers()[top].kind {
            let w = &model.params()[top].as_ref().expect("dense params").weight;
            return (0..fh.units)
                .map(|j| (0..n_out).map(|k| w[k * inputs + j]).collect())
                .collect();
        }
    }
    let per_case: Vec<Vec<Vec<T>>> = data
        .cases
        .par_iter()
        .map(|case| {
            let acts = model.activations(&case.features);
            (0..n_out)
                .map(|k| {
                    let mut unit = vec![T::zero(); n_out];
                    unit[k] = T::one();
                    model.backward(&acts, top, fh.hidden_end + 1, unit, None)
                })
                .collect()
        })
        .collect();
    let n = T::lit(data.len() as f64);
    let mut mean = vec![vec![T::zero(); n_out]; fh.units];
    for jac in &per_case {
        for (k, col) in jac.iter().enumerate() {
            for (j, &v) in col.iter().enumerate() {
                mean[j][k] += v;
            }
        }
    }
    for row in &mut mean {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    mean
}

/// One of the four global weighting schemes over the input features.
pub fn global_weights<T: Scalar>(
    model: &NetworkModel<T>,
    train: &Dataset<T>,
    scheme: GlobalScheme,
) -> Result<FeatureWeights<T>> {
    if train.is_empty() {
        return Err(TwinError::EmptyDataset);
    }
    if train.feature_count() != model.input_len() {
        return Err(TwinError::shape(
            "dataset vs model input",
            model.input_len(),
            train.feature_count(),
        ));
    }
    let raw = match scheme {
        GlobalScheme::Sensitivity => sensitivity(model, train)?,
        GlobalScheme::Activity => {
            let fh = first_hidden(model, scheme)?;
            let var = hidden_variance(model, train, &fh);
            let w1 = first_weights(model, &fh);
            (0..fh.inputs)
                .map(|i| (0..fh.units).map(|j| w1(i, j) * w1(i, j) * var[j]).sum())
                .collect()
        }
        GlobalScheme::Saliency => {
            let fh = first_hidden(model, scheme)?;
            let w2 = second_layer(model, train, &fh);
            let w1 = first_weights(model, &fh);
            let out_sq: Vec<T> = w2
                .iter()
                .map(|row| row.iter().map(|&v| v * v).sum())
                .collect();
            (0..fh.inputs)
                .map(|i| (0..fh.units).map(|j| w1(i, j) * w1(i, j) * out_sq[j]).sum())
                .collect()
        }
        GlobalScheme::Relevance => {
            let fh = first_hidden(model, scheme)?;
            let w2 = second_layer(model, train, &fh);
            let w1 = first_weights(model, &fh);
            let out_max: Vec<T> = w2
                .iter()
                .map(|row| row.iter().fold(T::zero(), |m, &v| m.max(v.abs())))
                .collect();
            (0..fh.inputs)
                .map(|i| (0..fh.units).map(|j| w1(i, j).abs() * out_max[j]).sum())
                .collect()
        }
    };
    FeatureWeights::from_scores(scheme.scheme(), Scope::Global, Space::Input, raw)
}

/// `W1[i, j]` (input `i`, hidden unit `j`).
fn first_weights<'m, T: Scalar>(
    model: &'m NetworkModel<T>,
    fh: &FirstHidden,
) -> impl Fn(usize, usize) -> T + 'm {
    let w = &model.params()[fh.dense]
        .as_ref()
        .expect("dense params")
        .weight;
    let inputs = fh.inputs;
    move |i, j| w[j * inputs + i]
}

fn hidden_variance<T: Scalar>(
    model: &NetworkModel<T>,
    data: &Dataset<T>,
    fh: &FirstHidden,
) -> Vec<T> {
    let hidden: Vec<Vec<T>> = data
        .cases
        .par_iter()
        .map(|c| model.run_range(0, fh.hidden_end, c.features.clone()))
        .collect();
    let n = T::lit(data.len() as f64);
    let mut mean = vec![T::zero(); fh.units];
    for h in &hidden {
        for (m, &v) in mean.iter_mut().zip(h) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![T::zero(); fh.units];
    for h in &hidden {
        for ((s, &v), &m) in var.iter_mut().zip(h).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.into_iter().map(|s| s / n).collect()
}

fn sensitivity<T: Scalar>(model: &NetworkModel<T>, data: &Dataset<T>) -> Result<Vec<T>> {
    let means = data.feature_means();
    let d = means.len();
    let per_case: Vec<Vec<T>> = data
        .cases
        .par_iter()
        .map(|case| -> Result<Vec<T>> {
            let base = model.forward(&case.features)?;
            let mut x = case.features.clone();
            let mut out = Vec::with_capacity(d);
            for i in 0..d {
                let orig = x[i];
                x[i] = means[i];
                let y = model.forward(&x)?;
                x[i] = orig;
                out.push(
                    base.iter()
                        .zip(&y)
                        .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs()),
                );
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let n = T::lit(data.len() as f64);
    let mut raw = vec![T::zero(); d];
    for scores in &per_case {
        for (r, &s) in raw.iter_mut().zip(scores) {
            *r += s;
        }
    }
    Ok(raw.into_iter().map(|r| r / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_csv, InputShape, LabelColumn, LabelKind, Task};
    use crate::network::LayerSpec;

    fn table(rows: &str) -> Dataset<f64> {
        parse_csv(rows, &LabelColumn::Name("y".into()), Task::Regression).unwrap()
    }

    fn dense(name: &str, i: usize, o: usize) -> LayerSpec {
        LayerSpec::new(
            name,
            LayerKind::Dense {
                inputs: i,
                outputs: o,
            },
        )
    }

    #[test]
    fn sensitivity_of_linear_net() {
        let mut m: NetworkModel<f64> = NetworkModel::build(
            vec![dense("d", 2, 1)],
            InputShape::Flat { d: 2 },
            LabelKind::Regression,
            0,
        )
        .unwrap();
        m.params_mut()[0].as_mut().unwrap().weight = vec![2.0, 0.0];
        let data = table("a,b,y\n-1,5,0\n1,-5,0\n");
        let w = global_weights(&m, &data, GlobalScheme::Sensitivity).unwrap();
        assert_eq!(w.weights, vec![1.0, 0.0]);
    }

    #[test]
    fn constant_hidden_activity_falls_back() {
        let mut m: NetworkModel<f64> = NetworkModel::build(
            vec![
                dense("h", 2, 3),
                LayerSpec::new("r", LayerKind::Relu),
                dense("o", 3, 1),
            ],
            InputShape::Flat { d: 2 },
            LabelKind::Regression,
            4,
        )
        .unwrap();
        // every hidden unit is dead: relu(-1) = 0 everywhere on the data
        let p = m.params_mut()[0].as_mut().unwrap();
        p.weight = vec![0.0; 6];
        p.bias = vec![-1.0; 3];
        let data = table("a,b,y\n0,1,0\n2,3,0\n-4,5,0\n");
        let w = global_weights(&m, &data, GlobalScheme::Activity).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        assert!(w.is_fallback());
    }

    fn one_hidden_unit() -> NetworkModel<f64> {
        let mut m: NetworkModel<f64> = NetworkModel::build(
            vec![
                dense("h", 2, 1),
                LayerSpec::new("r", LayerKind::Relu),
                dense("o", 1, 1),
            ],
            InputShape::Flat { d: 2 },
            LabelKind::Regression,
            0,
        )
        .unwrap();
        m.params_mut()[0].as_mut().unwrap().weight = vec![3.0, 1.0];
        m.params_mut()[2].as_mut().unwrap().weight = vec![2.0];
        m
    }

    #[test]
    fn saliency_hand_evaluation() {
        let data = table("a,b,y\n1,1,0\n2,0,0\n");
        let w = global_weights(&one_hidden_unit(), &data, GlobalScheme::Saliency).unwrap();
        // raw (36, 4)
        assert!((w.weights[0] - 0.9).abs() < 1e-15);
        assert!((w.weights[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn relevance_hand_evaluation() {
        let data = table("a,b,y\n1,1,0\n2,0,0\n");
        let w = global_weights(&one_hidden_unit(), &data, GlobalScheme::Relevance).unwrap();
        // raw (3 * 2, 1 * 2)
        assert!((w.weights[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn deep_nets_use_averaged_jacobian() {
        // h -> relu -> dense(identity-ish) -> relu -> dense: with all-positive
        // activations the Jacobian equals the product of the later weights
        let mut m: NetworkModel<f64> = NetworkModel::build(
            vec![
                dense("h", 2, 2),
                LayerSpec::new("r1", LayerKind::Relu),
                dense("m", 2, 2),
                LayerSpec::new("r2", LayerKind::Relu),
                dense("o", 2, 1),
            ],
            InputShape::Flat { d: 2 },
            LabelKind::Regression,
            0,
        )
        .unwrap();
        m.params_mut()[0].as_mut().unwrap().weight = vec![1.0, 0.0, 0.0, 1.0];
        m.params_mut()[2].as_mut().unwrap().weight = vec![2.0, 0.0, 0.0, 1.0];
        m.params_mut()[4].as_mut().unwrap().weight = vec![1.0, 1.0];
        let data = table("a,b,y\n1,1,0\n2,3,0\n");
        // effective W2 = (2, 1): saliency raw = (4, 1)
        let w = global_weights(&m, &data, GlobalScheme::Saliency).unwrap();
        assert!((w.weights[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn conv_first_layer_rejected() {
        let m: NetworkModel<f64> = NetworkModel::build(
            vec![
                LayerSpec::new("c", LayerKind::conv2d(1, 1, 1)),
                LayerSpec::new("f", LayerKind::Flatten),
                dense("o", 4, 1),
            ],
            InputShape::Image {
                channels: 1,
                height: 2,
                width: 2,
            },
            LabelKind::Regression,
            0,
        )
        .unwrap();
        let data = parse_csv::<f64>(
            "a,b,c,d,y\n0,0,0,0,0\n1,1,1,1,1\n",
            &LabelColumn::Name("y".into()),
            Task::Regression,
        )
        .unwrap();
        let err = global_weights(&m, &data, GlobalScheme::Activity).unwrap_err();
        assert!(err.to_string().contains("\"c\" is conv2d"), "{err}");
        // sensitivity works for any architecture
        assert!(global_weights(&m, &data, GlobalScheme::Sensitivity).is_ok());
    }
}
