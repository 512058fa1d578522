use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, NetworkModel, Params, Target};
use crate::dataset::{Dataset, Label, LabelKind};
use crate::error::{Result, TwinError};
use crate::scalar::Scalar;

/// Mini-batch SGD settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    /// Training-set accuracy after the last epoch (classification).
    pub final_accuracy: Option<f64>,
    /// Training-set mean squared error after the last epoch (regression).
    pub final_mse: Option<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

pub(crate) fn check_compatible<T: Scalar>(
    model: &NetworkModel<T>,
    data: &Dataset<T>,
) -> Result<()> {
    if data.feature_count() != model.input_len() {
        return Err(TwinError::shape(
            "dataset vs model input",
            model.input_len(),
            data.feature_count(),
        ));
    }
    match (&data.schema.label_kind, &model.task) {
        (
            LabelKind::Classification { num_classes: a },
            LabelKind::Classification { num_classes: b },
        ) if a <= b => Ok(()),
        (LabelKind::Regression, LabelKind::Regression) => Ok(()),
        (a, b) => Err(TwinError::InvalidArgument(format!(
            "dataset task {a:?} does not match model task {b:?}"
        ))),
    }
}

/// Trains `model` in place with classical momentum:
/// `v <- momentum * v - lr * mean_grad; p <- p + v`.
///
/// Batches come from a fresh seeded shuffle each epoch. The reported epoch
/// loss is the mean per-case loss seen during that epoch.
pub fn train<T: Scalar>(
    model: &mut NetworkModel<T>,
    data: &Dataset<T>,
    hyper: &Hyper,
) -> Result<TrainReport> {
    if !(hyper.lr >= 0.0 && hyper.lr.is_finite()) {
        return Err(TwinError::InvalidArgument(format!(
            "learning rate {}",
            hyper.lr
        )));
    }
    if hyper.epochs == 0 || hyper.batch_size == 0 {
        return Err(TwinError::InvalidArgument(
            "epochs and batch_size must be positive".into(),
        ));
    }
    if data.is_empty() {
        return Err(TwinError::EmptyDataset);
    }
    check_compatible(model, data)?;

    let lr = T::lit(hyper.lr);
    let momentum = T::lit(hyper.momentum);
    let mut velocity: Vec<Option<Params<T>>> = model
        .params
        .iter()
        .map(|p| p.as_ref().map(Params::zeros_like))
        .collect();
    let targets: Vec<Target<T>> = data.labels().map(Target::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(hyper.epochs);

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for (batch, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let mut sum: Vec<Option<Params<T>>> = velocity
                .iter()
                .map(|p| p.as_ref().map(Params::zeros_like))
                .collect();
            for &i in chunk {
                let g = model.gradients(&data.cases[i].features, &targets[i])?;
                let loss = g.loss.as_f64();
                if !loss.is_finite() {
                    return Err(TwinError::NonFiniteLoss {
                        epoch,
                        batch: batch + 1,
                    });
                }
                epoch_loss += loss;
                for (acc, gp) in sum.iter_mut().zip(&g.params) {
                    if let (Some(acc), Some(gp)) = (acc.as_mut(), gp.as_ref()) {
                        add_assign(&mut acc.weight, &gp.weight);
                        add_assign(&mut acc.bias, &gp.bias);
                    }
                }
            }
            let n = T::lit(chunk.len() as f64);
            for ((p, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&sum) {
                if let (Some(p), Some(v), Some(g)) = (p.as_mut(), v.as_mut(), g.as_ref()) {
                    step(&mut p.weight, &mut v.weight, &g.weight, lr, momentum, n);
                    step(&mut p.bias, &mut v.bias, &g.bias, lr, momentum, n);
                }
            }
            if !model.all_params_finite() {
                return Err(TwinError::NonFiniteLoss {
                    epoch,
                    batch: batch + 1,
                });
            }
        }
        epochs.push(EpochLoss {
            epoch,
            loss: epoch_loss / data.len() as f64,
        });
    }

    let (final_accuracy, final_mse) = training_metric(model, data)?;
    Ok(TrainReport {
        epochs,
        final_accuracy,
        final_mse,
    })
}

fn add_assign<T: Scalar>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn step<T: Scalar>(p: &mut [T], v: &mut [T], g: &[T], lr: T, momentum: T, n: T) {
    for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = momentum * *v - lr * (g / n);
        *p += *v;
    }
}

/// Accuracy (classification) or MSE (regression) of the model on `data`.
pub(crate) fn training_metric<T: Scalar>(
    model: &NetworkModel<T>,
    data: &Dataset<T>,
) -> Result<(Option<f64>, Option<f64>)> {
    let mut hits = 0usize;
    let mut sq = 0.0f64;
    for case in &data.cases {
        let out = model.forward(&case.features)?;
        match case.label {
            Label::Class(c) => hits += usize::from(argmax(&out) == c),
            Label::Value(t) => {
                let e = out[0].as_f64() - t.as_f64();
                sq += e * e;
            }
        }
    }
    let n = data.len() as f64;
    Ok(if model.task.is_classification() {
        (Some(hits as f64 / n), None)
    } else {
        (None, Some(sq / n))
    })
}
