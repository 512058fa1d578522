//! Local linear surrogate: perturb the query, label the perturbations with
//! the network, and fit a proximity-weighted ridge regression. The
//! coefficient magnitudes become the query's feature weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FeatureWeights, Scheme, Scope, Space};
use crate::dataset::Dataset;
use crate::error::{Result, TwinError};
use crate::network::{argmax, NetworkModel};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub n_samples: usize,
    /// Perturbation standard deviation as a multiple of each feature's
    /// training standard deviation.
    pub perturb_scale: f64,
    /// Proximity kernel width; `None` means `0.75 * sqrt(d)`.
    pub kernel_width: Option<f64>,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            n_samples: 1000,
            perturb_scale: 0.3,
            kernel_width: None,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(TwinError::InvalidArgument("surrogate needs d >= 1".into()));
        }
        if self.n_samples < d + 1 {
            return Err(TwinError::Underdetermined {
                samples: self.n_samples,
                needed: d + 1,
            });
        }
        let kw_ok = self.kernel_width.is_none_or(|k| k > 0.0 && k.is_finite());
        if !(self.perturb_scale > 0.0 && self.perturb_scale.is_finite())
            || !kw_ok
            || !(self.ridge >= 0.0 && self.ridge.is_finite())
        {
            return Err(TwinError::InvalidArgument(format!(
                "invalid surrogate config {self:?}"
            )));
        }
        Ok(())
    }

    pub fn kernel_width_for(&self, d: usize) -> f64 {
        self.kernel_width.unwrap_or(0.75 * (d as f64).sqrt())
    }
}

/// Everything the fit saw and produced, kept so the regression can be
/// checked independently.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateFit<T> {
    pub samples: Vec<Vec<T>>,
    pub targets: Vec<T>,
    pub proximity: Vec<T>,
    /// Model output index being explained.
    pub output: usize,
    pub intercept: T,
    /// One coefficient per feature, in units of the centred perturbation
    /// `x' - query`.
    pub coefficients: Vec<T>,
}

/// Draws the perturbation sample, labels it with `model` and solves the
/// weighted ridge normal equations.
pub fn surrogate_fit<T: Scalar>(
    model: &NetworkModel<T>,
    query: &[T],
    train_std: &[T],
    cfg: &SurrogateConfig,
) -> Result<SurrogateFit<T>> {
    let d = query.len();
    cfg.validate(d)?;
    if train_std.len() != d {
        return Err(TwinError::shape("surrogate std", d, train_std.len()));
    }
    let q_out = model.forward(query)?;
    if q_out.iter().any(|v| !v.is_finite()) {
        return Err(TwinError::NonFiniteOutput);
    }
    let output = if model.task().is_classification() {
        argmax(&q_out)
    } else {
        0
    };

    let scale = T::lit(cfg.perturb_scale);
    let sigma: Vec<T> = train_std
        .iter()
        .map(|&s| if s > T::zero() { s * scale } else { scale })
        .collect();
    let kw = T::lit(cfg.kernel_width_for(d));
    let kw2 = kw * kw;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut targets = Vec::with_capacity(cfg.n_samples);
    let mut proximity = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let x: Vec<T> = query
            .iter()
            .zip(&sigma)
            .map(|(&q, &s)| {
                let e: f64 = StandardNormal.sample(&mut rng);
                q + s * T::lit(e)
            })
            .collect();
        let y = model.forward(&x)?[output];
        if !y.is_finite() {
            return Err(TwinError::NonFiniteOutput);
        }
        let dist2 = crate::scalar::squared_distance(&x, query);
        proximity.push((-dist2 / kw2).exp());
        targets.push(y);
        samples.push(x);
    }

    // Normal equations for [intercept, beta] on centred features z = x - q:
    // (Z' P Z + R) b = Z' P y, with R = ridge on every slot except the
    // intercept.
    let p = d + 1;
    let mut gram = vec![T::zero(); p * p];
    let mut rhs = vec![T::zero(); p];
    let mut z = vec![T::one(); p];
    for ((x, &y), &w) in samples.iter().zip(&targets).zip(&proximity) {
        for (zi, (&xi, &qi)) in z[1..].iter_mut().zip(x.iter().zip(query)) {
            *zi = xi - qi;
        }
        for a in 0..p {
            let wa = w * z[a];
            rhs[a] += wa * y;
            for b in 0..=a {
                gram[a * p + b] += wa * z[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[b * p + a] = gram[a * p + b];
        }
    }
    let ridge = T::lit(cfg.ridge);
    for a in 1..p {
        gram[a * p + a] += ridge;
    }
    let beta = cholesky_solve(&mut gram, &mut rhs, p)?;
    Ok(SurrogateFit {
        samples,
        targets,
        proximity,
        output,
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
    })
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major, `n x n`),
/// overwriting both arguments.
fn cholesky_solve<T: Scalar>(a: &mut [T], b: &mut [T], n: usize) -> Result<Vec<T>> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if diag.is_nan() || diag <= T::zero() {
            return Err(TwinError::InvalidArgument(
                "surrogate normal equations are singular".into(),
            ));
        }
        let l_jj = diag.sqrt();
        a[j * n + j] = l_jj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l_jj;
        }
    }
    // forward: L y = b
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    // backward: L' x = y
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(b.to_vec())
}

/// Local weights from the surrogate's coefficient magnitudes.
pub fn surrogate_weights<T: Scalar>(
    model: &NetworkModel<T>,
    query: &[T],
    train: &Dataset<T>,
    cfg: &SurrogateConfig,
) -> Result<FeatureWeights<T>> {
    if query.len() != model.input_len() {
        return Err(TwinError::shape(
            "surrogate query",
            model.input_len(),
            query.len(),
        ));
    }
    let stds = if train.is_empty() {
        vec![T::one(); query.len()]
    } else {
        train.feature_stds()
    };
    let fit = surrogate_fit(model, query, &stds, cfg)?;
    // A linear effect below numerical resolution (e.g. a constant model) is
    // treated as no effect at all.
    let effect: T = fit
        .coefficients
        .iter()
        .zip(&stds)
        .map(|(c, &s)| c.abs() * if s > T::zero() { s } else { T::one() })
        .sum();
    let resolution = T::epsilon() * T::lit(1e4) * fit.intercept.abs().max(T::one());
    let raw: Vec<T> = if effect <= resolution {
        vec![T::zero(); query.len()]
    } else {
        fit.coefficients.iter().map(|c| c.abs()).collect()
    };
    let mut w = FeatureWeights::from_scores(
        Scheme::Surrogate,
        Scope::Local { query: None },
        Space::Input,
        raw,
    )?;
    w.signed_contributions = Some(fit.coefficients);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{InputShape, LabelKind};
    use crate::network::{LayerKind, LayerSpec};

    fn linear(weights: Vec<f64>, bias: f64) -> NetworkModel<f64> {
        let d = weights.len();
        let mut m = NetworkModel::build(
            vec![LayerSpec::new(
                "lin",
                LayerKind::Dense {
                    inputs: d,
                    outputs: 1,
                },
            )],
            InputShape::Flat { d },
            LabelKind::Regression,
            0,
        )
        .unwrap();
        let p = m.params_mut()[0].as_mut().unwrap();
        p.weight = weights;
        p.bias = vec![bias];
        m
    }

    #[test]
    fn cholesky_small_system() {
        let mut a: Vec<f64> = vec![4.0, 2.0, 2.0, 3.0];
        let mut b = vec![2.0, 1.0];
        let x = cholesky_solve(&mut a, &mut b, 2).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15 && x[1].abs() < 1e-15);
    }

    #[test]
    fn recovers_linear_coefficients() {
        let m = linear(vec![3.0, -2.0], 0.0);
        let fit =
            surrogate_fit(&m, &[0.4, -1.1], &[1.0, 1.0], &SurrogateConfig::default()).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-3);
        assert!((fit.coefficients[1] + 2.0).abs() < 1e-3);
        let w = surrogate_weights(
            &m,
            &[0.4, -1.1],
            &Dataset {
                schema: crate::dataset::FeatureSchema {
                    feature_names: vec!["a".into(), "b".into()],
                    label_kind: LabelKind::Regression,
                    input_shape: InputShape::Flat { d: 2 },
                    class_names: vec![],
                },
                cases: vec![],
                norm_stats: None,
                source: String::new(),
            },
            &SurrogateConfig::default(),
        )
        .unwrap();
        assert!((w.weights[0] - 0.6).abs() < 1e-4);
        assert!((w.weights[1] - 0.4).abs() < 1e-4);
        assert_eq!(w.scope, Scope::Local { query: None });
    }

    #[test]
    fn constant_model_falls_back() {
        let m = linear(vec![0.0, 0.0, 0.0], 7.5);
        let fit =
            surrogate_fit(&m, &[1.0, 2.0, 3.0], &[1.0; 3], &SurrogateConfig::default()).unwrap();
        assert!(fit.coefficients.iter().all(|c| c.abs() < 1e-9));
        assert!((fit.intercept - 7.5).abs() < 1e-9);
        let train = Dataset {
            schema: crate::dataset::FeatureSchema {
                feature_names: vec!["a".into(), "b".into(), "c".into()],
                label_kind: LabelKind::Regression,
                input_shape: InputShape::Flat { d: 3 },
                class_names: vec![],
            },
            cases: vec![],
            norm_stats: None,
            source: String::new(),
        };
        let w =
            surrogate_weights(&m, &[1.0, 2.0, 3.0], &train, &SurrogateConfig::default()).unwrap();
        assert!(w.is_fallback());
        assert_eq!(w.weights, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn underdetermined_sample_rejected() {
        let m = linear(vec![1.0, 1.0, 1.0], 0.0);
        let cfg = SurrogateConfig {
            n_samples: 3,
            ..Default::default()
        };
        assert!(matches!(
            surrogate_fit(&m, &[0.0; 3], &[1.0; 3], &cfg),
            Err(TwinError::Underdetermined {
                samples: 3,
                needed: 4
            })
        ));
    }

    #[test]
    fn seeded_sample_is_reproducible() {
        let m = linear(vec![1.0, -1.0], 0.0);
        let cfg = SurrogateConfig {
            n_samples: 50,
            seed: 5,
            ..Default::default()
        };
        let a = surrogate_fit(&m, &[0.0, 0.0], &[2.0, 0.0], &cfg).unwrap();
        let b = surrogate_fit(&m, &[0.0, 0.0], &[2.0, 0.0], &cfg).unwrap();
        assert_eq!(a, b);
    }
}
