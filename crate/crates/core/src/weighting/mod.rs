//! Feature weights describing what a trained network has learned.
//!
//! Global schemes produce one vector for the whole input space; local
//! schemes (surrogate, contribution) produce one per query. All of them end
//! in a non-negative vector summing to one, ready to parameterise a weighted
//! Euclidean distance.

mod contribution;
mod global;
mod surrogate;

pub use contribution::{contribution_weights, contributions, default_baseline, Contributions};
pub use global::{global_weights, GlobalScheme};
pub use surrogate::{surrogate_fit, surrogate_weights, SurrogateConfig, SurrogateFit};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Result, TwinError};
use crate::network::NetworkModel;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Sensitivity,
    Activity,
    Relevance,
    Saliency,
    Surrogate,
    Contribution,
    Uniform,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::Sensitivity,
        Scheme::Activity,
        Scheme::Relevance,
        Scheme::Saliency,
        Scheme::Surrogate,
        Scheme::Contribution,
        Scheme::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Sensitivity => "sensitivity",
            Scheme::Activity => "activity",
            Scheme::Relevance => "relevance",
            Scheme::Saliency => "saliency",
            Scheme::Surrogate => "surrogate",
            Scheme::Contribution => "contribution",
            Scheme::Uniform => "uniform",
        }
    }

    /// Local schemes produce a different weight vector for every query.
    pub fn is_local(self) -> bool {
        matches!(self, Scheme::Surrogate | Scheme::Contribution)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = TwinError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                TwinError::InvalidArgument(format!(
                    "unknown scheme {s:?}; valid: {}",
                    Scheme::ALL.map(Scheme::name).join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    Local { query: Option<usize> },
}

/// Feature space a weight vector (or a case index) lives in: the raw inputs
/// or the flattened output of a named layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Space {
    Input,
    Layer(String),
}

impl Space {
    /// Dimensionality of this space for `model`.
    pub fn dim<T: Scalar>(&self, model: &NetworkModel<T>) -> Result<usize> {
        match self {
            Space::Input => Ok(model.input_len()),
            Space::Layer(name) => Ok(model.layer_shape(model.layer_index(name)?).len()),
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Space::Input => f.write_str("input"),
            Space::Layer(name) => write!(f, "layer:{name}"),
        }
    }
}

impl FromStr for Space {
    type Err = TwinError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Space::Input),
            _ => match s.strip_prefix("layer:") {
                Some(name) if !name.is_empty() => Ok(Space::Layer(name.to_string())),
                _ => Err(TwinError::InvalidArgument(format!(
                    "space must be `input` or `layer:NAME`, got {s:?}"
                ))),
            },
        }
    }
}

impl From<Space> for String {
    fn from(s: Space) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Space {
    type Error = TwinError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    #[default]
    Computed,
    /// Raw scores vanished and the weights were replaced by `1/d`.
    UniformFallback,
}

/// Normalised, non-negative importance vector over a feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights<T> {
    pub scheme: Scheme,
    #[serde(default)]
    pub provenance: Provenance,
    pub scope: Scope,
    pub space: Space,
    pub weights: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signed_contributions: Option<Vec<T>>,
}

impl<T: Scalar> FeatureWeights<T> {
    /// Normalises raw non-negative scores to sum to one, falling back to
    /// uniform weights when they sum to zero.
    pub fn from_scores(scheme: Scheme, scope: Scope, space: Space, raw: Vec<T>) -> Result<Self> {
        if raw.is_empty() {
            return Err(TwinError::InvalidArgument("empty feature space".into()));
        }
        if raw.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(TwinError::NonFiniteOutput);
        }
        let total: T = raw.iter().copied().sum();
        let (weights, provenance) = if total > T::zero() && total.is_finite() {
            (
                raw.into_iter().map(|r| r / total).collect(),
                Provenance::Computed,
            )
        } else {
            (uniform_vec(raw.len()), Provenance::UniformFallback)
        };
        Ok(FeatureWeights {
            scheme,
            provenance,
            scope,
            space,
            weights,
            signed_contributions: None,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_fallback(&self) -> bool {
        self.provenance == Provenance::UniformFallback
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("weights serialize")
    }
}

fn uniform_vec<T: Scalar>(d: usize) -> Vec<T> {
    let w = T::one() / T::lit(d as f64);
    vec![w; d]
}

/// `1/d` on every feature of the input space.
pub fn uniform_weights<T: Scalar>(d: usize) -> Result<FeatureWeights<T>> {
    uniform_in(d, Space::Input)
}

pub fn uniform_in<T: Scalar>(d: usize, space: Space) -> Result<FeatureWeights<T>> {
    if d == 0 {
        return Err(TwinError::InvalidArgument(
            "uniform weights need d >= 1".into(),
        ));
    }
    Ok(FeatureWeights {
        scheme: Scheme::Uniform,
        provenance: Provenance::Computed,
        scope: Scope::Global,
        space,
        weights: uniform_vec(d),
        signed_contributions: None,
    })
}

/// Scheme plus its parameters, as selected by a caller.
#[derive(Clone, Debug, PartialEq)]
pub enum SchemeSpec<T> {
    Global(GlobalScheme),
    Surrogate(SurrogateConfig),
    /// Baseline defaults to [`default_baseline`] of the training data.
    Contribution {
        baseline: Option<Vec<T>>,
    },
    Uniform,
}

impl<T: Scalar> SchemeSpec<T> {
    pub fn scheme(&self) -> Scheme {
        match self {
            SchemeSpec::Global(g) => g.scheme(),
            SchemeSpec::Surrogate(_) => Scheme::Surrogate,
            SchemeSpec::Contribution { .. } => Scheme::Contribution,
            SchemeSpec::Uniform => Scheme::Uniform,
        }
    }
}

impl<T: Scalar> From<Scheme> for SchemeSpec<T> {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Sensitivity => SchemeSpec::Global(GlobalScheme::Sensitivity),
            Scheme::Activity => SchemeSpec::Global(GlobalScheme::Activity),
            Scheme::Relevance => SchemeSpec::Global(GlobalScheme::Relevance),
            Scheme::Saliency => SchemeSpec::Global(GlobalScheme::Saliency),
            Scheme::Surrogate => SchemeSpec::Surrogate(SurrogateConfig::default()),
            Scheme::Contribution => SchemeSpec::Contribution { baseline: None },
            Scheme::Uniform => SchemeSpec::Uniform,
        }
    }
}

/// Produces the weight vector a scheme assigns to each query, computing
/// global weights once up front.
#[derive(Clone, Debug)]
pub struct Weigher<'a, T> {
    model: &'a NetworkModel<T>,
    train: &'a Dataset<T>,
    spec: SchemeSpec<T>,
    space: Space,
    global: Option<FeatureWeights<T>>,
    baseline: Vec<T>,
}

impl<'a, T: Scalar> Weigher<'a, T> {
    pub fn new(
        model: &'a NetworkModel<T>,
        train: &'a Dataset<T>,
        spec: SchemeSpec<T>,
        space: Space,
    ) -> Result<Self> {
        let incompatible = || TwinError::SchemeSpaceIncompatible {
            scheme: spec.scheme().to_string(),
            space: space.to_string(),
        };
        let global = match &spec {
            SchemeSpec::Global(g) => {
                if space != Space::Input {
                    return Err(incompatible());
                }
                Some(global_weights(model, train, *g)?)
            }
            SchemeSpec::Uniform => Some(uniform_in(space.dim(model)?, space.clone())?),
            SchemeSpec::Surrogate(cfg) => {
                if space != Space::Input {
                    return Err(incompatible());
                }
                cfg.validate(model.input_len())?;
                None
            }
            SchemeSpec::Contribution { .. } => {
                space.dim(model)?;
                None
            }
        };
        let baseline = match &spec {
            SchemeSpec::Contribution { baseline: Some(b) } => b.clone(),
            _ => default_baseline(train),
        };
        Ok(Weigher {
            model,
            train,
            spec,
            space,
            global,
            baseline,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.spec.scheme()
    }

    pub fn space(&self) -> &Space {
        &self.space
    }

    /// Weights for one query. `seed` only affects the surrogate scheme.
    pub fn weights_for(
        &self,
        query: &[T],
        query_id: Option<usize>,
        seed: u64,
    ) -> Result<FeatureWeights<T>> {
        if let Some(g) = &self.global {
            return Ok(g.clone());
        }
        let mut w = match &self.spec {
            SchemeSpec::Surrogate(cfg) => {
                let cfg = SurrogateConfig {
                    seed,
                    ..cfg.clone()
                };
                surrogate_weights(self.model, query, self.train, &cfg)?
            }
            SchemeSpec::Contribution { .. } => {
                contribution_weights(self.model, query, &self.baseline, None, &self.space)?
            }
            _ => unreachable!("global schemes are cached"),
        };
        w.scope = Scope::Local { query: query_id };
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_weights::<f64>(4).unwrap().weights, vec![0.25; 4]);
        assert_eq!(uniform_weights::<f64>(1).unwrap().weights, vec![1.0]);
        assert!(uniform_weights::<f64>(0).is_err());
        let w = uniform_weights::<f64>(3).unwrap();
        assert_eq!(w.scheme, Scheme::Uniform);
        assert_eq!(w.scope, Scope::Global);
    }

    #[test]
    fn zero_scores_fall_back_to_uniform() {
        let w = FeatureWeights::<f64>::from_scores(
            Scheme::Activity,
            Scope::Global,
            Space::Input,
            vec![0.0, 0.0],
        )
        .unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        assert!(w.is_fallback());
        let w = FeatureWeights::<f64>::from_scores(
            Scheme::Activity,
            Scope::Global,
            Space::Input,
            vec![3.0, 1.0],
        )
        .unwrap();
        assert_eq!(w.weights, vec![0.75, 0.25]);
        assert!(!w.is_fallback());
    }

    #[test]
    fn json_shape() {
        let mut w = uniform_in::<f64>(2, Space::Layer("fc1".into())).unwrap();
        w.signed_contributions = Some(vec![1.0, -1.0]);
        let v: serde_json::Value = serde_json::from_str(&w.to_json()).unwrap();
        assert_eq!(v["scheme"], "uniform");
        assert_eq!(v["space"], "layer:fc1");
        assert_eq!(v["scope"], "global");
        assert_eq!(v["signed_contributions"][1], -1.0);
        let back: FeatureWeights<f64> = serde_json::from_value(v).unwrap();
        assert_eq!(back, w);
        let local = Scope::Local { query: Some(3) };
        assert_eq!(
            serde_json::to_string(&local).unwrap(),
            r#"{"local":{"query":3}}"#
        );
    }

    #[test]
    fn names_parse() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("deeplift".parse::<Scheme>().is_err());
        assert_eq!(
            "layer:h1".parse::<Space>().unwrap(),
            Space::Layer("h1".into())
        );
        assert!("layer:".parse::<Space>().is_err());
    }
}
