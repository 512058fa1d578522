//! Explanation by example: the network's answer for a query next to the
//! training cases its twin retrieves, plus optional per-feature evidence and
//! a feature-activation map for convolutional models.

mod fam;
mod render;

pub use fam::{compute_fam, compute_fam_with, FeatureActivationMap, DEFAULT_QUANTILE};
pub use render::{mask_pgm, render, Artifact, Format};

use serde::{Deserialize, Serialize};

use crate::dataset::{Case, InputShape, Label, LabelKind};
use crate::error::{Result, TwinError};
use crate::network::{argmax, NetworkModel};
use crate::retrieval::{twin_predict, CaseIndex, Neighbor};
use crate::scalar::{all_finite, Scalar};
use crate::weighting::{FeatureWeights, Space};

pub const EXPLANATION_FORMAT: &str = "twinsys-explanation/v1";

/// The thing being explained. `label` is the ground truth when known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query<T> {
    pub id: Option<usize>,
    pub features: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label<T>>,
}

impl<T: Scalar> Query<T> {
    pub fn new(features: Vec<T>) -> Self {
        Query {
            id: None,
            features,
            raw: None,
            label: None,
        }
    }

    pub fn from_case(case: &Case<T>) -> Self {
        Query {
            id: Some(case.id),
            features: case.features.clone(),
            raw: case.raw.clone(),
            label: Some(case.label),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetPrediction<T> {
    Class { class: usize, probabilities: Vec<T> },
    Value { value: T },
}

impl<T: Scalar> NetPrediction<T> {
    pub fn from_output(task: &LabelKind, output: Vec<T>) -> Self {
        match task {
            LabelKind::Classification { .. } => NetPrediction::Class {
                class: argmax(&output),
                probabilities: output,
            },
            LabelKind::Regression => NetPrediction::Value { value: output[0] },
        }
    }

    pub fn as_label(&self) -> Label<T> {
        match self {
            NetPrediction::Class { class, .. } => Label::Class(*class),
            NetPrediction::Value { value } => Label::Value(*value),
        }
    }
}

/// Twin versus network: label agreement, or absolute error for regression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement<T> {
    Agrees(bool),
    AbsError(T),
}

impl<T: Scalar> Agreement<T> {
    pub fn between(twin: &Label<T>, network: &Label<T>) -> Result<Self> {
        match (twin, network) {
            (Label::Class(a), Label::Class(b)) => Ok(Agreement::Agrees(a == b)),
            (Label::Value(a), Label::Value(b)) => Ok(Agreement::AbsError((*a - *b).abs())),
            _ => Err(TwinError::InvalidArgument(
                "twin and network disagree on the task".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainedNeighbor<T> {
    pub neighbor: Neighbor<T>,
    pub case: Case<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopFeature<T> {
    pub index: usize,
    pub name: String,
    pub weight: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signed_contribution: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation<T> {
    pub format: String,
    /// Seed the weights were computed under, when the caller records it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub input_shape: InputShape,
    pub class_names: Vec<String>,
    pub query: Query<T>,
    pub prediction: NetPrediction<T>,
    pub weights: FeatureWeights<T>,
    pub neighbors: Vec<ExplainedNeighbor<T>>,
    pub twin_prediction: Label<T>,
    pub agreement: Agreement<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_features: Option<Vec<TopFeature<T>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fam: Option<FeatureActivationMap<T>>,
}

impl<T: Scalar> Explanation<T> {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("explanation serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let e: Self =
            serde_json::from_str(text).map_err(|err| TwinError::Malformed(err.to_string()))?;
        if e.format != EXPLANATION_FORMAT {
            return Err(TwinError::VersionMismatch {
                expected: EXPLANATION_FORMAT.into(),
                found: e.format,
            });
        }
        Ok(e)
    }

    pub fn class_name(&self, class: usize) -> String {
        self.class_names
            .get(class)
            .cloned()
            .unwrap_or_else(|| class.to_string())
    }
}

/// Runs the network on `query`, retrieves its `k` nearest cases under
/// `weights` and, with `top_m`, lists the `m` heaviest features.
pub fn explain<T: Scalar>(
    model: &NetworkModel<T>,
    index: &CaseIndex<T>,
    weights: &FeatureWeights<T>,
    query: &Query<T>,
    k: usize,
    top_m: Option<usize>,
) -> Result<Explanation<T>> {
    if query.features.len() != model.input_len() {
        return Err(TwinError::shape(
            "query",
            model.input_len(),
            query.features.len(),
        ));
    }
    if !all_finite(&query.features) {
        return Err(TwinError::InvalidArgument(
            "query has non-finite values".into(),
        ));
    }
    index.ensure_model(model)?;
    let schema = &index.dataset().schema;
    let prediction = NetPrediction::from_output(model.task(), model.forward(&query.features)?);
    let projected = index.project(model, &query.features)?;
    let found = index.retrieve(&projected, weights, k)?;
    let twin_prediction = twin_predict(&found, index, &schema.label_kind)?;
    let agreement = Agreement::between(&twin_prediction, &prediction.as_label())?;
    let top_features = match top_m {
        None => None,
        Some(0) => {
            return Err(TwinError::InvalidArgument(
                "top_m must be at least 1".into(),
            ));
        }
        Some(m) => Some(top_features(weights, &schema.feature_names, m)),
    };
    let neighbors = found
        .into_iter()
        .map(|n| ExplainedNeighbor {
            case: index.dataset().cases[n.case_id].clone(),
            neighbor: n,
        })
        .collect();
    Ok(Explanation {
        format: EXPLANATION_FORMAT.into(),
        seed: None,
        input_shape: schema.input_shape,
        class_names: schema.class_names.clone(),
        query: query.clone(),
        prediction,
        weights: weights.clone(),
        neighbors,
        twin_prediction,
        agreement,
        top_features,
        fam: None,
    })
}

/// The `m` largest weights, heaviest first, lower index first on ties.
pub fn top_features<T: Scalar>(
    weights: &FeatureWeights<T>,
    input_names: &[String],
    m: usize,
) -> Vec<TopFeature<T>> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights.weights[b]
            .partial_cmp(&weights.weights[a])
            .expect("finite weights")
            .then(a.cmp(&b))
    });
    order
        .into_iter()
        .take(m)
        .map(|i| TopFeature {
            index: i,
            name: match &weights.space {
                Space::Input => input_names
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| format!("x{i}")),
                Space::Layer(layer) => format!("{layer}[{i}]"),
            },
            weight: weights.weights[i],
            signed_contribution: weights.signed_contributions.as_ref().map(|c| c[i]),
        })
        .collect()
}
