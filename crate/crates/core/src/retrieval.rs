//! The interpretable half of the twin: a case base searched by
//! feature-weighted Euclidean distance, either over the raw inputs or over a
//! network layer's activations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Label, LabelKind};
use crate::error::{Result, TwinError};
use crate::network::{to_json, NetworkModel};
use crate::scalar::{all_finite, Scalar};
use crate::weighting::{FeatureWeights, Space};

const IDW_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor<T> {
    pub case_id: usize,
    pub distance: T,
    /// 1-based.
    pub rank: usize,
}

/// SHA-256 of the model's serialised form.
pub fn model_fingerprint<T: Scalar>(model: &NetworkModel<T>) -> String {
    let digest = Sha256::digest(to_json(model).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseIndex<T> {
    data: Dataset<T>,
    space: Space,
    vectors: Vec<Vec<T>>,
    fingerprint: Option<String>,
}

/// Builds the case base over `train`. Layer spaces need the model whose
/// activations define them.
pub fn build_index<T: Scalar>(
    train: &Dataset<T>,
    space: Space,
    model: Option<&NetworkModel<T>>,
) -> Result<CaseIndex<T>> {
    if train.is_empty() {
        return Err(TwinError::EmptyDataset);
    }
    if let Some(m) = model {
        if m.input_len() != train.feature_count() {
            return Err(TwinError::shape(
                "dataset vs model input",
                m.input_len(),
                train.feature_count(),
            ));
        }
    }
    let vectors = match &space {
        Space::Input => train.cases.iter().map(|c| c.features.clone()).collect(),
        Space::Layer(name) => {
            let m = model.ok_or_else(|| TwinError::ModelRequired(space.to_string()))?;
            let l = m.layer_index(name)?;
            train
                .cases
                .par_iter()
                .map(|c| m.run_range(0, l, c.features.clone()))
                .collect::<Vec<_>>()
        }
    };
    if vectors.iter().any(|v| !all_finite(v)) {
        return Err(TwinError::NonFiniteOutput);
    }
    Ok(CaseIndex {
        data: train.clone(),
        space,
        vectors,
        fingerprint: model.map(model_fingerprint),
    })
}

impl<T: Scalar> CaseIndex<T> {
    pub fn space(&self) -> &Space {
        &self.space
    }

    pub fn dataset(&self) -> &Dataset<T> {
        &self.data
    }

    pub fn vectors(&self) -> &[Vec<T>] {
        &self.vectors
    }

    pub fn fingerprint(&self) -> Option<&str> {
        self.fingerprint.as_deref()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    /// Errors unless `model` produced this index's latent vectors.
    pub fn ensure_model(&self, model: &NetworkModel<T>) -> Result<()> {
        if let Space::Layer(_) = self.space {
            let fp = model_fingerprint(model);
            if self.fingerprint.as_deref() != Some(fp.as_str()) {
                return Err(TwinError::InvalidArgument(
                    "latent index was built by a different model".into(),
                ));
            }
        }
        Ok(())
    }

    /// Maps a raw input into this index's space.
    pub fn project(&self, model: &NetworkModel<T>, x: &[T]) -> Result<Vec<T>> {
        match &self.space {
            Space::Input => Ok(x.to_vec()),
            Space::Layer(name) => {
                let l = model.layer_index(name)?;
                if x.len() != model.input_len() {
                    return Err(TwinError::shape("query", model.input_len(), x.len()));
                }
                Ok(model.run_range(0, l, x.to_vec()))
            }
        }
    }

    /// Exact k-nearest cases under `sqrt(sum_i w_i (q_i - c_i)^2)`, ties
    /// broken by ascending case id.
    pub fn retrieve(
        &self,
        query: &[T],
        weights: &FeatureWeights<T>,
        k: usize,
    ) -> Result<Vec<Neighbor<T>>> {
        if weights.space != self.space {
            return Err(TwinError::SpaceMismatch {
                weights: weights.space.to_string(),
                index: self.space.to_string(),
            });
        }
        if weights.len() != self.dim() {
            return Err(TwinError::shape("weights", self.dim(), weights.len()));
        }
        if query.len() != self.dim() {
            return Err(TwinError::shape("query vector", self.dim(), query.len()));
        }
        if k == 0 || k > self.len() {
            return Err(TwinError::KOutOfRange { k, n: self.len() });
        }
        if !all_finite(query) {
            return Err(TwinError::InvalidArgument(
                "query has non-finite values".into(),
            ));
        }
        let w = &weights.weights;
        let mut scored: Vec<(T, usize)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(id, v)| {
                let d2 = v
                    .iter()
                    .zip(query)
                    .zip(w)
                    .fold(T::zero(), |acc, ((&c, &q), &wi)| {
                        acc + wi * (q - c) * (q - c)
                    });
                (d2.sqrt(), id)
            })
            .collect();
        let order = |a: &(T, usize), b: &(T, usize)| {
            a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (distance, case_id))| Neighbor {
                case_id,
                distance,
                rank: i + 1,
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        let doc = IndexFile {
            space: self.space.clone(),
            fingerprint: self.fingerprint.clone(),
            case_ids: self.data.cases.iter().map(|c| c.origin).collect(),
            vectors: self.vectors.clone(),
        };
        serde_json::to_string(&doc).expect("index serializes")
    }

    /// Restores a persisted index over `train`. Latent vectors are rebuilt
    /// from `model` whenever its fingerprint differs from the stored one.
    pub fn from_json(
        text: &str,
        train: &Dataset<T>,
        model: Option<&NetworkModel<T>>,
    ) -> Result<Self> {
        let doc: IndexFile<T> =
            serde_json::from_str(text).map_err(|e| TwinError::Malformed(e.to_string()))?;
        let origins: Vec<usize> = train.cases.iter().map(|c| c.origin).collect();
        if doc.case_ids != origins {
            return Err(TwinError::Malformed(
                "index case ids do not match the dataset".into(),
            ));
        }
        let trusted = match (&doc.space, model) {
            (Space::Input, _) => true,
            (Space::Layer(_), Some(m)) => doc.fingerprint.as_deref() == Some(&model_fingerprint(m)),
            (Space::Layer(_), None) => return Err(TwinError::ModelRequired(doc.space.to_string())),
        };
        if !trusted {
            return build_index(train, doc.space, model);
        }
        let index = CaseIndex {
            data: train.clone(),
            space: doc.space,
            vectors: doc.vectors,
            fingerprint: doc.fingerprint,
        };
        let d = index.dim();
        if index.vectors.len() != train.len()
            || index.vectors.iter().any(|v| v.len() != d || !all_finite(v))
        {
            return Err(TwinError::Malformed("inconsistent index vectors".into()));
        }
        Ok(index)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexFile<T> {
    space: Space,
    fingerprint: Option<String>,
    case_ids: Vec<usize>,
    vectors: Vec<Vec<T>>,
}

/// The twin's own answer: majority label (ties go to the label seen at the
/// best rank) or an inverse-distance-weighted mean.
pub fn twin_predict<T: Scalar>(
    neighbors: &[Neighbor<T>],
    index: &CaseIndex<T>,
    task: &LabelKind,
) -> Result<Label<T>> {
    if neighbors.is_empty() {
        return Err(TwinError::NoNeighbors);
    }
    let label_of = |n: &Neighbor<T>| index.data.cases[n.case_id].label;
    match task {
        LabelKind::Classification { .. } => {
            // (class, votes, best rank)
            let mut tally: Vec<(usize, usize, usize)> = Vec::new();
            for n in neighbors {
                let c = label_of(n).class().ok_or_else(|| {
                    TwinError::InvalidArgument("regression case in classification twin".into())
                })?;
                match tally.iter_mut().find(|t| t.0 == c) {
                    Some(t) => {
                        t.1 += 1;
                        t.2 = t.2.min(n.rank);
                    }
                    None => tally.push((c, 1, n.rank)),
                }
            }
            let best = tally
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
                .expect("non-empty");
            Ok(Label::Class(best.0))
        }
        LabelKind::Regression => {
            let eps = T::lit(IDW_EPS);
            let (mut num, mut den) = (T::zero(), T::zero());
            for n in neighbors {
                let v = label_of(n).value().ok_or_else(|| {
                    TwinError::InvalidArgument("class case in regression twin".into())
                })?;
                let w = T::one() / (n.distance + eps);
                num += w * v;
                den += w;
            }
            Ok(Label::Value(num / den))
        }
    }
}
