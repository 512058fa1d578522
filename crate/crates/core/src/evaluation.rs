//! Twin fidelity: how often the weighted k-NN twin reproduces the network's
//! own answers on held-out queries.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Label};
use crate::error::{Result, TwinError};
use crate::explanation::{Agreement, NetPrediction};
use crate::network::NetworkModel;
use crate::retrieval::{twin_predict, CaseIndex};
use crate::scalar::Scalar;
use crate::weighting::{Scheme, SchemeSpec, Space, Weigher};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub scheme: Scheme,
    pub space: Space,
    pub k: usize,
    pub n_queries: usize,
    /// Queries whose twin label equals the network's (classification).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matches: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement_rate: Option<f64>,
    /// Mean |twin - network| (regression).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    /// Queries whose weights fell back to uniform.
    pub fallback_count: usize,
    pub seed: u64,
    pub runtime_ms: f64,
}

/// Errors when a test case comes from the same source row as a case base
/// entry. Datasets from different sources are disjoint by construction.
fn check_disjoint<T: Scalar>(train: &Dataset<T>, test: &Dataset<T>) -> Result<()> {
    if train.source != test.source {
        return Ok(());
    }
    let mut seen = vec![false; train.cases.iter().map(|c| c.origin + 1).max().unwrap_or(0)];
    for c in &train.cases {
        seen[c.origin] = true;
    }
    match test
        .cases
        .iter()
        .find(|c| seen.get(c.origin).copied().unwrap_or(false))
    {
        Some(c) => Err(TwinError::ProvenanceOverlap(c.origin)),
        None => Ok(()),
    }
}

/// Twin fidelity of one scheme over every case of `test`.
pub fn fidelity<T: Scalar>(
    model: &NetworkModel<T>,
    index: &CaseIndex<T>,
    spec: &SchemeSpec<T>,
    test: &Dataset<T>,
    k: usize,
    seed: u64,
) -> Result<FidelityReport> {
    fidelity_inner(model, index, spec, test, k, seed, true)
}

/// Like [`fidelity`] but without the provenance check, for callers that
/// want to measure self-retrieval on the training data itself.
pub fn fidelity_unchecked<T: Scalar>(
    model: &NetworkModel<T>,
    index: &CaseIndex<T>,
    spec: &SchemeSpec<T>,
    test: &Dataset<T>,
    k: usize,
    seed: u64,
) -> Result<FidelityReport> {
    fidelity_inner(model, index, spec, test, k, seed, false)
}

fn fidelity_inner<T: Scalar>(
    model: &NetworkModel<T>,
    index: &CaseIndex<T>,
    spec: &SchemeSpec<T>,
    test: &Dataset<T>,
    k: usize,
    seed: u64,
    check: bool,
) -> Result<FidelityReport> {
    let start = Instant::now();
    if test.is_empty() {
        return Err(TwinError::EmptyDataset);
    }
    if check {
        check_disjoint(index.dataset(), test)?;
    }
    if test.feature_count() != model.input_len() {
        return Err(TwinError::shape(
            "test vs model input",
            model.input_len(),
            test.feature_count(),
        ));
    }
    index.ensure_model(model)?;
    let weigher = Weigher::new(model, index.dataset(), spec.clone(), index.space().clone())?;
    let task = &index.dataset().schema.label_kind;

    let outcomes: Vec<(Agreement<T>, bool)> = test
        .cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let net = NetPrediction::from_output(model.task(), model.forward(&c.features)?);
            let w = weigher.weights_for(&c.features, Some(c.id), seed.wrapping_add(i as u64))?;
            let v = index.project(model, &c.features)?;
            let found = index.retrieve(&v, &w, k)?;
            let twin = twin_predict(&found, index, task)?;
            Ok((Agreement::between(&twin, &net.as_label())?, w.is_fallback()))
        })
        .collect::<Result<_>>()?;

    let n = outcomes.len();
    let fallback_count = outcomes.iter().filter(|o| o.1).count();
    let (matches, agreement_rate, mae) = if task.is_classification() {
        let m = outcomes
            .iter()
            .filter(|o| o.0 == Agreement::Agrees(true))
            .count();
        (Some(m), Some(m as f64 / n as f64), None)
    } else {
        let total: f64 = outcomes
            .iter()
            .map(|o| match o.0 {
                Agreement::AbsError(e) => e.as_f64(),
                Agreement::Agrees(_) => unreachable!("regression twin"),
            })
            .sum();
        (None, None, Some(total / n as f64))
    };
    Ok(FidelityReport {
        scheme: spec.scheme(),
        space: index.space().clone(),
        k,
        n_queries: n,
        matches,
        agreement_rate,
        mae,
        fallback_count,
        seed,
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// One report per scheme over the same queries and seed, best first.
pub fn compare_schemes<T: Scalar>(
    model: &NetworkModel<T>,
    index: &CaseIndex<T>,
    specs: &[SchemeSpec<T>],
    test: &Dataset<T>,
    k: usize,
    seed: u64,
) -> Result<Vec<FidelityReport>> {
    let mut reports = specs
        .iter()
        .map(|s| fidelity(model, index, s, test, k, seed))
        .collect::<Result<Vec<_>>>()?;
    rank_reports(&mut reports);
    Ok(reports)
}

/// Stable sort: descending agreement, or ascending MAE for regression.
pub fn rank_reports(reports: &mut [FidelityReport]) {
    reports.sort_by(|a, b| match (a.agreement_rate, b.agreement_rate) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        _ => a
            .mae
            .unwrap_or(f64::INFINITY)
            .total_cmp(&b.mae.unwrap_or(f64::INFINITY)),
    });
}

/// Aligned-column table. Timings vary between runs, so they are only shown
/// on request.
pub fn render_table(reports: &[FidelityReport], timings: bool) -> String {
    let regression = reports.iter().any(|r| r.mae.is_some());
    let mut rows: Vec<Vec<String>> = vec![{
        let mut h = vec!["scheme", "space", "k", "queries"];
        if regression {
            h.push("mae");
        } else {
            h.extend(["matches", "agreement"]);
        }
        h.push("fallbacks");
        if timings {
            h.push("runtime_ms");
        }
        h.into_iter().map(String::from).collect()
    }];
    for r in reports {
        let mut row = vec![
            r.scheme.to_string(),
            r.space.to_string(),
            r.k.to_string(),
            r.n_queries.to_string(),
        ];
        if regression {
            row.push(r.mae.map_or_else(|| "-".into(), |v| format!("{v:.6}")));
        } else {
            row.push(r.matches.map_or_else(|| "-".into(), |v| v.to_string()));
            row.push(
                r.agreement_rate
                    .map_or_else(|| "-".into(), |v| format!("{v:.4}")),
            );
        }
        row.push(r.fallback_count.to_string());
        if timings {
            row.push(format!("{:.1}", r.runtime_ms));
        }
        rows.push(row);
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| {
                if c < 2 {
                    format!("{v:<w$}", w = widths[c])
                } else {
                    format!("{v:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// JSON array of reports; `runtime_ms` is zeroed unless `timings`.
pub fn reports_json(reports: &[FidelityReport], timings: bool) -> String {
    let shown: Vec<FidelityReport> = reports
        .iter()
        .map(|r| FidelityReport {
            runtime_ms: if timings { r.runtime_ms } else { 0.0 },
            ..r.clone()
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&shown).expect("reports serialize");
    s.push('\n');
    s
}

/// Network output as a label, for callers comparing against the twin.
pub fn network_label<T: Scalar>(model: &NetworkModel<T>, x: &[T]) -> Result<Label<T>> {
    Ok(NetPrediction::from_output(model.task(), model.forward(x)?).as_label())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_csv, split, InputShape, LabelColumn, LabelKind, Task};
    use crate::network::{LayerKind, LayerSpec};
    use crate::retrieval::build_index;
    use crate::weighting::GlobalScheme;

    fn linear_classifier() -> NetworkModel<f64> {
        // class 1 iff x > 0
        let mut m = NetworkModel::build(
            vec![
                LayerSpec::new(
                    "o",
                    LayerKind::Dense {
                        inputs: 1,
                        outputs: 2,
                    },
                ),
                LayerSpec::new("s", LayerKind::Softmax),
            ],
            InputShape::Flat { d: 1 },
            LabelKind::Classification { num_classes: 2 },
            0,
        )
        .unwrap();
        let p = m.params_mut()[0].as_mut().unwrap();
        p.weight = vec![-1.0, 1.0];
        p.bias = vec![0.0, 0.0];
        m
    }

    fn line_data(values: &[(f64, &str)]) -> Dataset<f64> {
        let mut text = String::from("x,y\n");
        for (x, l) in values {
            text.push_str(&format!("{x},{l}\n"));
        }
        parse_csv(&text, &LabelColumn::Index(1), Task::Classification).unwrap()
    }

    #[test]
    fn saturated_agreement() {
        // labels follow the network's rule, so every 1-NN agrees
        let pts: Vec<(f64, &str)> = (0..40)
            .map(|i| {
                let x = i as f64 * 0.5 - 9.75;
                (x, if x > 0.0 { "P" } else { "N" })
            })
            .collect();
        let data = line_data(&pts);
        let (tr, te) = split(&data, 0.25, 4).unwrap();
        let m = linear_classifier();
        let idx = build_index(&tr, Space::Input, None).unwrap();
        let r = fidelity(&m, &idx, &SchemeSpec::Uniform, &te, 1, 0).unwrap();
        assert_eq!(r.n_queries, te.len());
        assert_eq!(r.agreement_rate, Some(1.0));
        assert_eq!(r.matches, Some(te.len()));
    }

    #[test]
    fn three_of_four() {
        let m = linear_classifier();
        // N N P P, class indices by first appearance: N=0, P=1
        let data = line_data(&[
            (-2.0, "N"),
            (-1.0, "N"),
            (1.0, "P"),
            (2.0, "P"),
            (-3.0, "N"),
            (-0.4, "P"),
            (0.5, "P"),
            (3.0, "P"),
        ]);
        let (tr, te) = split(&data, 0.5, 1).unwrap();
        let idx = build_index(&tr, Space::Input, None).unwrap();
        let r = fidelity(&m, &idx, &SchemeSpec::Uniform, &te, 1, 0).unwrap();
        // oracle: count by brute force
        let mut hits = 0;
        for c in &te.cases {
            let net = m.predict_class(&c.features).unwrap();
            let near = tr
                .cases
                .iter()
                .min_by(|a, b| {
                    (a.features[0] - c.features[0])
                        .abs()
                        .total_cmp(&(b.features[0] - c.features[0]).abs())
                        .then(a.id.cmp(&b.id))
                })
                .unwrap();
            hits += usize::from(near.label.class() == Some(net));
        }
        assert_eq!(r.matches, Some(hits));
        assert_eq!(r.agreement_rate, Some(hits as f64 / 4.0));
    }

    #[test]
    fn provenance_overlap_rejected() {
        let data = line_data(&[(-2.0, "N"), (-1.0, "N"), (1.0, "P"), (2.0, "P")]);
        let m = linear_classifier();
        let idx = build_index(&data, Space::Input, None).unwrap();
        assert!(matches!(
            fidelity(&m, &idx, &SchemeSpec::Uniform, &data, 1, 0),
            Err(TwinError::ProvenanceOverlap(0))
        ));
        let r = fidelity_unchecked(&m, &idx, &SchemeSpec::Uniform, &data, 1, 0).unwrap();
        assert_eq!(r.agreement_rate, Some(1.0));
    }

    #[test]
    fn compare_is_deterministic_and_sorted() {
        let pts: Vec<(f64, &str)> = (0..30)
            .map(|i| {
                let x = (i as f64 * 0.77).sin() * 3.0;
                (x, if (x * 7.0).cos() > 0.0 { "A" } else { "B" })
            })
            .collect();
        let data = line_data(&pts);
        let (tr, te) = split(&data, 0.3, 2).unwrap();
        let m = linear_classifier();
        let idx = build_index(&tr, Space::Input, None).unwrap();
        let specs = vec![
            SchemeSpec::Uniform,
            SchemeSpec::Global(GlobalScheme::Sensitivity),
            SchemeSpec::Uniform,
        ];
        let a = compare_schemes(&m, &idx, &specs, &te, 3, 5).unwrap();
        let b = compare_schemes(&m, &idx, &specs, &te, 3, 5).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(render_table(&a, false), render_table(&b, false));
        assert_eq!(reports_json(&a, false), reports_json(&b, false));
        let rates: Vec<f64> = a.iter().map(|r| r.agreement_rate.unwrap()).collect();
        assert!(rates.windows(2).all(|w| w[0] >= w[1]));
        let uniform: Vec<&FidelityReport> =
            a.iter().filter(|r| r.scheme == Scheme::Uniform).collect();
        assert_eq!(uniform[0].matches, uniform[1].matches);

        let one = compare_schemes(&m, &idx, &specs[..1], &te, 3, 5).unwrap();
        let direct = fidelity(&m, &idx, &specs[0], &te, 3, 5).unwrap();
        assert_eq!(reports_json(&one, false), reports_json(&[direct], false));
    }

    #[test]
    fn regression_mae() {
        let mut m = NetworkModel::build(
            vec![LayerSpec::new(
                "o",
                LayerKind::Dense {
                    inputs: 1,
                    outputs: 1,
                },
            )],
            InputShape::Flat { d: 1 },
            LabelKind::Regression,
            0,
        )
        .unwrap();
        m.params_mut()[0].as_mut().unwrap().weight = vec![2.0];
        let mut text = String::from("x,y\n");
        for i in 0..10 {
            text.push_str(&format!("{},{}\n", i, 2 * i));
        }
        let data = parse_csv::<f64>(&text, &LabelColumn::Index(1), Task::Regression).unwrap();
        let (tr, te) = split(&data, 0.3, 0).unwrap();
        let idx = build_index(&tr, Space::Input, None).unwrap();
        let r = fidelity(&m, &idx, &SchemeSpec::Uniform, &te, 1, 0).unwrap();
        // oracle: the 1-NN sits one unit away on a slope-2 line
        let mut total = 0.0;
        for c in &te.cases {
            let x = c.features[0];
            let near = tr
                .cases
                .iter()
                .min_by(|a, b| {
                    (a.features[0] - x)
                        .abs()
                        .total_cmp(&(b.features[0] - x).abs())
                        .then(a.id.cmp(&b.id))
                })
                .unwrap();
            total += (near.label.value().unwrap() - 2.0 * x).abs();
        }
        assert!((r.mae.unwrap() - total / te.len() as f64).abs() < 1e-6);
        assert!(render_table(&[r], false).contains("mae"));
    }
}
