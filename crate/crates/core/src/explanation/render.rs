use std::fmt::Write as _;
use std::str::FromStr;

use super::{Agreement, Explanation, FeatureActivationMap, NetPrediction};
use crate::dataset::{InputShape, Label};
use crate::error::{Result, TwinError};
use crate::scalar::Scalar;

const MAX_COLUMNS: usize = 100;
/// Plain PGM readers expect lines of at most 70 characters.
const PGM_VALUES_PER_LINE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Pgm,
}

impl FromStr for Format {
    type Err = TwinError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            "pgm" => Ok(Format::Pgm),
            other => Err(TwinError::InvalidArgument(format!(
                "unknown format {other:?} (expected text, json or pgm)"
            ))),
        }
    }
}

/// One rendered output and its suggested file name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub fn render<T: Scalar>(e: &Explanation<T>, format: Format) -> Result<Vec<Artifact>> {
    match format {
        Format::Text => Ok(vec![Artifact {
            name: "explanation.txt".into(),
            bytes: text(e).into_bytes(),
        }]),
        Format::Json => Ok(vec![Artifact {
            name: "explanation.json".into(),
            bytes: e.to_json().into_bytes(),
        }]),
        Format::Pgm => pgm_panels(e),
    }
}

fn label_text<T: Scalar>(e: &Explanation<T>, l: &Label<T>) -> String {
    match l {
        Label::Class(c) => e.class_name(*c),
        Label::Value(v) => format!("{:.6}", v.as_f64()),
    }
}

fn clip(line: &str) -> String {
    line.chars().take(MAX_COLUMNS).collect()
}

fn text<T: Scalar>(e: &Explanation<T>) -> String {
    let mut lines = Vec::new();
    let w = &e.weights;
    lines.push(format!(
        "explanation  scheme={}  space={}  weights={}",
        w.scheme,
        w.space,
        if w.is_fallback() {
            "uniform-fallback"
        } else {
            "computed"
        }
    ));
    if let Some(seed) = e.seed {
        lines[0].push_str(&format!("  seed={seed}"));
    }
    let mut q = match e.query.id {
        Some(id) => format!("query #{id}"),
        None => "query".to_string(),
    };
    if let Some(l) = &e.query.label {
        q.push_str(&format!("  true label: {}", label_text(e, l)));
    }
    lines.push(q);
    match &e.prediction {
        NetPrediction::Class {
            class,
            probabilities,
        } => lines.push(format!(
            "network:     {}  (p = {:.4})",
            e.class_name(*class),
            probabilities[*class].as_f64()
        )),
        NetPrediction::Value { value } => lines.push(format!("network:     {:.6}", value.as_f64())),
    }
    let verdict = match e.agreement {
        Agreement::Agrees(true) => "agrees with the network".to_string(),
        Agreement::Agrees(false) => "disagrees with the network".to_string(),
        Agreement::AbsError(d) => format!("|twin - network| = {:.6}", d.as_f64()),
    };
    lines.push(format!(
        "twin:        {}  ({verdict})",
        label_text(e, &e.twin_prediction)
    ));
    lines.push(String::new());
    lines.push(format!("nearest cases (k = {})", e.neighbors.len()));
    lines.push(format!(
        "{:>6}  {:>8}  {:>14}  label",
        "rank", "case", "distance"
    ));
    for n in &e.neighbors {
        lines.push(format!(
            "{:>6}  {:>8}  {:>14.6}  {}",
            n.neighbor.rank,
            n.case.origin,
            n.neighbor.distance.as_f64(),
            label_text(e, &n.case.label)
        ));
    }
    if let Some(top) = &e.top_features {
        lines.push(String::new());
        lines.push(format!("top features (m = {})", top.len()));
        lines.push(format!(
            "{:<40}  {:>10}  {:>14}",
            "feature", "weight", "contribution"
        ));
        for t in top {
            let name: String = t.name.chars().take(40).collect();
            let c = t
                .signed_contribution
                .map_or_else(|| "-".to_string(), |c| format!("{:+.6}", c.as_f64()));
            lines.push(format!("{name:<40}  {:>10.6}  {c:>14}", t.weight.as_f64()));
        }
    }
    if let Some(f) = &e.fam {
        lines.push(String::new());
        lines.push(format!(
            "feature map: {}[{}]  contribution {:.6}{}",
            f.layer,
            f.map,
            f.contribution_of_unit.as_f64(),
            if f.degenerate { "  (degenerate)" } else { "" }
        ));
    }
    let mut out = String::new();
    for l in lines {
        let _ = writeln!(out, "{}", clip(&l));
    }
    out
}

fn pgm(width: usize, height: usize, comment: &str, pixels: &[u8]) -> Vec<u8> {
    let mut s = format!("P2\n# {comment}\n{width} {height}\n255\n");
    for row in pixels.chunks(width) {
        for chunk in row.chunks(PGM_VALUES_PER_LINE) {
            let line: Vec<String> = chunk.iter().map(u8::to_string).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
    }
    s.into_bytes()
}

/// Averages channels down to a single grey plane.
fn grey(raw: &[u8], channels: usize, plane: usize) -> Vec<u8> {
    (0..plane)
        .map(|i| {
            let sum: usize = (0..channels).map(|c| raw[c * plane + i] as usize).sum();
            ((sum + channels / 2) / channels) as u8
        })
        .collect()
}

fn pgm_panels<T: Scalar>(e: &Explanation<T>) -> Result<Vec<Artifact>> {
    let InputShape::Image {
        channels,
        height,
        width,
    } = e.input_shape
    else {
        return Err(TwinError::NotImage);
    };
    let plane = height * width;
    let image = |raw: Option<&Vec<u8>>, what: &str| -> Result<Vec<u8>> {
        match raw {
            Some(r) if r.len() == channels * plane => Ok(grey(r, channels, plane)),
            Some(r) => Err(TwinError::shape(what, channels * plane, r.len())),
            None => Err(TwinError::InvalidArgument(format!(
                "{what} has no raw image payload"
            ))),
        }
    };
    let mut out = vec![Artifact {
        name: "query.pgm".into(),
        bytes: pgm(
            width,
            height,
            "query",
            &image(e.query.raw.as_ref(), "query")?,
        ),
    }];
    for n in &e.neighbors {
        let comment = format!(
            "neighbour rank {} case {} label {}",
            n.neighbor.rank,
            n.case.origin,
            label_text(e, &n.case.label)
        );
        out.push(Artifact {
            name: format!("neighbor-{}.pgm", n.neighbor.rank),
            bytes: pgm(
                width,
                height,
                &comment,
                &image(n.case.raw.as_ref(), "neighbour")?,
            ),
        });
    }
    if let Some(f) = &e.fam {
        out.push(Artifact {
            name: "fam-mask.pgm".into(),
            bytes: mask_pgm(f),
        });
    }
    Ok(out)
}

/// The highlighted feature-activation mask as a P2 file.
pub fn mask_pgm<T: Scalar>(f: &FeatureActivationMap<T>) -> Vec<u8> {
    let comment = format!(
        "feature map {}[{}] threshold quantile {}",
        f.layer, f.map, f.threshold_quantile
    );
    pgm(f.width, f.height, &comment, &f.overlay())
}
