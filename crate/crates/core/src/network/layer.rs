use serde::{Deserialize, Serialize};

use crate::dataset::{InputShape, LabelKind};
use crate::error::{Result, TwinError};

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
    },
    /// Valid (unpadded) convolution; only stride 1 and padding 0 are
    /// supported.
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    /// 2x2 window, stride 2.
    Maxpool,
    Flatten,
    Relu,
    Sigmoid,
    Softmax,
}

impl LayerKind {
    pub fn conv2d(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        LayerKind::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            padding: 0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Maxpool => "maxpool",
            LayerKind::Flatten => "flatten",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Softmax => "softmax",
        }
    }

    pub fn is_elementwise(&self) -> bool {
        matches!(self, LayerKind::Relu | LayerKind::Sigmoid)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }
}

/// Output shape of every layer, or the first incompatibility.
pub(crate) fn check_chain(
    specs: &[LayerSpec],
    input: InputShape,
    task: &LabelKind,
) -> Result<Vec<InputShape>> {
    if specs.is_empty() {
        return Err(TwinError::InvalidNetwork("no layers".into()));
    }
    if input.is_empty() {
        return Err(TwinError::InvalidNetwork("empty input shape".into()));
    }
    let mut shapes = Vec::with_capacity(specs.len());
    let mut cur = input;
    for (l, spec) in specs.iter().enumerate() {
        if spec.name.is_empty() {
            return Err(TwinError::InvalidNetwork(format!("layer {l} has no name")));
        }
        if specs[..l].iter().any(|s| s.name == spec.name) {
            return Err(TwinError::InvalidNetwork(format!(
                "duplicate layer name {:?}",
                spec.name
            )));
        }
        let ctx = || format!("layer {:?}", spec.name);
        cur = match spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                match cur {
                    InputShape::Flat { d } if d == inputs => {}
                    other => return Err(TwinError::shape(ctx(), format!("flat({inputs})"), other)),
                }
                if outputs == 0 {
                    return Err(TwinError::InvalidNetwork(format!(
                        "{}: zero outputs",
                        ctx()
                    )));
                }
                InputShape::Flat { d: outputs }
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            } => {
                if stride != 1 || padding != 0 {
                    return Err(TwinError::InvalidNetwork(format!(
                        "{}: only stride 1 and padding 0 are supported",
                        ctx()
                    )));
                }
                if out_ch == 0 || kernel == 0 {
                    return Err(TwinError::InvalidNetwork(format!(
                        "{}: zero channels or kernel",
                        ctx()
                    )));
                }
                match cur {
                    InputShape::Image {
                        channels,
                        height,
                        width,
                    } if channels == in_ch && height >= kernel && width >= kernel => {
                        InputShape::Image {
                            channels: out_ch,
                            height: height - kernel + 1,
                            width: width - kernel + 1,
                        }
                    }
                    other => {
                        return Err(TwinError::shape(
                            ctx(),
                            format!("image({in_ch}x>={kernel}x>={kernel})"),
                            other,
                        ))
                    }
                }
            }
            LayerKind::Maxpool => match cur {
                InputShape::Image {
                    channels,
                    height,
                    width,
                } if height >= 2 && width >= 2 => InputShape::Image {
                    channels,
                    height: height / 2,
                    width: width / 2,
                },
                other => return Err(TwinError::shape(ctx(), "image at least 2x2", other)),
            },
            LayerKind::Flatten => InputShape::Flat { d: cur.len() },
            LayerKind::Relu | LayerKind::Sigmoid => cur,
            LayerKind::Softmax => {
                if l + 1 != specs.len() {
                    return Err(TwinError::InvalidNetwork(format!(
                        "softmax {:?} must be the final layer",
                        spec.name
                    )));
                }
                if !task.is_classification() {
                    return Err(TwinError::InvalidNetwork(
                        "softmax is only allowed for classification".into(),
                    ));
                }
                if l == 0 {
                    return Err(TwinError::InvalidNetwork(
                        "softmax needs a preceding layer".into(),
                    ));
                }
                match cur {
                    InputShape::Flat { .. } => cur,
                    other => return Err(TwinError::shape(ctx(), "flat", other)),
                }
            }
        };
        shapes.push(cur);
    }
    if let LabelKind::Classification { num_classes } = *task {
        if !matches!(specs.last().map(|s| &s.kind), Some(LayerKind::Softmax)) {
            return Err(TwinError::InvalidNetwork(
                "classification networks must end in softmax".into(),
            ));
        }
        if cur.len() != num_classes {
            return Err(TwinError::shape("network output", num_classes, cur.len()));
        }
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_grammar() {
        let specs: Vec<LayerSpec> = serde_json::from_str(
            r#"[{"name":"c1","kind":"conv2d","in_ch":1,"out_ch":4,"kernel":3},
                {"name":"p1","kind":"maxpool"},
                {"name":"f","kind":"flatten"},
                {"name":"fc","kind":"dense","in":16,"out":2},
                {"name":"out","kind":"softmax"}]"#,
        )
        .unwrap();
        assert_eq!(specs[0].kind, LayerKind::conv2d(1, 4, 3));
        let shapes = check_chain(
            &specs,
            InputShape::Image {
                channels: 1,
                height: 6,
                width: 6,
            },
            &LabelKind::Classification { num_classes: 2 },
        )
        .unwrap();
        assert_eq!(
            shapes[1],
            InputShape::Image {
                channels: 4,
                height: 2,
                width: 2
            }
        );
        let back = serde_json::to_string(&specs[3]).unwrap();
        assert_eq!(back, r#"{"name":"fc","kind":"dense","in":16,"out":2}"#);
    }

    #[test]
    fn rejects_strided_conv_and_regression_softmax() {
        let specs = vec![LayerSpec::new(
            "c",
            LayerKind::Conv2d {
                in_ch: 1,
                out_ch: 1,
                kernel: 2,
                stride: 2,
                padding: 0,
            },
        )];
        let img = InputShape::Image {
            channels: 1,
            height: 4,
            width: 4,
        };
        assert!(check_chain(&specs, img, &LabelKind::Regression).is_err());
        let specs = vec![
            LayerSpec::new(
                "d",
                LayerKind::Dense {
                    inputs: 2,
                    outputs: 2,
                },
            ),
            LayerSpec::new("s", LayerKind::Softmax),
        ];
        assert!(check_chain(&specs, InputShape::Flat { d: 2 }, &LabelKind::Regression).is_err());
        let dup = vec![
            LayerSpec::new(
                "d",
                LayerKind::Dense {
                    inputs: 2,
                    outputs: 2,
                },
            ),
            LayerSpec::new("d", LayerKind::Relu),
        ];
        assert!(check_chain(&dup, InputShape::Flat { d: 2 }, &LabelKind::Regression).is_err());
    }
}
