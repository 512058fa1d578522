//! Shared oracles and fixtures for the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinsys::dataset::{Case, Dataset, FeatureSchema, InputShape, Label, LabelKind};
use twinsys::network::{LayerKind, LayerSpec, NetworkModel, Target};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn act(rng: &mut ChaCha8Rng, name: String) -> LayerSpec {
    if rng.random_bool(0.5) {
        LayerSpec::new(name, LayerKind::Relu)
    } else {
        LayerSpec::new(name, LayerKind::Sigmoid)
    }
}

/// Random architecture over dense/conv2d/maxpool/relu/sigmoid layers with at
/// most `max_params` parameters. Biases are randomised so that gradient
/// checks also exercise them.
pub fn random_architecture(seed: u64, max_params: usize) -> NetworkModel<f64> {
    let mut r = rng(seed);
    loop {
        let classification = r.random_bool(0.5);
        let n_out = r.random_range(1..=3) + usize::from(classification);
        let mut specs = Vec::new();
        let input;
        let mut flat_len;
        if r.random_bool(0.6) {
            let c = r.random_range(1..=2);
            let (h, w) = (r.random_range(5..=8), r.random_range(5..=8));
            input = InputShape::Image {
                channels: c,
                height: h,
                width: w,
            };
            let k = r.random_range(2..=3);
            let oc = r.random_range(1..=3);
            specs.push(LayerSpec::new("conv1", LayerKind::conv2d(c, oc, k)));
            specs.push(act(&mut r, "act1".into()));
            let (mut ch, mut hh, mut ww) = (oc, h - k + 1, w - k + 1);
            if r.random_bool(0.6) && hh >= 2 && ww >= 2 {
                specs.push(LayerSpec::new("pool1", LayerKind::Maxpool));
                hh /= 2;
                ww /= 2;
            }
            if r.random_bool(0.4) && hh >= 2 && ww >= 2 {
                let oc2 = r.random_range(1..=2);
                specs.push(LayerSpec::new("conv2", LayerKind::conv2d(ch, oc2, 2)));
                specs.push(act(&mut r, "act2".into()));
                ch = oc2;
                hh -= 1;
                ww -= 1;
            }
            specs.push(LayerSpec::new("flat", LayerKind::Flatten));
            flat_len = ch * hh * ww;
        } else {
            flat_len = r.random_range(2..=6);
            input = InputShape::Flat { d: flat_len };
        }
        let hidden = r.random_range(0..=2);
        for i in 0..hidden {
            let width = r.random_range(2..=6);
            specs.push(LayerSpec::new(
                format!("fc{i}"),
                LayerKind::Dense {
                    inputs: flat_len,
                    outputs: width,
                },
            ));
            specs.push(act(&mut r, format!("fc{i}_act")));
            flat_len = width;
        }
        specs.push(LayerSpec::new(
            "out",
            LayerKind::Dense {
                inputs: flat_len,
                outputs: n_out,
            },
        ));
        let task = if classification {
            specs.push(LayerSpec::new("softmax", LayerKind::Softmax));
            LabelKind::Classification { num_classes: n_out }
        } else {
            LabelKind::Regression
        };
        let mut model = NetworkModel::build(specs, input, task, r.random()).unwrap();
        if model.param_count() > max_params {
            continue;
        }
        for p in model.params_mut().iter_mut().flatten() {
            for b in &mut p.bias {
                *b = r.random_range(-0.5..0.5);
            }
        }
        return model;
    }
}

/// Smallest distance of any relu input from zero and any maxpool runner-up
/// from its window maximum; finite differences are unreliable near such
/// kinks.
pub fn kink_margin(model: &NetworkModel<f64>, x: &[f64]) -> f64 {
    let trace = model.trace(x).unwrap();
    let mut margin = f64::INFINITY;
    for (l, spec) in model.layers().iter().enumerate() {
        let input: &[f64] = if l == 0 { x } else { &trace.values[l - 1] };
        match spec.kind {
            LayerKind::Relu => {
                for &v in input {
                    margin = margin.min(v.abs());
                }
            }
            LayerKind::Maxpool => {
                let InputShape::Image {
                    channels,
                    height,
                    width,
                } = model.layer_input_shape(l)
                else {
                    unreachable!()
                };
                for c in 0..channels {
                    for i in 0..height / 2 {
                        for j in 0..width / 2 {
                            let mut w: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                                .iter()
                                .map(|(a, b)| input[(c * height + 2 * i + a) * width + 2 * j + b])
                                .collect();
                            w.sort_by(|a, b| b.total_cmp(a));
                            margin = margin.min(w[0] - w[1]);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    margin
}

pub fn random_target(model: &NetworkModel<f64>, r: &mut ChaCha8Rng) -> Target<f64> {
    match model.task() {
        LabelKind::Classification { num_classes } => Target::Class(r.random_range(0..*num_classes)),
        LabelKind::Regression => Target::Values(uniform_vec(r, model.output_len(), -1.0, 1.0)),
    }
}

fn param_slot(m: &mut NetworkModel<f64>, l: usize, which: usize, i: usize) -> &mut f64 {
    let q = m.params_mut()[l].as_mut().unwrap();
    if which == 0 {
        &mut q.weight[i]
    } else {
        &mut q.bias[i]
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between backprop and central differences over
/// every parameter and every input coordinate.
pub fn max_gradient_error(
    model: &NetworkModel<f64>,
    x: &[f64],
    target: &Target<f64>,
    h: f64,
) -> f64 {
    let grads = model.gradients(x, target).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for l in 0..model.layers().len() {
        let Some(p) = model.params()[l].as_ref() else {
            continue;
        };
        let analytic = grads.params[l].as_ref().unwrap();
        for (which, len) in [(0, p.weight.len()), (1, p.bias.len())] {
            for i in 0..len {
                let orig = *param_slot(&mut probe, l, which, i);
                *param_slot(&mut probe, l, which, i) = orig + h;
                let up = probe.loss(x, target).unwrap();
                *param_slot(&mut probe, l, which, i) = orig - h;
                let down = probe.loss(x, target).unwrap();
                *param_slot(&mut probe, l, which, i) = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = if which == 0 {
                    analytic.weight[i]
                } else {
                    analytic.bias[i]
                };
                worst = worst.max(relative_error(a, numeric));
            }
        }
    }
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = model.loss(&xp, target).unwrap();
        xp[i] = x[i] - h;
        let down = model.loss(&xp, target).unwrap();
        xp[i] = x[i];
        worst = worst.max(relative_error(grads.input[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Dense network `d -> hidden... -> out` with random activations between
/// layers and randomised biases.
pub fn random_mlp(
    r: &mut ChaCha8Rng,
    d: usize,
    hidden: &[usize],
    task: LabelKind,
) -> NetworkModel<f64> {
    let mut specs = Vec::new();
    let mut width = d;
    for (i, &h) in hidden.iter().enumerate() {
        specs.push(LayerSpec::new(
            format!("fc{i}"),
            LayerKind::Dense {
                inputs: width,
                outputs: h,
            },
        ));
        specs.push(act(r, format!("act{i}")));
        width = h;
    }
    let n_out = match task {
        LabelKind::Classification { num_classes } => num_classes,
        LabelKind::Regression => 1,
    };
    specs.push(LayerSpec::new(
        "out",
        LayerKind::Dense {
            inputs: width,
            outputs: n_out,
        },
    ));
    if task.is_classification() {
        specs.push(LayerSpec::new("softmax", LayerKind::Softmax));
    }
    let mut m = NetworkModel::build(specs, InputShape::Flat { d }, task, r.random()).unwrap();
    for p in m.params_mut().iter_mut().flatten() {
        for b in &mut p.bias {
            *b = r.random_range(-0.5..0.5);
        }
    }
    m
}

/// Tabular dataset with uniform features in `[-2, 2)` and random labels
/// matching `task`.
pub fn random_dataset(r: &mut ChaCha8Rng, n: usize, d: usize, task: &LabelKind) -> Dataset<f64> {
    let cases = (0..n)
        .map(|i| Case {
            id: i,
            origin: i,
            features: uniform_vec(r, d, -2.0, 2.0),
            label: match task {
                LabelKind::Classification { num_classes } => {
                    Label::Class(r.random_range(0..*num_classes))
                }
                LabelKind::Regression => Label::Value(r.random_range(-1.0..1.0)),
            },
            raw: None,
        })
        .collect();
    let class_names = match task {
        LabelKind::Classification { num_classes } => {
            (0..*num_classes).map(|c| format!("c{c}")).collect()
        }
        LabelKind::Regression => Vec::new(),
    };
    Dataset {
        schema: FeatureSchema {
            feature_names: (0..d).map(|j| format!("f{j}")).collect(),
            label_kind: task.clone(),
            input_shape: InputShape::Flat { d },
            class_names,
        },
        cases,
        norm_stats: None,
        source: "synthetic".into(),
    }
}

/// Reorders input features so that new feature `j` is old feature
/// `perm[j]`, in the data and in the first layer of the model.
pub fn permute_features(
    model: &NetworkModel<f64>,
    data: &Dataset<f64>,
    perm: &[usize],
) -> (NetworkModel<f64>, Dataset<f64>) {
    let mut m = model.clone();
    let d = perm.len();
    let p = m.params_mut()[0].as_mut().expect("dense first layer");
    let rows = p.weight.len() / d;
    let old = p.weight.clone();
    for o in 0..rows {
        for j in 0..d {
            p.weight[o * d + j] = old[o * d + perm[j]];
        }
    }
    let mut ds = data.clone();
    ds.schema.feature_names = perm
        .iter()
        .map(|&j| data.schema.feature_names[j].clone())
        .collect();
    for c in &mut ds.cases {
        c.features = permute(&c.features, perm);
    }
    (m, ds)
}

pub fn permute(x: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&j| x[j]).collect()
}

pub fn random_perm(r: &mut ChaCha8Rng, d: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..d).collect();
    p.shuffle(r);
    p
}
