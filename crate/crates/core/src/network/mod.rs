//! The opaque half of the twin: a small feed-forward network with dense,
//! convolutional and pooling layers, trained with momentum SGD.
//!
//! Every layer's weights and activations stay inspectable, which the
//! weighting schemes rely on.

mod io;
mod layer;
mod train;

pub use io::{from_json, load, save, to_json, MODEL_VERSION};
pub use layer::{LayerKind, LayerSpec};
pub use train::{train, Hyper, TrainReport};

use crate::dataset::{InputShape, Label, LabelKind};
use crate::error::{Result, TwinError};
use crate::scalar::{all_finite, Scalar};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Weight and bias of one parameterised layer.
///
/// Dense weights are stored `[out][in]`, convolution kernels
/// `[out_ch][in_ch][k][k]`, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Params<T> {
    fn zeros_like(&self) -> Self {
        Params {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Post-activation values of every layer for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace<T> {
    pub names: Vec<String>,
    pub values: Vec<Vec<T>>,
}

impl<T> ActivationTrace<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i].as_slice())
    }

    pub fn output(&self) -> &[T] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Training target for a single case.
#[derive(Clone, Debug, PartialEq)]
pub enum Target<T> {
    Class(usize),
    Values(Vec<T>),
}

impl<T: Scalar> From<&Label<T>> for Target<T> {
    fn from(label: &Label<T>) -> Self {
        match *label {
            Label::Class(c) => Target::Class(c),
            Label::Value(v) => Target::Values(vec![v]),
        }
    }
}

/// Loss value plus exact gradients for every parameter and for the input.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub loss: T,
    pub params: Vec<Option<Params<T>>>,
    pub input: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel<T> {
    pub(crate) layers: Vec<LayerSpec>,
    pub(crate) params: Vec<Option<Params<T>>>,
    pub(crate) input_shape: InputShape,
    /// Output shape of each layer.
    pub(crate) shapes: Vec<InputShape>,
    pub(crate) task: LabelKind,
    pub(crate) seed: u64,
    /// Free-form pipeline description carried along in the model file.
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl<T: Scalar> NetworkModel<T> {
    /// Validates the layer chain and draws Glorot-uniform weights with zero
    /// biases from a ChaCha stream seeded by `seed`.
    pub fn build(
        specs: Vec<LayerSpec>,
        input_shape: InputShape,
        task: LabelKind,
        seed: u64,
    ) -> Result<Self> {
        let shapes = layer::check_chain(&specs, input_shape, &task)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            let p = match spec.kind {
                LayerKind::Dense { inputs, outputs } => {
                    Some(glorot(&mut rng, inputs * outputs, inputs, outputs, outputs))
                }
                LayerKind::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => {
                    let kk = kernel * kernel;
                    Some(glorot(
                        &mut rng,
                        out_ch * in_ch * kk,
                        in_ch * kk,
                        out_ch * kk,
                        out_ch,
                    ))
                }
                _ => None,
            };
            params.push(p);
        }
        let model = NetworkModel {
            layers: specs,
            params,
            input_shape,
            shapes,
            task,
            seed,
            metadata: Default::default(),
        };
        if model.param_count() == 0 {
            return Err(TwinError::InvalidNetwork(
                "network has no parameters".into(),
            ));
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Option<Params<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Params<T>>] {
        &mut self.params
    }

    pub fn task(&self) -> &LabelKind {
        &self.task
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_shape(&self) -> InputShape {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.len()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().map(InputShape::len).unwrap_or(0)
    }

    /// Output shape of layer `l`.
    pub fn layer_shape(&self, l: usize) -> InputShape {
        self.shapes[l]
    }

    /// Shape of the values entering layer `l`.
    pub fn layer_input_shape(&self, l: usize) -> InputShape {
        if l == 0 {
            self.input_shape
        } else {
            self.shapes[l - 1]
        }
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| TwinError::UnknownLayer(name.to_string()))
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().flatten().map(Params::len).sum()
    }

    pub fn has_softmax(&self) -> bool {
        matches!(
            self.layers.last().map(|s| &s.kind),
            Some(LayerKind::Softmax)
        )
    }

    /// Index of the layer whose output is the logit vector (the layer before
    /// a final softmax, otherwise the last layer).
    pub fn logit_layer(&self) -> usize {
        if self.has_softmax() {
            self.layers.len() - 2
        } else {
            self.layers.len() - 1
        }
    }

    /// Index of the last convolution, if any.
    pub fn last_conv(&self) -> Option<usize> {
        self.layers
            .iter()
            .rposition(|s| matches!(s.kind, LayerKind::Conv2d { .. }))
    }

    /// Default latent space for case retrieval: the values entering the final
    /// dense layer.
    pub fn penultimate_layer(&self) -> Option<usize> {
        let last_dense = self
            .layers
            .iter()
            .rposition(|s| matches!(s.kind, LayerKind::Dense { .. }))?;
        last_dense.checked_sub(1)
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(TwinError::shape(
                "network input",
                self.input_shape,
                format!("{} values", x.len()),
            ));
        }
        Ok(())
    }

    /// Network output: class probabilities for classification, raw values
    /// for regression.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.run(0, x.to_vec()))
    }

    /// Forward pass keeping every layer's output.
    pub fn trace(&self, x: &[T]) -> Result<ActivationTrace<T>> {
        self.check_input(x)?;
        let acts = self.activations(x);
        Ok(ActivationTrace {
            names: self.layers.iter().map(|s| s.name.clone()).collect(),
            values: acts.into_iter().skip(1).collect(),
        })
    }

    /// Pre-softmax outputs.
    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in 0..=self.logit_layer() {
            h = self.layer_forward(l, &h);
        }
        Ok(h)
    }

    /// Predicted class (argmax of the output, first index on ties).
    pub fn predict_class(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Runs layers `start..` on `h`, the value entering layer `start`.
    pub fn run(&self, start: usize, mut h: Vec<T>) -> Vec<T> {
        for l in start..self.layers.len() {
            h = self.layer_forward(l, &h);
        }
        h
    }

    /// Runs layers `start..=end` on `h`.
    pub fn run_range(&self, start: usize, end: usize, mut h: Vec<T>) -> Vec<T> {
        for l in start..=end {
            h = self.layer_forward(l, &h);
        }
        h
    }

    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    pub(crate) fn activations(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in 0..self.layers.len() {
            let next = self.layer_forward(l, &acts[l]);
            acts.push(next);
        }
        acts
    }

    /// Loss for one case: cross-entropy on the softmax output, or mean
    /// squared error over the output vector.
    pub fn loss(&self, x: &[T], target: &Target<T>) -> Result<T> {
        let logits = self.logits(x)?;
        self.loss_from_logits(&logits, target)
    }

    fn loss_from_logits(&self, logits: &[T], target: &Target<T>) -> Result<T> {
        match (target, self.has_softmax()) {
            (Target::Class(c), true) => {
                let c = *c;
                if c >= logits.len() {
                    return Err(TwinError::InvalidTarget {
                        index: c,
                        outputs: logits.len(),
                    });
                }
                Ok(log_sum_exp(logits) - logits[c])
            }
            (Target::Values(t), false) => {
                if t.len() != logits.len() {
                    return Err(TwinError::shape("regression target", logits.len(), t.len()));
                }
                let m = T::lit(t.len() as f64);
                Ok(logits
                    .iter()
                    .zip(t)
                    .map(|(&y, &t)| (y - t) * (y - t))
                    .sum::<T>()
                    / m)
            }
            _ => Err(TwinError::InvalidArgument(
                "target kind does not match the network task".into(),
            )),
        }
    }

    /// Exact backpropagation gradients of [`NetworkModel::loss`].
    pub fn gradients(&self, x: &[T], target: &Target<T>) -> Result<Gradients<T>> {
        self.check_input(x)?;
        let acts = self.activations(x);
        let top = self.logit_layer();
        let logits = &acts[top + 1];
        let loss = self.loss_from_logits(logits, target)?;
        let grad = match target {
            Target::Class(c) => {
                let mut p = softmax(logits);
                p[*c] -= T::one();
                p
            }
            Target::Values(t) => {
                let scale = T::lit(2.0) / T::lit(t.len() as f64);
                logits
                    .iter()
                    .zip(t)
                    .map(|(&y, &t)| scale * (y - t))
                    .collect()
            }
        };
        let mut params: Vec<Option<Params<T>>> = self
            .params
            .iter()
            .map(|p| p.as_ref().map(Params::zeros_like))
            .collect();
        let input = self.backward(&acts, top, 0, grad, Some(&mut params));
        Ok(Gradients {
            loss,
            params,
            input,
        })
    }

    /// Propagates `grad` (w.r.t. the output of layer `from`) down to the
    /// input of layer `to`, accumulating parameter gradients when asked.
    pub(crate) fn backward(
        &self,
        acts: &[Vec<T>],
        from: usize,
        to: usize,
        mut grad: Vec<T>,
        mut param_grads: Option<&mut Vec<Option<Params<T>>>>,
    ) -> Vec<T> {
        for l in (to..=from).rev() {
            let pg = param_grads.as_deref_mut().and_then(|pgs| pgs[l].as_mut());
            grad = self.layer_backward(l, &acts[l], &acts[l + 1], &grad, pg);
        }
        grad
    }

    pub(crate) fn layer_forward(&self, l: usize, x: &[T]) -> Vec<T> {
        let in_shape = self.layer_input_shape(l);
        match self.layers[l].kind {
            LayerKind::Dense { inputs, outputs } => {
                let p = self.params[l].as_ref().expect("dense params");
                (0..outputs)
                    .map(|o| {
                        let row = &p.weight[o * inputs..(o + 1) * inputs];
                        row.iter()
                            .zip(x)
                            .fold(T::zero(), |acc, (&w, &v)| acc + w * v)
                            + p.bias[o]
                    })
                    .collect()
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                let (h, w) = spatial(in_shape);
                let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                let p = self.params[l].as_ref().expect("conv params");
                let mut out = vec![T::zero(); out_ch * oh * ow];
                for o in 0..out_ch {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = T::zero();
                            for c in 0..in_ch {
                                for a in 0..kernel {
                                    let xrow = (c * h + i + a) * w + j;
                                    let wrow = ((o * in_ch + c) * kernel + a) * kernel;
                                    for b in 0..kernel {
                                        acc += p.weight[wrow + b] * x[xrow + b];
                                    }
                                }
                            }
                            out[(o * oh + i) * ow + j] = acc + p.bias[o];
                        }
                    }
                }
                out
            }
            LayerKind::Maxpool => {
                let (c, h, w) = chw(in_shape);
                let (oh, ow) = (h / 2, w / 2);
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let idx = pool_argmax(x, ch, h, w, i, j);
                            out.push(x[idx]);
                        }
                    }
                }
                out
            }
            LayerKind::Flatten => x.to_vec(),
            LayerKind::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
            LayerKind::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            LayerKind::Softmax => softmax(x),
        }
    }

    /// Gradient w.r.t. the input of layer `l`, given the gradient w.r.t. its
    /// output. Parameter gradients are added into `pg`.
    pub(crate) fn layer_backward(
        &self,
        l: usize,
        input: &[T],
        output: &[T],
        grad_out: &[T],
        pg: Option<&mut Params<T>>,
    ) -> Vec<T> {
        let in_shape = self.layer_input_shape(l);
        match self.layers[l].kind {
            LayerKind::Dense { inputs, .. } => {
                let p = self.params[l].as_ref().expect("dense params");
                let mut gin = vec![T::zero(); inputs];
                for (row, &g) in p.weight.chunks(inputs).zip(grad_out) {
                    for (gi, &w) in gin.iter_mut().zip(row) {
                        *gi += w * g;
                    }
                }
                if let Some(pg) = pg {
                    for ((row, b), &g) in
                        pg.weight.chunks_mut(inputs).zip(&mut pg.bias).zip(grad_out)
                    {
                        for (gw, &x) in row.iter_mut().zip(input) {
                            *gw += g * x;
                        }
                        *b += g;
                    }
                }
                gin
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                let (h, w) = spatial(in_shape);
                let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                let p = self.params[l].as_ref().expect("conv params");
                let mut gin = vec![T::zero(); in_ch * h * w];
                for o in 0..out_ch {
                    for i in 0..oh {
                        for j in 0..ow {
                            let g = grad_out[(o * oh + i) * ow + j];
                            for c in 0..in_ch {
                                for a in 0..kernel {
                                    let xrow = (c * h + i + a) * w + j;
                                    let wrow = ((o * in_ch + c) * kernel + a) * kernel;
                                    for b in 0..kernel {
                                        gin[xrow + b] += p.weight[wrow + b] * g;
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(pg) = pg {
                    for o in 0..out_ch {
                        for i in 0..oh {
                            for j in 0..ow {
                                let g = grad_out[(o * oh + i) * ow + j];
                                for c in 0..in_ch {
                                    for a in 0..kernel {
                                        let xrow = (c * h + i + a) * w + j;
                                        let wrow = ((o * in_ch + c) * kernel + a) * kernel;
                                        for b in 0..kernel {
                                            pg.weight[wrow + b] += input[xrow + b] * g;
                                        }
                                    }
                                }
                                pg.bias[o] += g;
                            }
                        }
                    }
                }
                gin
            }
            LayerKind::Maxpool => {
                let (c, h, w) = chw(in_shape);
                let (oh, ow) = (h / 2, w / 2);
                let mut gin = vec![T::zero(); input.len()];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let idx = pool_argmax(input, ch, h, w, i, j);
                            gin[idx] += grad_out[(ch * oh + i) * ow + j];
                        }
                    }
                }
                gin
            }
            LayerKind::Flatten => grad_out.to_vec(),
            LayerKind::Relu => input
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                .collect(),
            LayerKind::Sigmoid => output
                .iter()
                .zip(grad_out)
                .map(|(&s, &g)| g * s * (T::one() - s))
                .collect(),
            LayerKind::Softmax => {
                let dot = output
                    .iter()
                    .zip(grad_out)
                    .fold(T::zero(), |acc, (&p, &g)| acc + p * g);
                output
                    .iter()
                    .zip(grad_out)
                    .map(|(&p, &g)| p * (g - dot))
                    .collect()
            }
        }
    }

    pub(crate) fn all_params_finite(&self) -> bool {
        self.params
            .iter()
            .flatten()
            .all(|p| all_finite(&p.weight) && all_finite(&p.bias))
    }
}

fn glorot<T: Scalar>(
    rng: &mut ChaCha8Rng,
    n: usize,
    fan_in: usize,
    fan_out: usize,
    n_bias: usize,
) -> Params<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
    Params {
        weight: (0..n).map(|_| T::lit(dist.sample(rng))).collect(),
        bias: vec![T::zero(); n_bias],
    }
}

pub(crate) fn spatial(shape: InputShape) -> (usize, usize) {
    let (_, h, w) = chw(shape);
    (h, w)
}

pub(crate) fn chw(shape: InputShape) -> (usize, usize, usize) {
    match shape {
        InputShape::Image {
            channels,
            height,
            width,
        } => (channels, height, width),
        InputShape::Flat { d } => (1, 1, d),
    }
}

/// Flat index of the maximum in pooling window `(i, j)` of channel `ch`;
/// the first maximum in row-major order wins.
fn pool_argmax<T: Scalar>(x: &[T], ch: usize, h: usize, w: usize, i: usize, j: usize) -> usize {
    let base = ch * h * w;
    let mut best = base + (2 * i) * w + 2 * j;
    for (a, b) in [(0, 1), (1, 0), (1, 1)] {
        let idx = base + (2 * i + a) * w + 2 * j + b;
        if x[idx] > x[best] {
            best = idx;
        }
    }
    best
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    m + x.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

pub(crate) fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; the first one on ties.
pub fn argmax<T: Scalar>(x: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}
