//! Feed-forward classifier models: declarative layer specs, seeded
//! initialization, and two forward paths — one on the autodiff tape (for
//! training and input gradients) and one through the plain kernels (for
//! fast inference). The two paths are cross-checked in tests.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims, Padding, PoolDims};
use crate::rng::rng_from_seed;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Batch size used when evaluating datasets (bounds peak activation memory).
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize, activation: Activation },
    Conv2d { filters: usize, filter: usize, stride: usize, padding: Padding, activation: Activation },
    MaxPool2d { window: usize, stride: usize },
    Flatten,
}

impl LayerSpec {
    fn describe(&self) -> String {
        match self {
            LayerSpec::Dense { units, .. } => format!("dense({units})"),
            LayerSpec::Conv2d { filters, filter, stride, .. } => {
                format!("conv2d({filters} filters, {filter}x{filter}, stride {stride})")
            }
            LayerSpec::MaxPool2d { window, stride } => format!("maxpool2d({window}, stride {stride})"),
            LayerSpec::Flatten => "flatten".into(),
        }
    }
}

/// Architecture description: per-example input shape, layer stack, and the
/// number of classes the final layer must emit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

impl ModelSpec {
    /// The toy two-layer ReLU classifier for 2-D inputs.
    pub fn toy() -> ModelSpec {
        ModelSpec {
            input_shape: vec![2],
            layers: vec![
                LayerSpec::Dense { units: 128, activation: Activation::Relu },
                LayerSpec::Dense { units: 2, activation: Activation::None },
            ],
            classes: 2,
        }
    }

    /// Full-size image CNN: two 5x5 conv layers, a 2x2 pool, and two dense
    /// layers, for `[1, 28, 28]` inputs.
    pub fn mnist_cnn() -> ModelSpec {
        ModelSpec {
            input_shape: vec![1, 28, 28],
            layers: vec![
                LayerSpec::Conv2d { filters: 64, filter: 5, stride: 1, padding: Padding::Same, activation: Activation::Relu },
                LayerSpec::Conv2d { filters: 32, filter: 5, stride: 1, padding: Padding::Same, activation: Activation::Relu },
                LayerSpec::MaxPool2d { window: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 1024, activation: Activation::Relu },
                LayerSpec::Dense { units: 10, activation: Activation::None },
            ],
            classes: 10,
        }
    }

    /// Desk-scale CNN for small images: one conv, one pool, two dense layers.
    pub fn small_cnn(input_shape: Vec<usize>, classes: usize) -> ModelSpec {
        ModelSpec {
            input_shape,
            layers: vec![
                LayerSpec::Conv2d { filters: 8, filter: 3, stride: 1, padding: Padding::Same, activation: Activation::Relu },
                LayerSpec::MaxPool2d { window: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 32, activation: Activation::Relu },
                LayerSpec::Dense { units: classes, activation: Activation::None },
            ],
            classes,
        }
    }

    /// Checks layer-by-layer shape compatibility and returns each layer's
    /// output feature shape. Errors name the offending layer by index.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::Empty { what: "model layers" });
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidParameter {
                name: "input_shape",
                reason: format!("must be nonempty with positive dims, got {:?}", self.input_shape),
            });
        }
        let mut cur = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let mismatch = |reason: String| Error::LayerMismatch { index, layer: layer.describe(), reason };
            cur = match layer {
                LayerSpec::Dense { units, .. } => {
                    if *units == 0 {
                        return Err(mismatch("needs at least one unit".into()));
                    }
                    if cur.len() != 1 {
                        return Err(mismatch(format!(
                            "expects a flat input [features] but got {cur:?}; insert a flatten layer first"
                        )));
                    }
                    vec![*units]
                }
                LayerSpec::Conv2d { filters, filter, stride, padding, .. } => {
                    if cur.len() != 3 {
                        return Err(mismatch(format!("expects [C, H, W] input but got {cur:?}")));
                    }
                    if *filters == 0 || *filter == 0 {
                        return Err(mismatch("filters and filter size must be positive".into()));
                    }
                    let dims = ConvDims::resolve(
                        &[1, cur[0], cur[1], cur[2]],
                        &[*filters, cur[0], *filter, *filter],
                        *stride,
                        *padding,
                    )
                    .map_err(|e| mismatch(e.to_string()))?;
                    vec![dims.cout, dims.oh, dims.ow]
                }
                LayerSpec::MaxPool2d { window, stride } => {
                    if cur.len() != 3 {
                        return Err(mismatch(format!("expects [C, H, W] input but got {cur:?}")));
                    }
                    let dims = PoolDims::resolve(&[1, cur[0], cur[1], cur[2]], *window, *stride)
                        .map_err(|e| mismatch(e.to_string()))?;
                    vec![dims.c, dims.oh, dims.ow]
                }
                LayerSpec::Flatten => vec![cur.iter().product()],
            };
            out.push(cur.clone());
        }
        if cur != [self.classes] {
            return Err(Error::shape(
                "model output",
                format!("[{}] (one logit per class)", self.classes),
                cur,
            ));
        }
        Ok(out)
    }

    /// Shapes of the trainable parameters, in layer order: for each dense
    /// layer `W [in, units]` then `b [units]`; for each conv layer
    /// `W [filters, in_channels, k, k]` then `b [filters]`.
    pub fn param_shapes(&self) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let mut cur = self.input_shape.clone();
        let mut shapes = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerSpec::Dense { units, .. } => {
                    shapes.push(vec![cur[0], *units]);
                    shapes.push(vec![*units]);
                    cur = vec![*units];
                }
                LayerSpec::Conv2d { filters, filter, stride, padding, .. } => {
                    shapes.push(vec![*filters, cur[0], *filter, *filter]);
                    shapes.push(vec![*filters]);
                    let dims = ConvDims::resolve(
                        &[1, cur[0], cur[1], cur[2]],
                        &[*filters, cur[0], *filter, *filter],
                        *stride,
                        *padding,
                    )?;
                    cur = vec![dims.cout, dims.oh, dims.ow];
                }
                LayerSpec::MaxPool2d { window, stride } => {
                    let dims = PoolDims::resolve(&[1, cur[0], cur[1], cur[2]], *window, *stride)?;
                    cur = vec![dims.c, dims.oh, dims.ow];
                }
                LayerSpec::Flatten => cur = vec![cur.iter().product()],
            }
        }
        Ok(shapes)
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
    pub robust_accuracy: Option<f64>,
}

/// A specced architecture together with its parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Tensor>,
    pub history: Vec<EpochStats>,
}

impl Model {
    /// Builds a model with He-uniform weights (`U(-l, l)`, `l = sqrt(6/fan_in)`)
    /// and zero biases, drawn deterministically from `seed`.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Model> {
        let shapes = spec.param_shapes()?;
        let mut rng = rng_from_seed(seed);
        let mut params = Vec::with_capacity(shapes.len());
        for shape in shapes {
            let len: usize = shape.iter().product();
            if shape.len() == 1 {
                params.push(Tensor::zeros(&shape));
            } else {
                // fan_in: input features for dense [in, out]; cin*k*k for conv
                // [out, cin, kh, kw].
                let fan_in: usize = match shape.len() {
                    2 => shape[0],
                    4 => shape[1] * shape[2] * shape[3],
                    _ => return Err(Error::shape("Model::build", "1/2/4-d parameter", shape)),
                };
                let limit = (6.0 / fan_in as f64).sqrt();
                let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
                params.push(Tensor::new(shape, data)?);
            }
        }
        Ok(Model { spec, params, history: Vec::new() })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_batch_input(&self, x_shape: &[usize]) -> Result<usize> {
        let want = &self.spec.input_shape;
        if x_shape.len() != want.len() + 1 || &x_shape[1..] != want.as_slice() || x_shape[0] == 0 {
            return Err(Error::shape(
                "model forward",
                format!("[N, {want:?}] with N >= 1"),
                x_shape,
            ));
        }
        Ok(x_shape[0])
    }

    /// Registers every parameter as a tape leaf, in order.
    pub fn param_leaves(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.iter().map(|p| tape.leaf(p)).collect()
    }

    /// Forward pass on the tape from input node `x` (shape `[N, ...input]`)
    /// using the given parameter leaves; returns the logits node `[N, classes]`.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let n = self.check_batch_input(tape.value(x).shape())?;
        if params.len() != self.params.len() {
            return Err(Error::shape("forward_on_tape", self.params.len(), params.len()));
        }
        let mut cur = x;
        let mut pi = 0;
        for layer in &self.spec.layers {
            cur = match layer {
                LayerSpec::Dense { activation, .. } => {
                    let z = tape.matmul(cur, params[pi])?;
                    let z = tape.add_bias(z, params[pi + 1])?;
                    pi += 2;
                    apply_activation(tape, z, *activation)?
                }
                LayerSpec::Conv2d { stride, padding, activation, .. } => {
                    let z = tape.conv2d(cur, params[pi], *stride, *padding)?;
                    let z = tape.add_bias(z, params[pi + 1])?;
                    pi += 2;
                    apply_activation(tape, z, *activation)?
                }
                LayerSpec::MaxPool2d { window, stride } => tape.maxpool2d(cur, *window, *stride)?,
                LayerSpec::Flatten => {
                    let feat: usize = tape.value(cur).shape()[1..].iter().product();
                    tape.reshape(cur, &[n, feat])?
                }
            };
        }
        Ok(cur)
    }

    /// Plain-kernel forward pass (no tape, no gradients): logits `[N, classes]`.
    pub fn predict_logits(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.check_batch_input(x.shape())?;
        let mut cur = x.data().to_vec();
        let mut shape = x.shape().to_vec();
        let mut pi = 0;
        for layer in &self.spec.layers {
            match layer {
                LayerSpec::Dense { units, activation } => {
                    let (k, u) = (shape[1], *units);
                    let w = &self.params[pi];
                    let b = &self.params[pi + 1];
                    let mut z = kernels::matmul(&cur, w.data(), n, k, u);
                    for (i, v) in z.iter_mut().enumerate() {
                        *v += b.data()[i % u];
                    }
                    apply_activation_plain(&mut z, *activation);
                    cur = z;
                    shape = vec![n, u];
                    pi += 2;
                }
                LayerSpec::Conv2d { stride, padding, activation, .. } => {
                    let w = &self.params[pi];
                    let b = &self.params[pi + 1];
                    let dims = ConvDims::resolve(&shape, w.shape(), *stride, *padding)?;
                    let mut z = kernels::conv2d(&cur, w.data(), &dims);
                    let plane = dims.oh * dims.ow;
                    for (i, v) in z.iter_mut().enumerate() {
                        *v += b.data()[(i / plane) % dims.cout];
                    }
                    apply_activation_plain(&mut z, *activation);
                    cur = z;
                    shape = dims.out_shape();
                    pi += 2;
                }
                LayerSpec::MaxPool2d { window, stride } => {
                    let dims = PoolDims::resolve(&shape, *window, *stride)?;
                    let (z, _) = kernels::maxpool2d(&cur, &dims);
                    cur = z;
                    shape = dims.out_shape();
                }
                LayerSpec::Flatten => {
                    shape = vec![n, shape[1..].iter().product()];
                }
            }
        }
        Tensor::new(shape, cur)
    }

    /// Predicted class per example: argmax of the logits, ties going to the
    /// lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.predict_logits(x)?;
        let c = self.spec.classes;
        Ok(logits
            .data()
            .chunks(c)
            .map(argmax)
            .collect())
    }

    /// Fraction of `data` classified correctly (chunked to bound memory).
    pub fn evaluate(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty { what: "evaluation dataset" });
        }
        let mut correct = 0usize;
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(EVAL_CHUNK) {
            let (x, y) = data.gather(chunk)?;
            let pred = self.predict(&x)?;
            correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// Gradient of the summed cross-entropy loss with respect to the inputs,
    /// shaped like `x`. Summed reduction keeps per-example gradients exact
    /// (each example's slice is independent of batch size).
    pub fn input_gradient(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xid = tape.leaf(x);
        let params = self.param_leaves(&mut tape);
        let logits = self.forward_on_tape(&mut tape, xid, &params)?;
        let loss = tape.softmax_xent(logits, labels, crate::tape::Reduction::Sum)?;
        tape.backward(loss)?;
        let grad = tape.grad(xid).expect("input leaf participates in loss");
        Tensor::new(x.shape().to_vec(), grad.to_vec())
    }
}

/// Lowest-index argmax.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn apply_activation(tape: &mut Tape, z: NodeId, act: Activation) -> Result<NodeId> {
    Ok(match act {
        Activation::None => z,
        Activation::Relu => tape.relu(z),
        Activation::Tanh => tape.tanh(z),
    })
}

fn apply_activation_plain(z: &mut [f64], act: Activation) {
    match act {
        Activation::None => {}
        Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Reduction;

    #[test]
    fn toy_model_has_642_parameters() {
        let m = Model::build(ModelSpec::toy(), 0).unwrap();
        assert_eq!(m.param_count(), 642);
        assert_eq!(m.params.len(), 4);
        assert_eq!(m.params[0].shape(), &[2, 128]);
        assert_eq!(m.params[1].shape(), &[128]);
    }

    #[test]
    fn build_is_seed_deterministic() {
        let a = Model::build(ModelSpec::toy(), 42).unwrap();
        let b = Model::build(ModelSpec::toy(), 42).unwrap();
        let c = Model::build(ModelSpec::toy(), 43).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn he_uniform_bounds_respected() {
        let m = Model::build(ModelSpec::toy(), 7).unwrap();
        let limit = (6.0f64 / 2.0).sqrt();
        assert!(m.params[0].data().iter().all(|v| v.abs() < limit));
        let limit2 = (6.0f64 / 128.0).sqrt();
        assert!(m.params[2].data().iter().all(|v| v.abs() < limit2));
        // Biases start at zero.
        assert!(m.params[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_flatten_names_the_offending_layer() {
        let spec = ModelSpec {
            input_shape: vec![1, 8, 8],
            layers: vec![
                LayerSpec::Conv2d { filters: 4, filter: 3, stride: 1, padding: Padding::Same, activation: Activation::Relu },
                LayerSpec::Dense { units: 2, activation: Activation::None },
            ],
            classes: 2,
        };
        let err = spec.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 1"), "got: {msg}");
        assert!(msg.contains("dense(2)"), "got: {msg}");
        assert!(msg.contains("flatten"), "got: {msg}");
    }

    #[test]
    fn wrong_output_arity_is_rejected() {
        let spec = ModelSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::Dense { units: 3, activation: Activation::None }],
            classes: 2,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn validate_tracks_cnn_shapes() {
        let shapes = ModelSpec::mnist_cnn().validate().unwrap();
        assert_eq!(shapes[0], vec![64, 28, 28]);
        assert_eq!(shapes[1], vec![32, 28, 28]);
        assert_eq!(shapes[2], vec![32, 14, 14]);
        assert_eq!(shapes[3], vec![32 * 14 * 14]);
        assert_eq!(shapes[4], vec![1024]);
        assert_eq!(shapes[5], vec![10]);
    }

    #[test]
    fn tape_and_plain_forward_agree_on_toy_and_cnn() {
        for (spec, shape) in [
            (ModelSpec::toy(), vec![3, 2]),
            (ModelSpec::small_cnn(vec![1, 8, 8], 3), vec![2, 1, 8, 8]),
        ] {
            let m = Model::build(spec, 5).unwrap();
            let len: usize = shape.iter().product();
            let x = Tensor::new(
                shape,
                (0..len).map(|i| ((i * 37 + 11) % 200) as f64 / 100.0 - 1.0).collect(),
            )
            .unwrap();
            let plain = m.predict_logits(&x).unwrap();
            let mut tape = Tape::new();
            let xid = tape.leaf(&x);
            let params = m.param_leaves(&mut tape);
            let logits = m.forward_on_tape(&mut tape, xid, &params).unwrap();
            assert_eq!(tape.value(logits).data(), plain.data());
        }
    }

    #[test]
    fn predict_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
    }

    #[test]
    fn input_gradient_matches_manual_linear_case() {
        // Single dense layer, identity-ish weights: loss grad w.r.t. x equals
        // W (p - onehot)ᵀ which we can compute by hand for 2 classes.
        let spec = ModelSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::Dense { units: 2, activation: Activation::None }],
            classes: 2,
        };
        let mut m = Model::build(spec, 0).unwrap();
        m.params[0] = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        m.params[1] = Tensor::zeros(&[2]);
        let x = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let g = m.input_gradient(&x, &[0]).unwrap();
        // Equal logits: p = [0.5, 0.5], dL/dlogits = [-0.5, 0.5], grad x = W · that.
        assert!((g.data()[0] + 0.5).abs() < 1e-12);
        assert!((g.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn input_gradient_is_per_example_exact() {
        // Sum reduction: each example's input gradient must not depend on
        // what else is in the batch.
        let m = Model::build(ModelSpec::toy(), 3).unwrap();
        let x = Tensor::new(vec![2, 2], vec![0.3, -0.4, 0.9, 0.1]).unwrap();
        let g_batch = m.input_gradient(&x, &[0, 1]).unwrap();
        let x0 = Tensor::new(vec![1, 2], vec![0.3, -0.4]).unwrap();
        let g0 = m.input_gradient(&x0, &[0]).unwrap();
        assert_eq!(&g_batch.data()[0..2], g0.data());
    }

    #[test]
    fn evaluate_counts_correct_fraction() {
        let spec = ModelSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::Dense { units: 2, activation: Activation::None }],
            classes: 2,
        };
        let mut m = Model::build(spec, 0).unwrap();
        // Predict class 0 iff x0 > x1.
        m.params[0] = Tensor::new(vec![2, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        m.params[1] = Tensor::zeros(&[2]);
        let ds = Dataset::new(
            Tensor::new(vec![4, 2], vec![0.9, 0.1, 0.1, 0.9, 0.8, 0.2, 0.3, 0.2]).unwrap(),
            vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        let acc = m.evaluate(&ds).unwrap();
        assert!((acc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn forward_loss_is_finite_on_fresh_model() {
        let m = Model::build(ModelSpec::small_cnn(vec![1, 8, 8], 2), 1).unwrap();
        let x = Tensor::full(&[2, 1, 8, 8], 0.25);
        let mut tape = Tape::new();
        let xid = tape.leaf(&x);
        let params = m.param_leaves(&mut tape);
        let logits = m.forward_on_tape(&mut tape, xid, &params).unwrap();
        let loss = tape.softmax_xent(logits, &[0, 1], Reduction::Mean).unwrap();
        assert!(tape.value(loss).item().unwrap().is_finite());
    }
}
