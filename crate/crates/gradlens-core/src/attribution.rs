//! Attribution methods mapping `(model, input)` to per-feature scores: the
//! loss gradient, gradient ⊙ input, and a random baseline, plus the pixel
//! ranking all occlusion work is built on.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Batch size for gradient attribution over a dataset.
const ATTR_CHUNK: usize = 256;

/// Signed per-feature scores for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Flattened scores, one per input feature; always finite.
    pub scores: Vec<f64>,
    pub method: String,
    pub example_id: usize,
}

fn finite_scores(scores: Vec<f64>, method: &str, example_id: usize) -> Result<Attribution> {
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("{method} attribution for example {example_id}"),
        });
    }
    Ok(Attribution { scores, method: method.into(), example_id })
}

/// Loss-gradient scores `∇x XEnt(f(x), y)` for a single example.
pub fn attr_gradient(model: &Model, x: &Tensor, y_true: usize, example_id: usize) -> Result<Attribution> {
    let g = model.input_gradient(&x.batched(), &[y_true])?;
    finite_scores(g.data().to_vec(), "grad", example_id)
}

/// Gradient ⊙ input scores for a single example.
pub fn attr_grad_times_input(model: &Model, x: &Tensor, y_true: usize, example_id: usize) -> Result<Attribution> {
    let g = model.input_gradient(&x.batched(), &[y_true])?;
    let scores = g.data().iter().zip(x.data()).map(|(gi, xi)| gi * xi).collect();
    finite_scores(scores, "grad_input", example_id)
}

/// Model-independent baseline: `d` i.i.d. standard-normal scores from `seed`.
pub fn attr_random(seed: u64, d: usize, example_id: usize) -> Result<Attribution> {
    if d == 0 {
        return Err(Error::Empty { what: "attribution dimension" });
    }
    let mut rng = rng_from_seed(seed);
    let scores = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    finite_scores(scores, "random", example_id)
}

/// Pixel positions ordered most-important first. Importance is the signed
/// sum of a pixel's channel scores (or the sum of magnitudes when
/// `absolute`); ties break toward the lower pixel index.
pub fn rank_pixels(scores: &[f64], channels: usize, absolute: bool) -> Result<Vec<usize>> {
    if channels == 0 || !scores.len().is_multiple_of(channels) {
        return Err(Error::InvalidParameter {
            name: "channels",
            reason: format!("{} scores not divisible by {channels} channels", scores.len()),
        });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "attribution scores in rank_pixels".into() });
    }
    let pixels = scores.len() / channels;
    let mut importance = vec![0.0f64; pixels];
    for c in 0..channels {
        for p in 0..pixels {
            let s = scores[c * pixels + p];
            importance[p] += if absolute { s.abs() } else { s };
        }
    }
    let mut order: Vec<usize> = (0..pixels).collect();
    // Stable sort keeps ascending-index order within ties (±0.0 compare equal).
    order.sort_by(|&a, &b| importance[b].partial_cmp(&importance[a]).expect("finite"));
    Ok(order)
}

/// An attribution method usable by name throughout configs and experiments.
pub trait AttributionMethod {
    fn name(&self) -> &'static str;
    /// Scores for one feature-shaped example. `seed` feeds only
    /// model-independent methods (derived per `example_id`).
    fn attribute(
        &self,
        model: &Model,
        x: &Tensor,
        y_true: usize,
        example_id: usize,
        seed: u64,
    ) -> Result<Attribution>;
}

struct GradientMethod;

impl AttributionMethod for GradientMethod {
    fn name(&self) -> &'static str {
        "grad"
    }

    fn attribute(&self, model: &Model, x: &Tensor, y_true: usize, example_id: usize, _seed: u64) -> Result<Attribution> {
        attr_gradient(model, x, y_true, example_id)
    }
}

struct GradTimesInputMethod;

impl AttributionMethod for GradTimesInputMethod {
    fn name(&self) -> &'static str {
        "grad_input"
    }

    fn attribute(&self, model: &Model, x: &Tensor, y_true: usize, example_id: usize, _seed: u64) -> Result<Attribution> {
        attr_grad_times_input(model, x, y_true, example_id)
    }
}

struct RandomMethod;

impl AttributionMethod for RandomMethod {
    fn name(&self) -> &'static str {
        "random"
    }

    fn attribute(&self, _model: &Model, x: &Tensor, _y_true: usize, example_id: usize, seed: u64) -> Result<Attribution> {
        attr_random(derive_seed(seed, &[example_id as u64]), x.len(), example_id)
    }
}

/// All registered attribution methods.
pub fn method_registry() -> Vec<Box<dyn AttributionMethod>> {
    vec![Box::new(GradientMethod), Box::new(GradTimesInputMethod), Box::new(RandomMethod)]
}

/// Finds an attribution method by registry name.
pub fn lookup_method(name: &str) -> Result<Box<dyn AttributionMethod>> {
    for m in method_registry() {
        if m.name() == name {
            return Ok(m);
        }
    }
    let known: Vec<&str> = method_registry().iter().map(|m| m.name()).collect();
    Err(Error::InvalidParameter {
        name: "attribution method",
        reason: format!("unknown method {name:?}; known: {known:?}"),
    })
}

/// Attributions for every example of a dataset, in example order. Gradient
/// methods run batched (per-example gradients are exact under the summed
/// loss); example ids index into `ds`.
pub fn attribute_dataset(
    method: &dyn AttributionMethod,
    model: &Model,
    ds: &Dataset,
    seed: u64,
) -> Result<Vec<Attribution>> {
    let mut out = Vec::with_capacity(ds.len());
    match method.name() {
        // Batched fast path for the gradient-based methods.
        "grad" | "grad_input" => {
            let feat = ds.feature_len();
            let idx: Vec<usize> = (0..ds.len()).collect();
            for chunk in idx.chunks(ATTR_CHUNK) {
                let (x, y) = ds.gather(chunk)?;
                let g = model.input_gradient(&x, &y)?;
                for (row, &example_id) in chunk.iter().enumerate() {
                    let gs = &g.data()[row * feat..(row + 1) * feat];
                    let scores: Vec<f64> = if method.name() == "grad" {
                        gs.to_vec()
                    } else {
                        let xs = &x.data()[row * feat..(row + 1) * feat];
                        gs.iter().zip(xs).map(|(gi, xi)| gi * xi).collect()
                    };
                    out.push(finite_scores(scores, method.name(), example_id)?);
                }
            }
        }
        _ => {
            for i in 0..ds.len() {
                out.push(method.attribute(model, &ds.example(i)?, ds.labels()[i], i, seed)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_toy, ToySpec};
    use crate::model::{Activation, LayerSpec, ModelSpec};
    use crate::tape::{grad_check, Reduction};

    fn linear_model(w: Vec<f64>) -> Model {
        let spec = ModelSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::Dense { units: 2, activation: Activation::None }],
            classes: 2,
        };
        let mut m = Model::build(spec, 0).unwrap();
        m.params[0] = Tensor::new(vec![2, 2], w).unwrap();
        m.params[1] = Tensor::zeros(&[2]);
        m
    }

    #[test]
    fn gradient_matches_linear_closed_form() {
        // Small weights keep softmax far from saturation.
        let w = vec![0.3, -0.1, 0.2, 0.4]; // row-major [in, out]
        let m = linear_model(w.clone());
        let x = Tensor::new(vec![2], vec![0.5, -0.7]).unwrap();
        let y = 0usize;
        let a = attr_gradient(&m, &x, y, 0).unwrap();
        // Closed form: grad_x = W (p − onehot(y)) with W in [in, out] layout.
        let logits = [
            x.data()[0] * w[0] + x.data()[1] * w[2],
            x.data()[0] * w[1] + x.data()[1] * w[3],
        ];
        let mx = logits[0].max(logits[1]);
        let e = [(logits[0] - mx).exp(), (logits[1] - mx).exp()];
        let z = e[0] + e[1];
        let p = [e[0] / z, e[1] / z];
        let dl = [p[0] - 1.0, p[1]];
        let expect = [w[0] * dl[0] + w[1] * dl[1], w[2] * dl[0] + w[3] * dl[1]];
        assert!((a.scores[0] - expect[0]).abs() < 1e-12);
        assert!((a.scores[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn gradient_agrees_with_finite_differences() {
        let ds = gen_toy(&ToySpec { samples_per_class: 8, ..ToySpec::default() }).unwrap();
        let m = Model::build(ModelSpec::toy(), 9).unwrap();
        for i in 0..4 {
            let x = ds.example(i).unwrap();
            let y = ds.labels()[i];
            let a = attr_gradient(&m, &x, y, i).unwrap();
            let params = m.params.clone();
            let spec = m.spec.clone();
            let err = grad_check(
                move |tape, xid| {
                    let model = Model { spec: spec.clone(), params: params.clone(), history: vec![] };
                    let pids = model.param_leaves(tape);
                    let logits = model.forward_on_tape(tape, xid, &pids)?;
                    tape.softmax_xent(logits, &[y], Reduction::Sum)
                },
                &x.batched(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "example {i}: {err}");
            assert_eq!(a.scores.len(), 2);
        }
    }

    #[test]
    fn grad_times_input_is_elementwise_product_exactly() {
        let ds = gen_toy(&ToySpec { samples_per_class: 5, ..ToySpec::default() }).unwrap();
        let m = Model::build(ModelSpec::toy(), 2).unwrap();
        for i in 0..5 {
            let x = ds.example(i).unwrap();
            let y = ds.labels()[i];
            let g = attr_gradient(&m, &x, y, i).unwrap();
            let gx = attr_grad_times_input(&m, &x, y, i).unwrap();
            for j in 0..x.len() {
                assert_eq!(gx.scores[j], g.scores[j] * x.data()[j]);
                if gx.scores[j] > 0.0 {
                    assert_eq!(g.scores[j].signum(), x.data()[j].signum());
                }
            }
        }
    }

    #[test]
    fn zero_input_annihilates_grad_times_input() {
        let m = linear_model(vec![0.3, -0.1, 0.2, 0.4]);
        let x = Tensor::new(vec![2], vec![0.0, 0.0]).unwrap();
        let a = attr_grad_times_input(&m, &x, 1, 0).unwrap();
        assert_eq!(a.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn random_attribution_is_seeded_and_shape_correct() {
        let a = attr_random(42, 5, 0).unwrap();
        let b = attr_random(42, 5, 0).unwrap();
        let c = attr_random(43, 5, 0).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_ne!(a.scores, c.scores);
        assert_eq!(attr_random(42, 3, 0).unwrap().scores.len(), 3);
        // Prefix stability is NOT required, but lengths must match request.
        assert!(attr_random(1, 0, 0).is_err());
    }

    #[test]
    fn rank_pixels_examples_and_permutation_property() {
        assert_eq!(rank_pixels(&[0.1, 0.9, 0.5], 1, false).unwrap(), vec![1, 2, 0]);
        // Two channels with equal pixel sums: ascending-index tiebreak.
        // Pixel sums: p0 = 1.0 + (-0.5) = 0.5, p1 = 0.25 + 0.25 = 0.5.
        assert_eq!(rank_pixels(&[1.0, 0.25, -0.5, 0.25], 2, false).unwrap(), vec![0, 1]);
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let d = 12;
            let scores: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let order = rank_pixels(&scores, 1, false).unwrap();
            let mut sorted = order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..d).collect::<Vec<_>>());
            // First element is the argmax.
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(scores[order[0]], max);
        }
    }

    #[test]
    fn rank_pixels_scaling_invariance_and_abs_mode() {
        let scores = vec![0.4, -0.9, 0.2];
        let scaled: Vec<f64> = scores.iter().map(|s| s * 3.5).collect();
        assert_eq!(
            rank_pixels(&scores, 1, false).unwrap(),
            rank_pixels(&scaled, 1, false).unwrap()
        );
        assert_eq!(rank_pixels(&scores, 1, false).unwrap(), vec![0, 2, 1]);
        assert_eq!(rank_pixels(&scores, 1, true).unwrap(), vec![1, 0, 2]);
    }

    #[test]
    fn rank_pixels_rejects_indivisible_channels() {
        assert!(rank_pixels(&[1.0, 2.0, 3.0], 2, false).is_err());
    }

    #[test]
    fn random_ranking_is_uniform_over_permutations() {
        // d = 4 → 24 orderings; 10,000 seeds; each frequency within 3σ of 1/24.
        let n = 10_000u64;
        let mut counts = [0u32; 24];
        for seed in 0..n {
            let a = attr_random(seed, 4, 0).unwrap();
            let order = rank_pixels(&a.scores, 1, false).unwrap();
            // Lehmer code of the permutation.
            let mut code = 0usize;
            for i in 0..4 {
                let smaller = order[i + 1..].iter().filter(|&&x| x < order[i]).count();
                code = code * (4 - i) + smaller;
            }
            counts[code] += 1;
        }
        let p = 1.0 / 24.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "permutation {i}: freq {freq} vs {p} ± {}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn dataset_attribution_matches_per_example_calls() {
        let ds = gen_toy(&ToySpec { samples_per_class: 6, ..ToySpec::default() }).unwrap();
        let m = Model::build(ModelSpec::toy(), 4).unwrap();
        for name in ["grad", "grad_input", "random"] {
            let method = lookup_method(name).unwrap();
            let batch = attribute_dataset(method.as_ref(), &m, &ds, 77).unwrap();
            assert_eq!(batch.len(), ds.len());
            for i in [0usize, 5, 11] {
                let single = method
                    .attribute(&m, &ds.example(i).unwrap(), ds.labels()[i], i, 77)
                    .unwrap();
                assert_eq!(batch[i], single, "{name} example {i}");
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let m = linear_model(vec![f64::NAN, 0.0, 0.0, 0.1]);
        let x = Tensor::new(vec![2], vec![0.1, 0.2]).unwrap();
        let err = attr_gradient(&m, &x, 0, 3).unwrap_err();
        assert!(err.to_string().contains("example 3"), "got: {err}");
    }

    #[test]
    fn unknown_method_is_rejected_with_known_names() {
        let err = lookup_method("lrp").err().expect("unknown method must fail");
        assert!(err.to_string().contains("grad_input"), "got: {err}");
    }
}
