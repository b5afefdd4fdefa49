//! Projected gradient descent attacks under ℓ2/ℓ∞ budgets, maximizing either
//! the cross-entropy loss or the Carlini-Wagner margin surrogate.
//!
//! Contract highlights:
//! - every returned adversarial input satisfies `‖x_adv − x‖_p ≤ ε + 1e-9`
//!   and stays inside `[-1, 1]` coordinatewise;
//! - the *best-seen* iterate (highest objective, starting point included) is
//!   returned, never just the last one;
//! - a non-finite gradient freezes that example: its result is the clean
//!   input flagged `success = false` — attacks never crash on saturation.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::rng_from_seed;
use crate::tape::{xent_per_example, NodeId, Reduction, Tape};
use crate::tensor::{l2_norm, linf_norm, Tensor};
use crate::data::Dataset;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Norm::L2 => write!(f, "l2"),
            Norm::Linf => write!(f, "linf"),
        }
    }
}

/// PGD attack parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub norm: Norm,
    /// Ball radius in input units; 0 degenerates to the identity attack.
    pub epsilon: f64,
    pub steps: usize,
    /// `None` selects the default `2.5 · ε / steps`.
    pub step_size: Option<f64>,
    /// Registry name: `"xent"` or `"cw"`.
    pub objective: String,
    /// Start from a uniform random point in the ball instead of `x`.
    pub random_start: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            norm: Norm::L2,
            epsilon: 0.5,
            steps: 40,
            step_size: None,
            objective: "xent".into(),
            random_start: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: format!("must be finite and >= 0, got {}", self.epsilon),
            });
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter { name: "steps", reason: "must be >= 1".into() });
        }
        if let Some(s) = self.step_size {
            if s.is_nan() || s <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: "step_size",
                    reason: format!("must be > 0, got {s}"),
                });
            }
        }
        lookup_objective(&self.objective)?;
        Ok(())
    }

    pub fn effective_step_size(&self) -> f64 {
        self.step_size.unwrap_or(2.5 * self.epsilon / self.steps as f64)
    }
}

// ── Ball projections ────────────────────────────────────────────────────

/// Radial projection onto the ℓ2 ball: `δ · min(1, ε/‖δ‖₂)`; zero maps to
/// itself.
pub fn project_l2(delta: &mut [f64], epsilon: f64) {
    let norm = l2_norm(delta);
    if norm > epsilon {
        let scale = epsilon / norm;
        for v in delta {
            *v *= scale;
        }
    }
}

/// Coordinatewise clamp onto the ℓ∞ ball `[-ε, ε]`.
pub fn project_linf(delta: &mut [f64], epsilon: f64) {
    for v in delta {
        *v = v.clamp(-epsilon, epsilon);
    }
}

fn project(norm: Norm, delta: &mut [f64], epsilon: f64) {
    match norm {
        Norm::L2 => project_l2(delta, epsilon),
        Norm::Linf => project_linf(delta, epsilon),
    }
}

fn perturbation_norm(norm: Norm, delta: &[f64]) -> f64 {
    match norm {
        Norm::L2 => l2_norm(delta),
        Norm::Linf => linf_norm(delta),
    }
}

// ── Attack objectives ───────────────────────────────────────────────────

/// A scalar target the attacker ascends. Implementations provide both the
/// differentiable tape construction (summed over the batch, so per-example
/// gradients stay exact) and a plain per-example evaluation used for
/// best-iterate tracking.
pub trait AttackObjective {
    fn name(&self) -> &'static str;
    /// Appends the scalar objective for the whole batch to the tape.
    fn build(&self, tape: &mut Tape, logits: NodeId, labels: &[usize]) -> Result<NodeId>;
    /// Per-example objective values from raw logits `[N, C]`.
    fn per_example(&self, logits: &[f64], classes: usize, labels: &[usize]) -> Result<Vec<f64>>;
}

struct XentObjective;

impl AttackObjective for XentObjective {
    fn name(&self) -> &'static str {
        "xent"
    }

    fn build(&self, tape: &mut Tape, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        tape.softmax_xent(logits, labels, Reduction::Sum)
    }

    fn per_example(&self, logits: &[f64], classes: usize, labels: &[usize]) -> Result<Vec<f64>> {
        Ok(xent_per_example(logits, classes, labels))
    }
}

struct CwObjective;

impl AttackObjective for CwObjective {
    fn name(&self) -> &'static str {
        "cw"
    }

    fn build(&self, tape: &mut Tape, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let shape = tape.value(logits).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("cw objective", "[N, C] logits", shape));
        }
        let (n, c) = (shape[0], shape[1]);
        if labels.len() != n {
            return Err(Error::shape("cw objective", format!("{n} labels"), labels.len()));
        }
        // Fix the ±1 mask from the current logit values; the margin itself
        // stays differentiable through the masked sum.
        let values = tape.value(logits).data().to_vec();
        let mut mask = vec![0.0; n * c];
        for i in 0..n {
            let row = &values[i * c..(i + 1) * c];
            let wrong = best_wrong_class(row, labels[i], c)?;
            mask[i * c + wrong] = 1.0;
            mask[i * c + labels[i]] = -1.0;
        }
        let mask = tape.leaf(&Tensor::new(vec![n, c], mask)?);
        let prod = tape.mul(logits, mask)?;
        Ok(tape.reduce_sum(prod))
    }

    fn per_example(&self, logits: &[f64], classes: usize, labels: &[usize]) -> Result<Vec<f64>> {
        logits
            .chunks(classes)
            .zip(labels)
            .map(|(row, &y)| cw_margin(row, y))
            .collect()
    }
}

/// Highest wrong-class logit index, ties to the lowest index.
fn best_wrong_class(row: &[f64], y_true: usize, classes: usize) -> Result<usize> {
    if classes < 2 {
        return Err(Error::InvalidParameter {
            name: "classes",
            reason: "cw objective needs at least 2 classes".into(),
        });
    }
    if y_true >= classes {
        return Err(Error::LabelOutOfRange { label: y_true, classes });
    }
    let mut best: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if j == y_true {
            continue;
        }
        if best.is_none_or(|b| v > row[b]) {
            best = Some(j);
        }
    }
    Ok(best.expect("classes >= 2 guarantees a wrong class"))
}

/// The margin `max_{i≠y} Z_i − Z_y`; positive iff the logits misclassify.
pub fn cw_margin(logits: &[f64], y_true: usize) -> Result<f64> {
    let wrong = best_wrong_class(logits, y_true, logits.len())?;
    Ok(logits[wrong] - logits[y_true])
}

/// All registered attack objectives.
pub fn objective_registry() -> Vec<Box<dyn AttackObjective>> {
    vec![Box::new(XentObjective), Box::new(CwObjective)]
}

/// Finds an objective by registry name.
pub fn lookup_objective(name: &str) -> Result<Box<dyn AttackObjective>> {
    for obj in objective_registry() {
        if obj.name() == name {
            return Ok(obj);
        }
    }
    let known: Vec<&str> = objective_registry().iter().map(|o| o.name()).collect();
    Err(Error::InvalidParameter {
        name: "objective",
        reason: format!("unknown objective {name:?}; known: {known:?}"),
    })
}

// ── PGD ─────────────────────────────────────────────────────────────────

/// Result of attacking one example.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_adv: Tensor,
    /// Whether the model's prediction changed relative to the clean input.
    pub success: bool,
    pub achieved_norm: f64,
}

/// Result of attacking a batch (example-parallel PGD).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchAttackOutcome {
    pub x_adv: Tensor,
    pub success: Vec<bool>,
    pub achieved_norm: Vec<f64>,
}

/// Keeps only the successful attacks, preserving order.
pub fn attack_success_filter(results: Vec<AttackResult>) -> Vec<AttackResult> {
    results.into_iter().filter(|r| r.success).collect()
}

/// PGD on a whole batch `[N, ...features]` at once. Per-example state
/// (best-seen iterate, freeze-on-non-finite) is tracked independently, and
/// the summed objective makes each example's gradient exact, so the result
/// equals N single-example attacks.
pub fn pgd_attack_batch(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<BatchAttackOutcome> {
    cfg.validate()?;
    let n = x.batch_len();
    if n == 0 {
        return Err(Error::Empty { what: "attack batch" });
    }
    if labels.len() != n {
        return Err(Error::shape("pgd_attack_batch", format!("{n} labels"), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= model.spec.classes) {
        return Err(Error::LabelOutOfRange { label: bad, classes: model.spec.classes });
    }
    if x.data().iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
        return Err(Error::InvalidParameter {
            name: "x",
            reason: "attack inputs must lie in [-1, 1]".into(),
        });
    }

    // Degenerate ball: the identity attack, bit-exact.
    if cfg.epsilon == 0.0 {
        return Ok(BatchAttackOutcome {
            x_adv: x.clone(),
            success: vec![false; n],
            achieved_norm: vec![0.0; n],
        });
    }

    let objective = lookup_objective(&cfg.objective)?;
    let feat = x.len() / n;
    let step_size = cfg.effective_step_size();
    let clean = x.data();
    let clean_pred = model.predict(x)?;
    let classes = model.spec.classes;

    let mut cur = clean.to_vec();
    if cfg.random_start {
        // Uniform in the coordinate cube, then projected into the ball.
        let mut rng = rng_from_seed(cfg.seed);
        for i in 0..n {
            let slice = &mut cur[i * feat..(i + 1) * feat];
            let mut delta: Vec<f64> =
                (0..feat).map(|_| rng.gen_range(-cfg.epsilon..cfg.epsilon)).collect();
            project(cfg.norm, &mut delta, cfg.epsilon);
            for (j, d) in delta.iter().enumerate() {
                slice[j] = (clean[i * feat + j] + d).clamp(-1.0, 1.0);
            }
        }
    }

    let mut frozen = vec![false; n];
    let mut best_x = cur.clone();
    let eval = |cur: &[f64]| -> Result<Vec<f64>> {
        let logits = model.predict_logits(&Tensor::new(x.shape().to_vec(), cur.to_vec())?)?;
        objective.per_example(logits.data(), classes, labels)
    };
    let mut best_val = eval(&cur)?;

    for _ in 0..cfg.steps {
        // Gradient of the summed objective w.r.t. the current iterate.
        let mut tape = Tape::new();
        let cur_t = Tensor::new(x.shape().to_vec(), cur.clone())?;
        let xid = tape.leaf(&cur_t);
        let params = model.param_leaves(&mut tape);
        let logits = model.forward_on_tape(&mut tape, xid, &params)?;
        let obj = objective.build(&mut tape, logits, labels)?;
        tape.backward(obj)?;
        let grad = tape.grad(xid).expect("input participates in objective");

        for i in 0..n {
            if frozen[i] {
                continue;
            }
            let g = &grad[i * feat..(i + 1) * feat];
            if g.iter().any(|v| !v.is_finite()) {
                frozen[i] = true;
                continue;
            }
            let dir: Vec<f64> = match cfg.norm {
                Norm::Linf => g
                    .iter()
                    .map(|&v| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect(),
                Norm::L2 => {
                    let norm = l2_norm(g);
                    if norm == 0.0 {
                        vec![0.0; feat]
                    } else {
                        g.iter().map(|&v| v / norm).collect()
                    }
                }
            };
            let base = i * feat;
            let mut delta: Vec<f64> = (0..feat)
                .map(|j| cur[base + j] + step_size * dir[j] - clean[base + j])
                .collect();
            project(cfg.norm, &mut delta, cfg.epsilon);
            for j in 0..feat {
                cur[base + j] = (clean[base + j] + delta[j]).clamp(-1.0, 1.0);
            }
        }

        let vals = eval(&cur)?;
        for i in 0..n {
            if !frozen[i] && vals[i] > best_val[i] {
                best_val[i] = vals[i];
                best_x[i * feat..(i + 1) * feat].copy_from_slice(&cur[i * feat..(i + 1) * feat]);
            }
        }
    }

    // Frozen examples fall back to the clean input.
    for i in 0..n {
        if frozen[i] {
            best_x[i * feat..(i + 1) * feat].copy_from_slice(&clean[i * feat..(i + 1) * feat]);
        }
    }

    let x_adv = Tensor::new(x.shape().to_vec(), best_x)?;
    let adv_pred = model.predict(&x_adv)?;
    let success: Vec<bool> = (0..n)
        .map(|i| !frozen[i] && adv_pred[i] != clean_pred[i])
        .collect();
    let achieved_norm: Vec<f64> = (0..n)
        .map(|i| {
            let delta: Vec<f64> = (0..feat)
                .map(|j| x_adv.data()[i * feat + j] - clean[i * feat + j])
                .collect();
            perturbation_norm(cfg.norm, &delta)
        })
        .collect();
    Ok(BatchAttackOutcome { x_adv, success, achieved_norm })
}

/// Attacks a single example (feature-shaped or `[1, ...]`).
pub fn pgd_attack(model: &Model, x: &Tensor, y_true: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    let batched = if x.shape().len() == model.spec.input_shape.len() {
        x.batched()
    } else {
        x.clone()
    };
    let out = pgd_attack_batch(model, &batched, &[y_true], cfg)?;
    let x_adv = if x.shape().len() == model.spec.input_shape.len() {
        out.x_adv.reshaped(x.shape())?
    } else {
        out.x_adv
    };
    Ok(AttackResult { x_adv, success: out.success[0], achieved_norm: out.achieved_norm[0] })
}

/// Accuracy on adversarially perturbed inputs (prediction vs. true label).
pub fn robust_accuracy(model: &Model, data: &Dataset, cfg: &AttackConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty { what: "robust evaluation dataset" });
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(256) {
        let (x, y) = data.gather(chunk)?;
        let out = pgd_attack_batch(model, &x, &y, cfg)?;
        let pred = model.predict(&out.x_adv)?;
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / data.len() as f64)
}
