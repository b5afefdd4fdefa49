//! Minibatch training with Adam on softmax cross-entropy.
//!
//! One inner loop serves both standard and adversarial training (the latter
//! passes an adversary that perturbs each minibatch before the step). The
//! shuffle stream, batch layout, and update arithmetic are shared, so an
//! adversary with `ε = 0` reproduces standard training bit for bit.

use crate::attack::{pgd_attack_batch, robust_accuracy, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{EpochStats, Model};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tape::{Reduction, Tape};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Stream tags for deriving independent RNG streams from the training seed.
const STREAM_SHUFFLE: u64 = 0x5487;
const STREAM_ATTACK: u64 = 0xA77A;
const STREAM_ROBUST_EVAL: u64 = 0x2EAE;

/// Adam hyperparameters plus loop controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be > 0, got {}", self.alpha),
            });
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be in [0, 1), got {b}"),
                });
            }
        }
        if self.eps_adam.is_nan() || self.eps_adam <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "eps_adam",
                reason: format!("must be > 0, got {}", self.eps_adam),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter { name: "batch_size", reason: "must be >= 1".into() });
        }
        Ok(())
    }
}

/// Adam with bias correction; one moment pair per parameter tensor.
pub struct Adam {
    alpha: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, param_sizes: &[usize]) -> Adam {
        Adam {
            alpha: cfg.alpha,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps_adam,
            t: 0,
            m: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// One update over all parameter tensors.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("Adam::step", self.m.len(), (params.len(), grads.len())));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (pi, p) in params.iter_mut().enumerate() {
            let g = grads[pi];
            if g.len() != p.len() {
                return Err(Error::shape("Adam::step gradient", p.len(), g.len()));
            }
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for (j, theta) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta -= self.alpha * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Shared minibatch loop. `adversary = None` is standard training; otherwise
/// each batch is replaced by its PGD perturbation against the current
/// parameters (attack seed derived from `(seed, epoch, batch)`), and the
/// history additionally records robust test accuracy.
pub(crate) fn train_impl(
    mut model: Model,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    adversary: Option<&AttackConfig>,
) -> Result<Model> {
    cfg.validate()?;
    if let Some(a) = adversary {
        a.validate()?;
    }
    if data.is_empty() {
        return Err(Error::Empty { what: "training dataset" });
    }
    if data.classes() != model.spec.classes {
        return Err(Error::shape("train classes", model.spec.classes, data.classes()));
    }
    if data.feature_shape() != model.spec.input_shape.as_slice() {
        return Err(Error::shape("train inputs", &model.spec.input_shape, data.feature_shape()));
    }

    let sizes: Vec<usize> = model.params.iter().map(Tensor::len).collect();
    let mut adam = Adam::new(cfg, &sizes);
    let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, &[STREAM_SHUFFLE]));
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.gather(chunk)?;
            let x_train = match adversary {
                None => x,
                Some(a) => {
                    let batch_cfg = AttackConfig {
                        seed: derive_seed(
                            cfg.seed,
                            &[STREAM_ATTACK, epoch as u64, batch_idx as u64],
                        ),
                        ..a.clone()
                    };
                    pgd_attack_batch(&model, &x, &y, &batch_cfg)?.x_adv
                }
            };

            let mut tape = Tape::new();
            let xid = tape.leaf(&x_train);
            let param_ids = model.param_leaves(&mut tape);
            let logits = model.forward_on_tape(&mut tape, xid, &param_ids)?;
            let loss = tape.softmax_xent(logits, &y, Reduction::Mean)?;
            let loss_val = tape.value(loss).item()?;
            if !loss_val.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {epoch}, batch {batch_idx}"),
                });
            }
            tape.backward(loss)?;
            let grads: Vec<&[f64]> = param_ids
                .iter()
                .map(|&id| tape.grad(id).expect("parameters participate in loss"))
                .collect();
            adam.step(&mut model.params, &grads)?;
            loss_sum += loss_val * chunk.len() as f64;
        }

        let test_accuracy = match test {
            Some(t) => Some(model.evaluate(t)?),
            None => None,
        };
        let robust = match (adversary, test) {
            (Some(a), Some(t)) => {
                let eval_cfg = AttackConfig {
                    seed: derive_seed(cfg.seed, &[STREAM_ROBUST_EVAL, epoch as u64]),
                    ..a.clone()
                };
                Some(robust_accuracy(&model, t, &eval_cfg)?)
            }
            _ => None,
        };
        model.history.push(EpochStats {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            test_accuracy,
            robust_accuracy: robust,
        });
    }
    Ok(model)
}

/// Standard minibatch Adam training on softmax cross-entropy.
pub fn train(model: Model, data: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<Model> {
    train_impl(model, data, test, cfg, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_toy, ToySpec};
    use crate::model::ModelSpec;

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let cfg = TrainConfig::default();
        let mut params = vec![Tensor::new(vec![2], vec![0.5, -0.25]).unwrap()];
        let before = params.clone();
        let mut adam = Adam::new(&cfg, &[2]);
        let zeros = vec![0.0; 2];
        adam.step(&mut params, &[&zeros]).unwrap();
        adam.step(&mut params, &[&zeros]).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_moves_by_alpha_times_sign() {
        // With bias correction, the first step is alpha * g/(|g| + eps')
        // ≈ alpha * sign(g).
        let cfg = TrainConfig { alpha: 0.1, ..Default::default() };
        let mut params = vec![Tensor::new(vec![2], vec![1.0, 1.0]).unwrap()];
        let mut adam = Adam::new(&cfg, &[2]);
        adam.step(&mut params, &[&[3.0, -0.5]]).unwrap();
        assert!((params[0].data()[0] - (1.0 - 0.1)).abs() < 1e-6);
        assert!((params[0].data()[1] - (1.0 + 0.1)).abs() < 1e-6);
    }

    #[test]
    fn zero_epochs_leaves_parameters_unchanged() {
        let ds = gen_toy(&ToySpec { samples_per_class: 20, ..ToySpec::default() }).unwrap();
        let model = Model::build(ModelSpec::toy(), 1).unwrap();
        let before = model.params.clone();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let trained = train(model, &ds, None, &cfg).unwrap();
        assert_eq!(trained.params, before);
        assert!(trained.history.is_empty());
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let ds = gen_toy(&ToySpec { samples_per_class: 40, ..ToySpec::default() }).unwrap();
        let cfg = TrainConfig { epochs: 2, seed: 5, ..Default::default() };
        let a = train(Model::build(ModelSpec::toy(), 1).unwrap(), &ds, None, &cfg).unwrap();
        let b = train(Model::build(ModelSpec::toy(), 1).unwrap(), &ds, None, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn single_batch_overfit_reaches_full_train_accuracy() {
        let ds = gen_toy(&ToySpec { samples_per_class: 16, ..ToySpec::default() }).unwrap();
        let cfg = TrainConfig { epochs: 200, batch_size: 32, ..Default::default() };
        let m = train(Model::build(ModelSpec::toy(), 2).unwrap(), &ds, None, &cfg).unwrap();
        assert_eq!(m.evaluate(&ds).unwrap(), 1.0);
    }

    #[test]
    fn toy_loss_is_non_increasing_after_epoch_two_within_tolerance() {
        let ds = gen_toy(&ToySpec::default()).unwrap();
        let (train_ds, test_ds) = ds.split_holdout(0.2, 0).unwrap();
        let cfg = TrainConfig { seed: 0, ..Default::default() };
        let m = train(Model::build(ModelSpec::toy(), 0).unwrap(), &train_ds, Some(&test_ds), &cfg).unwrap();
        for w in m.history.windows(2).skip(2) {
            assert!(
                w[1].train_loss <= w[0].train_loss * 1.05,
                "epoch {}: {} -> {}",
                w[1].epoch,
                w[0].train_loss,
                w[1].train_loss
            );
        }
        assert!(m.history.iter().all(|e| e.test_accuracy.is_some()));
    }

    #[test]
    fn train_rejects_mismatched_dataset() {
        let ds = gen_toy(&ToySpec { samples_per_class: 10, ..ToySpec::default() }).unwrap();
        let model = Model::build(ModelSpec::small_cnn(vec![1, 8, 8], 2), 0).unwrap();
        assert!(train(model, &ds, None, &TrainConfig::default()).is_err());
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        let bad = TrainConfig { alpha: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { beta1: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
