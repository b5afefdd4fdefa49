//! Adversarial training: every minibatch is replaced by its PGD perturbation
//! against the current parameters before the optimizer step (adversarial
//! images only, never mixed with clean ones), plus the ε-grid sweep used by
//! the robustness/interpretability experiments.

use crate::attack::AttackConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::train::{train_impl, TrainConfig};
use serde::{Deserialize, Serialize};

/// Training parameters plus the training-time adversary. An `ε = 0` attack
/// makes this identical to standard training.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdvTrainConfig {
    pub train: TrainConfig,
    pub attack: AttackConfig,
}

/// Adversarial training. Shares the inner loop (shuffle stream, batching,
/// Adam arithmetic) with `train`, so `attack.epsilon = 0` yields bit-identical
/// parameters to standard training under the same seed. Failed attacks are
/// still trained on; success filtering is an analysis-time concern.
pub fn adversarial_train(
    model: Model,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &AdvTrainConfig,
) -> Result<Model> {
    train_impl(model, data, test, &cfg.train, Some(&cfg.attack))
}

/// One ε-grid point: the trained model and its summary metrics.
#[derive(Debug)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub model: Model,
    pub natural_accuracy: f64,
    pub robust_accuracy: f64,
}

/// Trains one model per ε in `grid` (ascending, all ≥ 0), each built from the
/// same seed. ε = 0 entries degenerate to standard training.
pub fn epsilon_sweep(
    spec: &ModelSpec,
    data: &Dataset,
    test: &Dataset,
    grid: &[f64],
    base_train: &TrainConfig,
    base_attack: &AttackConfig,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::Empty { what: "epsilon grid" });
    }
    for w in grid.windows(2) {
        if w[1] < w[0] {
            return Err(Error::InvalidParameter {
                name: "epsilon grid",
                reason: format!("must be ascending, got {} before {}", w[0], w[1]),
            });
        }
    }
    if grid[0] < 0.0 || !grid.iter().all(|e| e.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "epsilon grid",
            reason: "all values must be finite and >= 0".into(),
        });
    }

    let mut out = Vec::with_capacity(grid.len());
    for &epsilon in grid {
        let cfg = AdvTrainConfig {
            train: base_train.clone(),
            attack: AttackConfig { epsilon, ..base_attack.clone() },
        };
        let model = adversarial_train(Model::build(spec.clone(), base_train.seed)?, data, Some(test), &cfg)?;
        let natural_accuracy = model.evaluate(test)?;
        let robust_accuracy = crate::attack::robust_accuracy(&model, test, &cfg.attack)?;
        out.push(SweepPoint { epsilon, model, natural_accuracy, robust_accuracy });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::Norm;
    use crate::data::{gen_toy, ToySpec};
    use crate::train::train;

    fn small_toy() -> Dataset {
        gen_toy(&ToySpec { samples_per_class: 40, ..ToySpec::default() }).unwrap()
    }

    #[test]
    fn epsilon_zero_matches_standard_training_bit_for_bit() {
        let ds = small_toy();
        let (train_ds, test_ds) = ds.split_holdout(0.2, 3).unwrap();
        let tc = TrainConfig { epochs: 3, seed: 7, ..Default::default() };
        let standard = train(
            Model::build(ModelSpec::toy(), 7).unwrap(),
            &train_ds,
            Some(&test_ds),
            &tc,
        )
        .unwrap();
        let cfg = AdvTrainConfig {
            train: tc,
            attack: AttackConfig { norm: Norm::L2, epsilon: 0.0, ..Default::default() },
        };
        let adversarial = adversarial_train(
            Model::build(ModelSpec::toy(), 7).unwrap(),
            &train_ds,
            Some(&test_ds),
            &cfg,
        )
        .unwrap();
        assert_eq!(standard.params, adversarial.params);
    }

    #[test]
    fn adversarial_history_records_robust_accuracy() {
        let ds = small_toy();
        let (train_ds, test_ds) = ds.split_holdout(0.2, 3).unwrap();
        let cfg = AdvTrainConfig {
            train: TrainConfig { epochs: 2, ..Default::default() },
            attack: AttackConfig { norm: Norm::L2, epsilon: 0.3, steps: 5, ..Default::default() },
        };
        let m = adversarial_train(
            Model::build(ModelSpec::toy(), 1).unwrap(),
            &train_ds,
            Some(&test_ds),
            &cfg,
        )
        .unwrap();
        assert_eq!(m.history.len(), 2);
        assert!(m.history.iter().all(|e| e.robust_accuracy.is_some()));
        assert!(m.history.iter().all(|e| e.test_accuracy.is_some()));
    }

    #[test]
    fn sweep_with_zero_only_grid_is_standard_training() {
        let ds = small_toy();
        let (train_ds, test_ds) = ds.split_holdout(0.2, 3).unwrap();
        let tc = TrainConfig { epochs: 2, seed: 11, ..Default::default() };
        let points = epsilon_sweep(
            &ModelSpec::toy(),
            &train_ds,
            &test_ds,
            &[0.0],
            &tc,
            &AttackConfig { norm: Norm::L2, steps: 3, ..Default::default() },
        )
        .unwrap();
        assert_eq!(points.len(), 1);
        let standard = train(Model::build(ModelSpec::toy(), 11).unwrap(), &train_ds, Some(&test_ds), &tc).unwrap();
        assert_eq!(points[0].model.params, standard.params);
        assert_eq!(points[0].epsilon, 0.0);
    }

    #[test]
    fn sweep_rejects_descending_or_negative_grids() {
        let ds = small_toy();
        let (train_ds, test_ds) = ds.split_holdout(0.2, 3).unwrap();
        let tc = TrainConfig { epochs: 1, ..Default::default() };
        let atk = AttackConfig { steps: 2, ..Default::default() };
        assert!(epsilon_sweep(&ModelSpec::toy(), &train_ds, &test_ds, &[0.5, 0.2], &tc, &atk).is_err());
        assert!(epsilon_sweep(&ModelSpec::toy(), &train_ds, &test_ds, &[-0.1, 0.2], &tc, &atk).is_err());
        assert!(epsilon_sweep(&ModelSpec::toy(), &train_ds, &test_ds, &[], &tc, &atk).is_err());
    }
}
