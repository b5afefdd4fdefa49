//! Boundary-tilting experiment on the two-Gaussian toy problem.
//!
//! Trains a standard model plus weak/strong adversarially trained models,
//! rasterizes their decision regions, attacks one class's test points with
//! the analysis attack, and measures how far the successful adversarial
//! points sit from a 1-component PCA manifold of the training data.

use crate::artifacts::{bounding_box, fmt, raster_regions, Artifacts};
use crate::config::Config;
use gradlens_core::advtrain::{adversarial_train, AdvTrainConfig};
use gradlens_core::attack::{pgd_attack_batch, AttackConfig};
use gradlens_core::data::Dataset;
use gradlens_core::error::Result;
use gradlens_core::manifold::{distance_distribution, fit_pca, AnyProjector, DistanceStats, PcaProjector};
use gradlens_core::model::Model;
use gradlens_core::tensor::Tensor;
use gradlens_core::train::train;
use std::path::{Path, PathBuf};

/// One attacked cohort example (coordinates are 2-d toy inputs).
pub struct AttackRow {
    /// Index into the test split.
    pub example: usize,
    pub label: usize,
    pub clean: [f64; 2],
    pub adv: [f64; 2],
    pub success: bool,
    pub achieved_norm: f64,
}

/// One trained model plus its attack outcome.
pub struct ModelRun {
    pub label: &'static str,
    pub train_epsilon: f64,
    pub model: Model,
    pub natural_accuracy: f64,
    pub robust_accuracy: f64,
    pub attacks: Vec<AttackRow>,
    /// `None` when no attack on the cohort succeeded.
    pub dpi: Option<DistanceStats>,
}

/// Everything one replication seed produces.
pub struct BoundarySeed {
    pub seed: u64,
    pub train_ds: Dataset,
    pub test_ds: Dataset,
    pub projector: PcaProjector,
    pub models: Vec<ModelRun>,
}

/// Trains the three models and attacks the configured class cohort for one
/// seed, without writing anything.
pub fn boundary_seed(cfg: &Config, seed: u64) -> Result<BoundarySeed> {
    let (train_ds, test_ds) = cfg.load_datasets(seed)?;
    let spec = cfg.model_spec(&train_ds)?;
    let tc = cfg.train_for_seed(seed);
    let adv_attack = cfg.advtrain_attack_for_seed(seed);
    let analysis = cfg.attack_for_seed(seed);

    let k = cfg.projector.options.k.unwrap_or(1);
    let projector = fit_pca(&train_ds, k)?;

    // Cohort: the attacked class's test points.
    let cohort_idx: Vec<usize> = test_ds
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == cfg.boundary.attack_class)
        .map(|(i, _)| i)
        .collect();
    let cohort = test_ds.subset(&cohort_idx)?;

    let budgets: [(&'static str, f64); 3] = [
        ("standard", 0.0),
        ("weak", cfg.boundary.weak_epsilon),
        ("strong", cfg.boundary.strong_epsilon),
    ];
    let mut models = Vec::with_capacity(budgets.len());
    for (label, eps) in budgets {
        let init = Model::build(spec.clone(), seed)?;
        let model = if eps == 0.0 {
            train(init, &train_ds, Some(&test_ds), &tc)?
        } else {
            let atk = AttackConfig { epsilon: eps, ..adv_attack.clone() };
            adversarial_train(init, &train_ds, Some(&test_ds), &AdvTrainConfig { train: tc.clone(), attack: atk })?
        };
        let natural_accuracy = model.evaluate(&test_ds)?;
        let robust_accuracy = gradlens_core::attack::robust_accuracy(&model, &test_ds, &analysis)?;

        let outcome = pgd_attack_batch(&model, cohort.inputs(), cohort.labels(), &analysis)?;
        let mut attacks = Vec::with_capacity(cohort.len());
        let mut successes: Vec<f64> = Vec::new();
        let mut n_success = 0usize;
        for (i, &example_id) in cohort_idx.iter().enumerate() {
            let clean = cohort.example(i)?;
            let adv = outcome.x_adv.example(i)?;
            attacks.push(AttackRow {
                example: example_id,
                label: cohort.labels()[i],
                clean: [clean.data()[0], clean.data()[1]],
                adv: [adv.data()[0], adv.data()[1]],
                success: outcome.success[i],
                achieved_norm: outcome.achieved_norm[i],
            });
            if outcome.success[i] {
                successes.extend_from_slice(adv.data());
                n_success += 1;
            }
        }
        let dpi = if n_success > 0 {
            let xs = Tensor::new(vec![n_success, 2], successes)?;
            Some(distance_distribution(&projector, &xs, &format!("{label}-adv"), 20)?)
        } else {
            None
        };
        models.push(ModelRun {
            label,
            train_epsilon: eps,
            model,
            natural_accuracy,
            robust_accuracy,
            attacks,
            dpi,
        });
    }
    Ok(BoundarySeed { seed, train_ds, test_ds, projector, models })
}

pub struct BoundaryTilting;

impl super::Experiment for BoundaryTilting {
    fn name(&self) -> &'static str {
        "boundary-tilting"
    }

    fn about(&self) -> &'static str {
        "standard vs weak/strong adversarially trained toy models: decision rasters, attack scatter, off-manifold distances"
    }

    fn run(&self, cfg: &Config, out_dir: &Path) -> Result<Vec<PathBuf>> {
        let mut art = Artifacts::new(out_dir)?;
        let mut model_rows = Vec::new();
        let mut attack_rows = Vec::new();
        let mut dpi_rows = Vec::new();
        let mut distance_rows = Vec::new();

        for &seed in &cfg.seeds {
            let result = boundary_seed(cfg, seed)?;
            let bbox = bounding_box(&[&result.train_ds, &result.test_ds], cfg.boundary.padding)?;
            art.projector(
                &format!("projector_seed{seed}.glck"),
                &AnyProjector::Pca(result.projector.clone()),
            )?;

            for run in &result.models {
                let label = run.label;
                model_rows.push(vec![
                    seed.to_string(),
                    label.to_string(),
                    fmt(run.train_epsilon),
                    fmt(run.natural_accuracy),
                    fmt(run.robust_accuracy),
                ]);
                let pixels = raster_regions(&run.model, bbox, cfg.boundary.raster)?;
                art.ppm(
                    &format!("boundary_{label}_seed{seed}.ppm"),
                    cfg.boundary.raster,
                    cfg.boundary.raster,
                    &pixels,
                )?;
                art.model(&format!("model_{label}_seed{seed}.glck"), &run.model)?;

                for row in &run.attacks {
                    attack_rows.push(vec![
                        seed.to_string(),
                        label.to_string(),
                        row.example.to_string(),
                        row.label.to_string(),
                        fmt(row.clean[0]),
                        fmt(row.clean[1]),
                        fmt(row.adv[0]),
                        fmt(row.adv[1]),
                        (row.success as u8).to_string(),
                        fmt(row.achieved_norm),
                    ]);
                }
                let attacked = run.attacks.len();
                let succeeded = run.attacks.iter().filter(|r| r.success).count();
                let (mean, median) = match &run.dpi {
                    Some(s) => (fmt(s.mean), fmt(s.median)),
                    None => (String::new(), String::new()),
                };
                dpi_rows.push(vec![
                    seed.to_string(),
                    label.to_string(),
                    attacked.to_string(),
                    succeeded.to_string(),
                    mean,
                    median,
                ]);
                if let Some(s) = &run.dpi {
                    let ids: Vec<usize> = run
                        .attacks
                        .iter()
                        .filter(|r| r.success)
                        .map(|r| r.example)
                        .collect();
                    for (id, v) in ids.iter().zip(&s.values) {
                        distance_rows.push(vec![
                            seed.to_string(),
                            s.cohort.clone(),
                            id.to_string(),
                            fmt(*v),
                        ]);
                    }
                }
            }
        }

        art.csv(
            "boundary_models.csv",
            &["seed", "model", "train_epsilon", "natural_accuracy", "robust_accuracy"],
            &model_rows,
        )?;
        art.csv(
            "boundary_attacks.csv",
            &[
                "seed",
                "model",
                "example",
                "label",
                "clean_x0",
                "clean_x1",
                "adv_x0",
                "adv_x1",
                "success",
                "achieved_norm",
            ],
            &attack_rows,
        )?;
        art.csv(
            "boundary_dpi.csv",
            &["seed", "model", "attacked", "successful", "mean_dpi", "median_dpi"],
            &dpi_rows,
        )?;
        art.csv("distances.csv", &["seed", "cohort", "example", "d_pi"], &distance_rows)?;
        Ok(art.into_paths())
    }
}
