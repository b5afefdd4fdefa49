//! Manifold-distance experiment on image data.
//!
//! Trains the ε grid of adversarially trained models (ε = 0 is the
//! standard model), fits a projector to the training images, attacks a test
//! cohort with a large analysis attack, filters to successful adversarial
//! examples, and compares their off-manifold distances with the natural
//! test images' distances.

use crate::artifacts::{fmt, input_to_gray, Artifacts};
use crate::config::Config;
use gradlens_core::advtrain::{epsilon_sweep, SweepPoint};
use gradlens_core::attack::{pgd_attack_batch, AttackConfig};
use gradlens_core::data::Dataset;
use gradlens_core::error::{Error, Result};
use gradlens_core::manifold::{distance_distribution, lookup_projector, AnyProjector, DistanceStats};
use gradlens_core::rng::derive_seed;
use gradlens_core::tensor::Tensor;
use gradlens_core::train::TrainConfig;
use std::path::{Path, PathBuf};

/// Distance outcome for one cohort of one model.
pub struct CohortOutcome {
    pub cohort: String,
    pub attacked: usize,
    pub successes: usize,
    /// `None` means every attack failed (flagged, not fatal).
    pub stats: Option<DistanceStats>,
    /// Test-split indices of the successful examples, aligned with
    /// `stats.values`.
    pub example_ids: Vec<usize>,
}

/// A sample adversarial image for visual inspection.
pub struct SampleImage {
    pub cohort: String,
    pub example: usize,
    pub clean: Vec<f64>,
    pub adv: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

pub struct ManifoldSeed {
    pub seed: u64,
    pub analysis_epsilon: f64,
    pub sweep: Vec<SweepPoint>,
    pub projector: AnyProjector,
    pub test_stats: DistanceStats,
    pub cohorts: Vec<CohortOutcome>,
    pub samples: Vec<SampleImage>,
}

/// Runs the full manifold-distance pipeline for one seed without writing.
pub fn manifold_seed(cfg: &Config, seed: u64) -> Result<ManifoldSeed> {
    let (train_ds, test_ds) = cfg.load_datasets(seed)?;
    let spec = cfg.model_spec(&train_ds)?;
    let tc = cfg.train_for_seed(seed);
    let adv_attack = cfg.advtrain_attack_for_seed(seed);

    let sweep = epsilon_sweep(&spec, &train_ds, &test_ds, &cfg.sweep.grid, &tc, &adv_attack)?;

    // Projector over the training images.
    let fitter = lookup_projector(&cfg.projector.kind)?;
    let mut options = cfg.projector.options.clone();
    options.train = TrainConfig { seed: derive_seed(seed, &[0xAE5]), ..options.train };
    let projector = fitter.fit(&train_ds, &options)?;

    // Attack cohort: leading slice of the test split (its order is already
    // randomized at generation), capped for runtime.
    let cap = cfg.manifold_distance.max_attack_examples;
    let n_attack = if cap == 0 { test_ds.len() } else { cap.min(test_ds.len()) };
    let cohort_idx: Vec<usize> = (0..n_attack).collect();
    let cohort = test_ds.subset(&cohort_idx)?;
    let bins = cfg.manifold_distance.bins;

    // Natural test images: the model-independent reference cohort.
    let flat_test = test_ds.inputs().reshaped(&[test_ds.len(), test_ds.feature_len()])?;
    let test_stats = distance_distribution(projector.as_projector(), &flat_test, "test", bins)?;

    let max_grid = cfg.sweep.grid.iter().cloned().fold(0.0f64, f64::max);
    let analysis_epsilon = cfg
        .manifold_distance
        .analysis_epsilon
        .unwrap_or(cfg.manifold_distance.analysis_epsilon_ratio * max_grid);
    let analysis = AttackConfig { epsilon: analysis_epsilon, ..cfg.attack_for_seed(seed) };

    let (height, width) = match *test_ds.feature_shape() {
        [_, h, w] => (h, w),
        [h, w] => (h, w),
        _ => (1, test_ds.feature_len()),
    };

    let mut cohorts = Vec::with_capacity(sweep.len());
    let mut samples = Vec::new();
    for point in &sweep {
        let cohort_name = format!("adv_eps{}", fmt(point.epsilon));
        let outcome = pgd_attack_batch(&point.model, cohort.inputs(), cohort.labels(), &analysis)?;
        let d = cohort.feature_len();
        let mut succ_data = Vec::new();
        let mut example_ids = Vec::new();
        for (i, &example_id) in cohort_idx.iter().enumerate() {
            if outcome.success[i] {
                succ_data.extend_from_slice(outcome.x_adv.example(i)?.data());
                example_ids.push(example_id);
            }
        }
        let successes = example_ids.len();
        let stats = if successes > 0 {
            let xs = Tensor::new(vec![successes, d], succ_data)?;
            Some(distance_distribution(projector.as_projector(), &xs, &cohort_name, bins)?)
        } else {
            None
        };
        let plane = height * width;
        for i in (0..cohort.len()).filter(|&i| outcome.success[i]).take(cfg.manifold_distance.sample_images) {
            // Channel 0 only — the sample dumps are grayscale previews.
            samples.push(SampleImage {
                cohort: cohort_name.clone(),
                example: cohort_idx[i],
                clean: cohort.example(i)?.data()[..plane].to_vec(),
                adv: outcome.x_adv.example(i)?.data()[..plane].to_vec(),
                height,
                width,
            });
        }
        cohorts.push(CohortOutcome {
            cohort: cohort_name,
            attacked: cohort.len(),
            successes,
            stats,
            example_ids,
        });
    }

    Ok(ManifoldSeed { seed, analysis_epsilon, sweep, projector, test_stats, cohorts, samples })
}

fn check_image_source(train_ds: &Dataset) -> Result<()> {
    if train_ds.feature_shape().len() < 2 {
        return Err(Error::InvalidParameter {
            name: "dataset.source",
            reason: "manifold-distance needs image-shaped inputs (synthetic or idx source)".into(),
        });
    }
    Ok(())
}

pub struct ManifoldDistance;

impl super::Experiment for ManifoldDistance {
    fn name(&self) -> &'static str {
        "manifold-distance"
    }

    fn about(&self) -> &'static str {
        "off-manifold distance distributions of successful attacks across an adversarial-training ε grid"
    }

    fn run(&self, cfg: &Config, out_dir: &Path) -> Result<Vec<PathBuf>> {
        let mut art = Artifacts::new(out_dir)?;
        let mut manifest_rows = Vec::new();
        let mut stats_rows = Vec::new();
        let mut distance_rows = Vec::new();

        for &seed in &cfg.seeds {
            {
                let (train_probe, _) = cfg.load_datasets(seed)?;
                check_image_source(&train_probe)?;
            }
            let result = manifold_seed(cfg, seed)?;
            art.projector(&format!("projector_seed{seed}.glck"), &result.projector)?;

            for point in &result.sweep {
                manifest_rows.push(vec![
                    fmt(point.epsilon),
                    cfg.advtrain.apply(&cfg.attack).norm.to_string(),
                    cfg.advtrain.apply(&cfg.attack).objective.clone(),
                    fmt(point.natural_accuracy),
                    fmt(point.robust_accuracy),
                    seed.to_string(),
                ]);
                art.model(
                    &format!("model_eps{}_seed{seed}.glck", fmt(point.epsilon)),
                    &point.model,
                )?;
            }

            // Reference cohort: natural test images.
            stats_rows.push(vec![
                seed.to_string(),
                "test".into(),
                result.test_stats.values.len().to_string(),
                result.test_stats.values.len().to_string(),
                fmt(result.test_stats.mean),
                fmt(result.test_stats.median),
            ]);
            for (i, v) in result.test_stats.values.iter().enumerate() {
                distance_rows.push(vec![seed.to_string(), "test".into(), i.to_string(), fmt(*v)]);
            }

            for c in &result.cohorts {
                let (mean, median) = match &c.stats {
                    Some(s) => (fmt(s.mean), fmt(s.median)),
                    None => (String::new(), String::new()),
                };
                stats_rows.push(vec![
                    seed.to_string(),
                    c.cohort.clone(),
                    c.attacked.to_string(),
                    c.successes.to_string(),
                    mean,
                    median,
                ]);
                if let Some(s) = &c.stats {
                    for (id, v) in c.example_ids.iter().zip(&s.values) {
                        distance_rows.push(vec![
                            seed.to_string(),
                            c.cohort.clone(),
                            id.to_string(),
                            fmt(*v),
                        ]);
                    }
                }
            }

            for s in &result.samples {
                art.pgm(
                    &format!("clean_{}_ex{}_seed{seed}.pgm", s.cohort, s.example),
                    s.width,
                    s.height,
                    &input_to_gray(&s.clean),
                )?;
                art.pgm(
                    &format!("adv_{}_ex{}_seed{seed}.pgm", s.cohort, s.example),
                    s.width,
                    s.height,
                    &input_to_gray(&s.adv),
                )?;
            }
        }

        art.csv(
            "sweep_manifest.csv",
            &["epsilon", "norm", "objective", "natural_accuracy", "robust_accuracy", "seed"],
            &manifest_rows,
        )?;
        art.csv(
            "distance_stats.csv",
            &["seed", "cohort", "attacked", "successes", "mean_dpi", "median_dpi"],
            &stats_rows,
        )?;
        art.csv("distances.csv", &["seed", "cohort", "example", "d_pi"], &distance_rows)?;
        Ok(art.into_paths())
    }
}
