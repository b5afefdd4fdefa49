//! ε-sweep interpretability experiments: roar-kar (ε vs μ) and tradeoff
//! (natural accuracy vs μ).
//!
//! For every (norm, objective) pair the adversarial-training grid is swept,
//! and each swept model's gradient attributions are scored with μ_ROAR and
//! μ_KAR against a shared random-attribution baseline. All retrained
//! models come from one seeded retrain stream per replication seed, so the
//! random baseline subtracts exactly.

use crate::artifacts::{fmt, render_heatmap, Artifacts};
use crate::config::Config;
use gradlens_core::advtrain::epsilon_sweep;
use gradlens_core::attack::{AttackConfig, Norm};
use gradlens_core::attribution::lookup_method;
use gradlens_core::data::Dataset;
use gradlens_core::error::Result;
use gradlens_core::model::Model;
use gradlens_core::occlusion::{
    mu_score, pearson, retrain_baseline, roar_kar_curve, spearman, EvalCurve, OcclusionMode,
    OcclusionSpec,
};
use gradlens_core::rng::derive_seed;
use gradlens_core::tensor::Tensor;
use gradlens_core::train::{train, TrainConfig};
use std::path::{Path, PathBuf};

/// One μ measurement: a (model, method, metric) cell of the results table.
pub struct MuRow {
    pub norm: Norm,
    pub objective: String,
    pub epsilon: f64,
    pub natural_accuracy: f64,
    pub robust_accuracy: f64,
    pub method: String,
    pub metric: OcclusionMode,
    pub mu: f64,
}

/// One accuracy point of an occlusion curve (key fields pre-formatted;
/// empty norm/objective/epsilon mark the shared random-baseline curves).
pub struct CurveRow {
    pub norm: String,
    pub objective: String,
    pub epsilon: String,
    pub method: String,
    pub mode: OcclusionMode,
    pub fraction: f64,
    pub mean_accuracy: f64,
    pub baseline_accuracy: f64,
}

pub struct ManifestRow {
    pub norm: Norm,
    pub objective: String,
    pub epsilon: f64,
    pub natural_accuracy: f64,
    pub robust_accuracy: f64,
}

pub struct SweepSeedOutcome {
    pub seed: u64,
    pub manifest: Vec<ManifestRow>,
    pub mu_rows: Vec<MuRow>,
    pub curve_rows: Vec<CurveRow>,
    /// `(file name, width, height, pixels)` gradient heatmaps.
    pub heatmaps: Vec<(String, usize, usize, Vec<u8>)>,
    /// `(file name, model)` checkpoints for every swept model.
    pub checkpoints: Vec<(String, Model)>,
}

fn curve_rows_from(curve: &EvalCurve, norm: &str, objective: &str, epsilon: &str) -> Vec<CurveRow> {
    curve
        .points
        .iter()
        .map(|p| CurveRow {
            norm: norm.to_string(),
            objective: objective.to_string(),
            epsilon: epsilon.to_string(),
            method: curve.method.clone(),
            mode: curve.mode,
            fraction: p.fraction,
            mean_accuracy: p.mean_accuracy,
            baseline_accuracy: curve.baseline,
        })
        .collect()
}

/// Runs the sweep + μ pipeline for one replication seed without writing.
pub fn sweep_seed(cfg: &Config, seed: u64) -> Result<SweepSeedOutcome> {
    let (train_ds, test_ds) = cfg.load_datasets(seed)?;
    let spec = cfg.model_spec(&train_ds)?;
    let tc = cfg.train_for_seed(seed);
    let attr_seed = derive_seed(seed, &[0x4A2D]);
    let is_image = train_ds.feature_shape().len() >= 2;

    // One retrain stream per replication seed: retrain r always uses the
    // same init/shuffle seeds, whatever dataset it is handed. This makes the
    // random-baseline curve subtract exactly in μ.
    let spec_for_retrain = spec.clone();
    let tc_for_retrain = tc.clone();
    let mut retrain = move |ds: &Dataset, r: usize| -> Result<Model> {
        let rs = derive_seed(seed, &[0x0CC, r as u64]);
        train(
            Model::build(spec_for_retrain.clone(), rs)?,
            ds,
            None,
            &TrainConfig { seed: rs, ..tc_for_retrain.clone() },
        )
    };
    let baseline_per_seed = retrain_baseline(&train_ds, &test_ds, cfg.occlusion.retrains, &mut retrain)?;

    // Shared random-attribution curves (model-independent): computed once
    // per mode. The model argument is never consulted by the random method,
    // so an untrained one suffices.
    let random_method = lookup_method("random")?;
    let dummy = Model::build(spec.clone(), seed)?;
    let mut random_curves: Vec<(OcclusionMode, EvalCurve)> = Vec::new();
    let mut curve_rows: Vec<CurveRow> = Vec::new();
    for mode in [OcclusionMode::Roar, OcclusionMode::Kar] {
        let ospec = OcclusionSpec { mode, ..cfg.occlusion.clone() };
        let curve = roar_kar_curve(
            &dummy,
            random_method.as_ref(),
            &train_ds,
            &test_ds,
            &ospec,
            attr_seed,
            &baseline_per_seed,
            &mut retrain,
        )?;
        curve_rows.extend(curve_rows_from(&curve, "", "", ""));
        random_curves.push((mode, curve));
    }

    let methods: Vec<_> = cfg
        .methods
        .iter()
        .filter(|m| m.as_str() != "random")
        .map(|m| lookup_method(m))
        .collect::<Result<_>>()?;

    let mut manifest = Vec::new();
    let mut mu_rows = Vec::new();
    let mut heatmaps = Vec::new();
    let mut checkpoints = Vec::new();

    for &norm in &cfg.sweep.norms {
        for objective in &cfg.sweep.objectives {
            let base_attack = AttackConfig {
                norm,
                objective: objective.clone(),
                seed,
                ..cfg.advtrain.apply(&cfg.attack)
            };
            let sweep = epsilon_sweep(&spec, &train_ds, &test_ds, &cfg.sweep.grid, &tc, &base_attack)?;
            for point in &sweep {
                manifest.push(ManifestRow {
                    norm,
                    objective: objective.clone(),
                    epsilon: point.epsilon,
                    natural_accuracy: point.natural_accuracy,
                    robust_accuracy: point.robust_accuracy,
                });
                checkpoints.push((
                    format!("model_{norm}_{objective}_eps{}_seed{seed}.glck", fmt(point.epsilon)),
                    point.model.clone(),
                ));

                for method in &methods {
                    for (mode, rand_curve) in &random_curves {
                        let ospec = OcclusionSpec { mode: *mode, ..cfg.occlusion.clone() };
                        let curve = roar_kar_curve(
                            &point.model,
                            method.as_ref(),
                            &train_ds,
                            &test_ds,
                            &ospec,
                            attr_seed,
                            &baseline_per_seed,
                            &mut retrain,
                        )?;
                        curve_rows.extend(curve_rows_from(
                            &curve,
                            &norm.to_string(),
                            objective,
                            &fmt(point.epsilon),
                        ));
                        let score = mu_score(&curve, rand_curve)?;
                        mu_rows.push(MuRow {
                            norm,
                            objective: objective.clone(),
                            epsilon: point.epsilon,
                            natural_accuracy: point.natural_accuracy,
                            robust_accuracy: point.robust_accuracy,
                            method: curve.method.clone(),
                            metric: *mode,
                            mu: score.mu,
                        });
                    }

                    if is_image {
                        let x0 = test_ds.example(0)?;
                        let y0 = test_ds.labels()[0];
                        let attr = method.attribute(&point.model, &x0, y0, 0, attr_seed)?;
                        let g = Tensor::new(test_ds.feature_shape().to_vec(), attr.scores.clone())?;
                        let (w, h, px) = render_heatmap(&g)?;
                        heatmaps.push((
                            format!(
                                "heatmap_{norm}_{objective}_eps{}_{}_seed{seed}.pgm",
                                fmt(point.epsilon),
                                method.name()
                            ),
                            w,
                            h,
                            px,
                        ));
                    }
                }
            }
        }
    }

    Ok(SweepSeedOutcome { seed, manifest, mu_rows, curve_rows, heatmaps, checkpoints })
}

/// Per-(norm, objective, method, metric) correlation of μ against `x_of`,
/// in deterministic config order. Degenerate groups (constant inputs or
/// fewer than 2 points) yield empty cells rather than failing the run.
fn correlation_rows(
    cfg: &Config,
    seed: u64,
    rows: &[MuRow],
    x_of: impl Fn(&MuRow) -> f64,
) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for &norm in &cfg.sweep.norms {
        for objective in &cfg.sweep.objectives {
            for method in cfg.methods.iter().filter(|m| m.as_str() != "random") {
                for metric in [OcclusionMode::Roar, OcclusionMode::Kar] {
                    let group: Vec<&MuRow> = rows
                        .iter()
                        .filter(|r| {
                            r.norm == norm
                                && &r.objective == objective
                                && &r.method == method
                                && r.metric == metric
                        })
                        .collect();
                    let xs: Vec<f64> = group.iter().map(|r| x_of(r)).collect();
                    let ys: Vec<f64> = group.iter().map(|r| r.mu).collect();
                    let p = pearson(&xs, &ys).map(fmt).unwrap_or_default();
                    let s = spearman(&xs, &ys).map(fmt).unwrap_or_default();
                    out.push(vec![
                        seed.to_string(),
                        norm.to_string(),
                        objective.clone(),
                        method.clone(),
                        metric.to_string(),
                        p,
                        s,
                    ]);
                }
            }
        }
    }
    out
}

fn write_shared_tables(
    art: &mut Artifacts,
    manifest_rows: &[Vec<String>],
) -> Result<()> {
    art.csv(
        "sweep_manifest.csv",
        &["epsilon", "norm", "objective", "natural_accuracy", "robust_accuracy", "seed"],
        manifest_rows,
    )
}

fn manifest_csv_rows(outcomes: &[SweepSeedOutcome]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for o in outcomes {
        for m in &o.manifest {
            rows.push(vec![
                fmt(m.epsilon),
                m.norm.to_string(),
                m.objective.clone(),
                fmt(m.natural_accuracy),
                fmt(m.robust_accuracy),
                o.seed.to_string(),
            ]);
        }
    }
    rows
}

pub struct RoarKar;

impl super::Experiment for RoarKar {
    fn name(&self) -> &'static str {
        "roar-kar"
    }

    fn about(&self) -> &'static str {
        "μ_ROAR/μ_KAR of gradient attributions across an adversarial-training ε sweep, with ε-vs-μ correlations"
    }

    fn run(&self, cfg: &Config, out_dir: &Path) -> Result<Vec<PathBuf>> {
        let mut art = Artifacts::new(out_dir)?;
        let outcomes: Vec<SweepSeedOutcome> =
            cfg.seeds.iter().map(|&s| sweep_seed(cfg, s)).collect::<Result<_>>()?;

        write_shared_tables(&mut art, &manifest_csv_rows(&outcomes))?;

        let mut mu_csv = Vec::new();
        let mut curve_csv = Vec::new();
        let mut corr_csv = Vec::new();
        for o in &outcomes {
            for r in &o.mu_rows {
                mu_csv.push(vec![
                    o.seed.to_string(),
                    r.norm.to_string(),
                    r.objective.clone(),
                    fmt(r.epsilon),
                    r.method.clone(),
                    r.metric.to_string(),
                    fmt(r.mu),
                ]);
            }
            for c in &o.curve_rows {
                curve_csv.push(vec![
                    o.seed.to_string(),
                    c.norm.clone(),
                    c.objective.clone(),
                    c.epsilon.clone(),
                    c.method.clone(),
                    c.mode.to_string(),
                    fmt(c.fraction),
                    fmt(c.mean_accuracy),
                    fmt(c.baseline_accuracy),
                ]);
            }
            corr_csv.extend(correlation_rows(cfg, o.seed, &o.mu_rows, |r| r.epsilon));
            for (name, w, h, px) in &o.heatmaps {
                art.pgm(name, *w, *h, px)?;
            }
            for (name, model) in &o.checkpoints {
                art.model(name, model)?;
            }
        }
        art.csv(
            "mu_scores.csv",
            &["seed", "norm", "objective", "epsilon", "method", "metric", "mu"],
            &mu_csv,
        )?;
        art.csv(
            "occlusion_curves.csv",
            &[
                "seed",
                "norm",
                "objective",
                "epsilon",
                "method",
                "mode",
                "fraction",
                "mean_accuracy",
                "baseline_accuracy",
            ],
            &curve_csv,
        )?;
        art.csv(
            "mu_correlations.csv",
            &["seed", "norm", "objective", "method", "metric", "pearson_eps_mu", "spearman_eps_mu"],
            &corr_csv,
        )?;
        Ok(art.into_paths())
    }
}

pub struct Tradeoff;

impl super::Experiment for Tradeoff {
    fn name(&self) -> &'static str {
        "tradeoff"
    }

    fn about(&self) -> &'static str {
        "natural accuracy vs μ across the same ε sweep, with accuracy-vs-μ correlations"
    }

    fn run(&self, cfg: &Config, out_dir: &Path) -> Result<Vec<PathBuf>> {
        let mut art = Artifacts::new(out_dir)?;
        let outcomes: Vec<SweepSeedOutcome> =
            cfg.seeds.iter().map(|&s| sweep_seed(cfg, s)).collect::<Result<_>>()?;

        write_shared_tables(&mut art, &manifest_csv_rows(&outcomes))?;

        let mut rows = Vec::new();
        let mut corr_csv = Vec::new();
        for o in &outcomes {
            for r in &o.mu_rows {
                rows.push(vec![
                    o.seed.to_string(),
                    r.norm.to_string(),
                    r.objective.clone(),
                    fmt(r.epsilon),
                    fmt(r.natural_accuracy),
                    r.method.clone(),
                    r.metric.to_string(),
                    fmt(r.mu),
                ]);
            }
            corr_csv.extend(correlation_rows(cfg, o.seed, &o.mu_rows, |r| r.natural_accuracy));
        }
        art.csv(
            "tradeoff.csv",
            &["seed", "norm", "objective", "epsilon", "natural_accuracy", "method", "metric", "mu"],
            &rows,
        )?;
        art.csv(
            "tradeoff_correlations.csv",
            &["seed", "norm", "objective", "method", "metric", "pearson_acc_mu", "spearman_acc_mu"],
            &corr_csv,
        )?;
        Ok(art.into_paths())
    }
}
