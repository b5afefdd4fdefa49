//! TOML experiment configuration.
//!
//! One file configures any experiment; each subcommand reads the sections
//! relevant to it and ignores the rest. Every field has a desk-scale
//! default, so a minimal config only names the dataset source. Keys mirror
//! the library's config types (`[train]`, `[attack]`, `[occlusion]`,
//! `[projector]`, …).

use gradlens_core::attack::{AttackConfig, Norm};
use gradlens_core::data::{
    downsample2x, gen_synthetic_images, gen_toy, load_idx, Dataset, SyntheticImageSpec, ToySpec,
};
use gradlens_core::error::{Error, Result};
use gradlens_core::manifold::ProjectorConfig;
use gradlens_core::model::ModelSpec;
use gradlens_core::occlusion::OcclusionSpec;
use gradlens_core::rng::derive_seed;
use gradlens_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Root of the TOML file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Independent replication seeds; every per-seed quantity (dataset
    /// sampling, init, shuffling, attacks) derives from one entry.
    pub seeds: Vec<u64>,
    /// Artifact directory; `--out` overrides, default `runs/<experiment>`.
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelKind,
    pub train: TrainConfig,
    /// The analysis attack (boundary scatter, manifold cohorts, robust
    /// accuracy in sweeps).
    pub attack: AttackConfig,
    /// Overrides for the attack used *inside* adversarial training.
    pub advtrain: AdvAttackOverrides,
    pub sweep: SweepConfig,
    pub occlusion: OcclusionSpec,
    /// Attribution methods scored by the occlusion experiments.
    pub methods: Vec<String>,
    pub projector: ProjectorChoice,
    pub boundary: BoundaryConfig,
    pub manifold_distance: ManifoldDistanceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seeds: vec![0, 1, 2],
            out_dir: None,
            dataset: DatasetConfig::default(),
            model: ModelKind::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            advtrain: AdvAttackOverrides::default(),
            sweep: SweepConfig::default(),
            occlusion: OcclusionSpec::default(),
            methods: vec!["grad".into(), "grad_input".into()],
            projector: ProjectorChoice::default(),
            boundary: BoundaryConfig::default(),
            manifold_distance: ManifoldDistanceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// "toy" | "synthetic" | "idx"
    pub source: String,
    pub toy: ToySpec,
    pub synthetic: SyntheticImageSpec,
    pub idx: IdxConfig,
    /// Fraction of a single-split source (toy) held out as the test set.
    pub holdout_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: "toy".into(),
            toy: ToySpec::default(),
            synthetic: SyntheticImageSpec::default(),
            idx: IdxConfig::default(),
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdxConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Deterministic subsample sizes (0 = keep everything).
    pub subsample_train: usize,
    pub subsample_test: usize,
    /// Halve the resolution by 2×2 mean pooling.
    pub downsample: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelKind {
    /// "toy" | "small_cnn" | "mnist_cnn"
    pub kind: String,
}

impl Default for ModelKind {
    fn default() -> Self {
        ModelKind { kind: "toy".into() }
    }
}

/// Sparse overrides applied to [`Config::attack`] to form the training-time
/// adversary (typically fewer steps for speed).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvAttackOverrides {
    pub steps: Option<usize>,
    pub step_size: Option<f64>,
    pub norm: Option<Norm>,
    pub objective: Option<String>,
    pub random_start: Option<bool>,
}

impl AdvAttackOverrides {
    pub fn apply(&self, base: &AttackConfig) -> AttackConfig {
        AttackConfig {
            steps: self.steps.unwrap_or(base.steps),
            step_size: self.step_size.or(base.step_size),
            norm: self.norm.unwrap_or(base.norm),
            objective: self.objective.clone().unwrap_or_else(|| base.objective.clone()),
            random_start: self.random_start.unwrap_or(base.random_start),
            ..base.clone()
        }
    }
}

/// Projector kind plus its fitting options (flattened into `[projector]`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectorChoice {
    /// "pca" | "autoencoder"
    pub kind: String,
    #[serde(flatten)]
    pub options: ProjectorConfig,
}

impl Default for ProjectorChoice {
    fn default() -> Self {
        ProjectorChoice { kind: "pca".into(), options: ProjectorConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Ascending ε grid; 0 entries are standard training.
    pub grid: Vec<f64>,
    /// Norms swept by roar-kar/tradeoff ("l2", "linf").
    pub norms: Vec<Norm>,
    /// Objectives swept ("xent", "cw").
    pub objectives: Vec<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            grid: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            norms: vec![Norm::L2],
            objectives: vec!["xent".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    /// Training-adversary budgets for the weak and strong models.
    pub weak_epsilon: f64,
    pub strong_epsilon: f64,
    /// Raster resolution (pixels per side).
    pub raster: usize,
    /// Bounding-box padding as a fraction of each side.
    pub padding: f64,
    /// Label whose test points are attacked for the scatter figure.
    pub attack_class: usize,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig {
            weak_epsilon: 0.25,
            strong_epsilon: 0.5,
            raster: 400,
            padding: 0.2,
            attack_class: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldDistanceConfig {
    /// Analysis-attack ε as a multiple of the largest sweep ε (mirrors a
    /// 12:4 analysis-to-training ratio).
    pub analysis_epsilon_ratio: f64,
    /// Explicit analysis ε (overrides the ratio when set).
    pub analysis_epsilon: Option<f64>,
    /// Cap on attacked test examples per model (0 = all).
    pub max_attack_examples: usize,
    /// Sample adversarial images written per model.
    pub sample_images: usize,
    /// Histogram bins in the emitted distance stats.
    pub bins: usize,
}

impl Default for ManifoldDistanceConfig {
    fn default() -> Self {
        ManifoldDistanceConfig {
            analysis_epsilon_ratio: 3.0,
            analysis_epsilon: None,
            max_attack_examples: 200,
            sample_images: 4,
            bins: 30,
        }
    }
}

impl Config {
    /// Parses a TOML config file.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::FileFormat {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let cfg: Config = toml::from_str(&text).map_err(|e| Error::FileFormat {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Empty { what: "seeds" });
        }
        match self.dataset.source.as_str() {
            "toy" | "synthetic" => {}
            "idx" => {
                for p in [
                    &self.dataset.idx.train_images,
                    &self.dataset.idx.train_labels,
                    &self.dataset.idx.test_images,
                    &self.dataset.idx.test_labels,
                ] {
                    if !p.exists() {
                        return Err(Error::FileFormat {
                            path: p.display().to_string(),
                            reason: "referenced IDX file does not exist".into(),
                        });
                    }
                }
            }
            other => {
                return Err(Error::InvalidParameter {
                    name: "dataset.source",
                    reason: format!("unknown source '{other}'; known: toy, synthetic, idx"),
                })
            }
        }
        if !(self.dataset.holdout_fraction > 0.0 && self.dataset.holdout_fraction < 1.0) {
            return Err(Error::InvalidParameter {
                name: "dataset.holdout_fraction",
                reason: format!("must lie in (0, 1), got {}", self.dataset.holdout_fraction),
            });
        }
        if self.methods.is_empty() {
            return Err(Error::Empty { what: "methods" });
        }
        self.train.validate()?;
        self.occlusion.validate()?;
        Ok(())
    }

    /// Applies command-line overrides (`--seed`, `--out`, `--full`).
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>, full: bool) -> Config {
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        if let Some(dir) = out {
            self.out_dir = Some(dir);
        }
        if full {
            // Full-scale reference grids: ℓ2 0..4 step 0.2 (21 models) and
            // ℓ∞ 0..0.4 step 0.002 (201 models, as published).
            self.sweep.grid = match self.sweep.norms.first() {
                Some(Norm::Linf) => (0..=200).map(|i| i as f64 * 0.002).collect(),
                _ => (0..=20).map(|i| i as f64 * 0.2).collect(),
            };
        }
        self
    }

    /// Materializes `(train, test)` datasets for one replication seed.
    ///
    /// The config's dataset seed is combined with the replication seed, so
    /// different seeds draw genuinely different data.
    pub fn load_datasets(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self.dataset.source.as_str() {
            "toy" => {
                let spec = ToySpec {
                    seed: derive_seed(self.dataset.toy.seed, &[seed]),
                    ..self.dataset.toy.clone()
                };
                let ds = gen_toy(&spec)?;
                let (train, test) = ds.split_holdout(self.dataset.holdout_fraction, seed)?;
                Ok((train, test))
            }
            "synthetic" => {
                let spec = SyntheticImageSpec {
                    seed: derive_seed(self.dataset.synthetic.seed, &[seed]),
                    ..self.dataset.synthetic.clone()
                };
                gen_synthetic_images(&spec)
            }
            "idx" => {
                let idx = &self.dataset.idx;
                let mut train = load_idx(&idx.train_images, &idx.train_labels)?;
                let mut test = load_idx(&idx.test_images, &idx.test_labels)?;
                if idx.subsample_train > 0 {
                    train = train.subsample(idx.subsample_train, derive_seed(seed, &[0x1d8, 0]))?;
                }
                if idx.subsample_test > 0 {
                    test = test.subsample(idx.subsample_test, derive_seed(seed, &[0x1d8, 1]))?;
                }
                if idx.downsample {
                    train = downsample2x(&train)?;
                    test = downsample2x(&test)?;
                }
                Ok((train, test))
            }
            other => Err(Error::InvalidParameter {
                name: "dataset.source",
                reason: format!("unknown source '{other}'"),
            }),
        }
    }

    /// Resolves the model architecture against a concrete dataset.
    pub fn model_spec(&self, train: &Dataset) -> Result<ModelSpec> {
        match self.model.kind.as_str() {
            "toy" => Ok(ModelSpec::toy()),
            "small_cnn" => Ok(ModelSpec::small_cnn(train.feature_shape().to_vec(), train.classes())),
            "mnist_cnn" => Ok(ModelSpec::mnist_cnn()),
            other => Err(Error::InvalidParameter {
                name: "model.kind",
                reason: format!("unknown kind '{other}'; known: toy, small_cnn, mnist_cnn"),
            }),
        }
    }

    /// Training config for one replication seed.
    pub fn train_for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }

    /// Analysis attack for one replication seed.
    pub fn attack_for_seed(&self, seed: u64) -> AttackConfig {
        AttackConfig { seed: derive_seed(seed, &[0xA11A]), ..self.attack.clone() }
    }

    /// Training-time adversary for one replication seed.
    pub fn advtrain_attack_for_seed(&self, seed: u64) -> AttackConfig {
        let base = self.advtrain.apply(&self.attack);
        AttackConfig { seed, ..base }
    }
}
