//! ROAR/KAR occlusion evaluation: replace the most (ROAR) or least (KAR)
//! important pixels by rank, retrain from scratch, integrate the resulting
//! accuracy curves, and reduce them to μ interpretability scores, plus the
//! Pearson/Spearman statistics used to correlate μ with robustness.

use crate::attribution::{rank_pixels, Attribution, AttributionMethod};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMode {
    Roar,
    Kar,
}

impl std::fmt::Display for OcclusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OcclusionMode::Roar => write!(f, "roar"),
            OcclusionMode::Kar => write!(f, "kar"),
        }
    }
}

/// What value occluded pixels take.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// Per-channel mean of the training inputs (default).
    ChannelMean,
    /// A fixed constant, which must lie in `[-1, 1]`.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionSpec {
    pub mode: OcclusionMode,
    /// Ascending fractions in (0, 1].
    pub fractions: Vec<f64>,
    pub fill: FillPolicy,
    /// Fresh retrains per fraction.
    pub retrains: usize,
    /// Rank by absolute attribution instead of signed (config flag).
    pub absolute_rank: bool,
}

impl Default for OcclusionSpec {
    fn default() -> Self {
        OcclusionSpec {
            mode: OcclusionMode::Roar,
            fractions: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            fill: FillPolicy::ChannelMean,
            retrains: 3,
            absolute_rank: false,
        }
    }
}

impl OcclusionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Empty { what: "occlusion fractions" });
        }
        for w in self.fractions.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidParameter {
                    name: "fractions",
                    reason: format!("must be strictly ascending, got {} then {}", w[0], w[1]),
                });
            }
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidParameter {
                name: "fractions",
                reason: "all fractions must lie in (0, 1]".into(),
            });
        }
        if self.retrains == 0 {
            return Err(Error::InvalidParameter { name: "retrains", reason: "must be >= 1".into() });
        }
        if let FillPolicy::Constant(c) = self.fill {
            if !(-1.0..=1.0).contains(&c) {
                return Err(Error::InvalidParameter {
                    name: "fill",
                    reason: format!("constant fill must lie in [-1, 1], got {c}"),
                });
            }
        }
        Ok(())
    }
}

/// Resolves a fill policy into one value per channel of `train_ds`.
pub fn resolve_fill(train_ds: &Dataset, fill: FillPolicy) -> Vec<f64> {
    match fill {
        FillPolicy::ChannelMean => train_ds.channel_means(),
        FillPolicy::Constant(c) => vec![c; train_ds.channels()],
    }
}

/// Replaces the top (ROAR) or bottom (KAR) `⌈fraction·P⌉` ranked pixels of
/// every example — all channels — with the per-channel fill value. Labels are
/// untouched.
pub fn occlude_dataset(
    ds: &Dataset,
    attributions: &[Attribution],
    fraction: f64,
    mode: OcclusionMode,
    fill: &[f64],
    absolute_rank: bool,
) -> Result<Dataset> {
    if attributions.len() != ds.len() {
        return Err(Error::shape("occlude_dataset", format!("{} attributions", ds.len()), attributions.len()));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter {
            name: "fraction",
            reason: format!("must lie in [0, 1], got {fraction}"),
        });
    }
    let channels = ds.channels();
    if fill.len() != channels {
        return Err(Error::shape("occlude_dataset fill", format!("{channels} channels"), fill.len()));
    }
    let feat = ds.feature_len();
    let pixels = feat / channels;
    let k = (fraction * pixels as f64).ceil() as usize;
    let mut data = ds.inputs().data().to_vec();
    for (i, attr) in attributions.iter().enumerate() {
        if attr.scores.len() != feat {
            return Err(Error::shape("occlude_dataset scores", feat, attr.scores.len()));
        }
        let order = rank_pixels(&attr.scores, channels, absolute_rank)?;
        let targets = match mode {
            OcclusionMode::Roar => &order[..k],
            OcclusionMode::Kar => &order[pixels - k..],
        };
        let base = i * feat;
        for &p in targets {
            for (c, &fv) in fill.iter().enumerate() {
                data[base + c * pixels + p] = fv;
            }
        }
    }
    ds.with_inputs(crate::tensor::Tensor::new(ds.inputs().shape().to_vec(), data)?)
}

// ── Curves and scores ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub mean_accuracy: f64,
    pub per_seed: Vec<f64>,
}

/// Accuracy-vs-fraction curve for one (attribution method, mode) pair,
/// with the fraction-0 baseline from unoccluded retrains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub mode: OcclusionMode,
    pub method: String,
    pub baseline: f64,
    pub baseline_per_seed: Vec<f64>,
    pub points: Vec<CurvePoint>,
}

impl EvalCurve {
    pub fn auc(&self) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.fraction, p.mean_accuracy)).collect();
        auc(self.baseline, &pts)
    }

    pub fn aoc(&self) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.fraction, p.mean_accuracy)).collect();
        aoc(self.baseline, &pts)
    }
}

fn check_curve(points: &[(f64, f64)]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Empty { what: "curve points" });
    }
    for w in points.windows(2) {
        if w[1].0 < w[0].0 {
            return Err(Error::InvalidParameter {
                name: "curve fractions",
                reason: format!("must be ascending, got {} then {}", w[0].0, w[1].0),
            });
        }
    }
    if points.iter().any(|(f, a)| !f.is_finite() || !a.is_finite()) || !points[0].0.is_finite() {
        return Err(Error::NonFinite { context: "curve points".into() });
    }
    Ok(())
}

/// Trapezoidal area under the accuracy curve over `[0, max fraction]`, with
/// the fraction-0 baseline prepended.
pub fn auc(baseline: f64, points: &[(f64, f64)]) -> Result<f64> {
    check_curve(points)?;
    let mut prev = (0.0, baseline);
    let mut area = 0.0;
    for &(f, a) in points {
        area += (f - prev.0) * (a + prev.1) / 2.0;
        prev = (f, a);
    }
    Ok(area)
}

/// Area over the curve: `baseline · span − auc`.
pub fn aoc(baseline: f64, points: &[(f64, f64)]) -> Result<f64> {
    let span = points.last().map(|p| p.0).unwrap_or(0.0);
    Ok(baseline * span - auc(baseline, points)?)
}

/// μ score of a method's curve against the random-baseline curve:
/// `AOC(g) − AOC(rand)` for ROAR, `AUC(g) − AUC(rand)` for KAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretabilityScore {
    pub mu: f64,
    pub metric: OcclusionMode,
    pub method: String,
}

pub fn mu_score(curve_g: &EvalCurve, curve_rand: &EvalCurve) -> Result<InterpretabilityScore> {
    if curve_g.mode != curve_rand.mode {
        return Err(Error::InvalidParameter {
            name: "mu_score",
            reason: format!("metric mismatch: {} vs {}", curve_g.mode, curve_rand.mode),
        });
    }
    let fg: Vec<f64> = curve_g.points.iter().map(|p| p.fraction).collect();
    let fr: Vec<f64> = curve_rand.points.iter().map(|p| p.fraction).collect();
    if fg != fr {
        return Err(Error::InvalidParameter {
            name: "mu_score",
            reason: format!("fraction grids differ: {fg:?} vs {fr:?}"),
        });
    }
    let mu = match curve_g.mode {
        OcclusionMode::Roar => curve_g.aoc()? - curve_rand.aoc()?,
        OcclusionMode::Kar => curve_g.auc()? - curve_rand.auc()?,
    };
    Ok(InterpretabilityScore { mu, metric: curve_g.mode, method: curve_g.method.clone() })
}

/// Mean test accuracy of `retrains` fresh standard models on the unoccluded
/// data — the shared fraction-0 baseline for every curve of one evaluation.
pub fn retrain_baseline(
    train_ds: &Dataset,
    test_ds: &Dataset,
    retrains: usize,
    retrain: &mut dyn FnMut(&Dataset, usize) -> Result<Model>,
) -> Result<Vec<f64>> {
    (0..retrains)
        .map(|r| retrain(train_ds, r)?.evaluate(test_ds))
        .collect()
}

/// Full ROAR/KAR curve for one attribution method. The model under test
/// supplies attributions only; every accuracy point comes from a fresh
/// standard retrain (built by `retrain(occluded_train, retrain_index)`) and
/// is measured on the test split occluded with its own attributions.
#[allow(clippy::too_many_arguments)]
pub fn roar_kar_curve(
    model_under_test: &Model,
    method: &dyn AttributionMethod,
    train_ds: &Dataset,
    test_ds: &Dataset,
    spec: &OcclusionSpec,
    attr_seed: u64,
    baseline_per_seed: &[f64],
    retrain: &mut dyn FnMut(&Dataset, usize) -> Result<Model>,
) -> Result<EvalCurve> {
    spec.validate()?;
    if baseline_per_seed.len() != spec.retrains {
        return Err(Error::shape("roar_kar_curve baseline", spec.retrains, baseline_per_seed.len()));
    }
    let fill = resolve_fill(train_ds, spec.fill);
    let attr_train = crate::attribution::attribute_dataset(
        method,
        model_under_test,
        train_ds,
        derive_seed(attr_seed, &[0]),
    )?;
    let attr_test = crate::attribution::attribute_dataset(
        method,
        model_under_test,
        test_ds,
        derive_seed(attr_seed, &[1]),
    )?;

    let mut points = Vec::with_capacity(spec.fractions.len());
    for &fraction in &spec.fractions {
        let occ_train = occlude_dataset(train_ds, &attr_train, fraction, spec.mode, &fill, spec.absolute_rank)?;
        let occ_test = occlude_dataset(test_ds, &attr_test, fraction, spec.mode, &fill, spec.absolute_rank)?;
        let mut per_seed = Vec::with_capacity(spec.retrains);
        for r in 0..spec.retrains {
            let model = retrain(&occ_train, r)?;
            per_seed.push(model.evaluate(&occ_test)?);
        }
        let mean_accuracy = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        points.push(CurvePoint { fraction, mean_accuracy, per_seed });
    }
    Ok(EvalCurve {
        mode: spec.mode,
        method: method.name().into(),
        baseline: baseline_per_seed.iter().sum::<f64>() / baseline_per_seed.len() as f64,
        baseline_per_seed: baseline_per_seed.to_vec(),
        points,
    })
}

// ── Correlation statistics ──────────────────────────────────────────────

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::shape("correlation", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "correlation inputs",
            reason: format!("need at least 2 points, got {}", xs.len()),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "correlation inputs".into() });
    }
    Ok(())
}

/// Sample Pearson correlation; errors when either input is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::ConstantInput { which: "xs" });
    }
    if syy == 0.0 {
        return Err(Error::ConstantInput { which: "ys" });
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Average ranks (1-based), ties sharing the mean of their rank block.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average 1-based rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson of the average-rank vectors.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    pearson(&average_ranks(xs), &average_ranks(ys))
}
