//! Data-manifold approximation: PCA and ℓ1-autoencoder projectors, the
//! off-manifold distance `d_π(x) = ‖x − π(x)‖₂`, latent-space projection
//! refinement, and cohort distance statistics.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Activation, LayerSpec, Model, ModelSpec};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tape::Tape;
use crate::tensor::{l2_norm, Tensor};
use crate::train::{Adam, TrainConfig};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// A fitted manifold approximation that can project inputs onto itself.
pub trait Projector {
    fn kind(&self) -> &'static str;
    fn input_len(&self) -> usize;
    /// Projects a batch of flat vectors `[n, d]` onto the manifold.
    fn project_batch(&self, x: &Tensor) -> Result<Tensor>;
}

/// Projects a single flat vector.
pub fn project(proj: &dyn Projector, x: &[f64]) -> Result<Vec<f64>> {
    let t = Tensor::new(vec![1, x.len()], x.to_vec())?;
    Ok(proj.project_batch(&t)?.data().to_vec())
}

/// Off-manifold distance `‖x − π(x)‖₂`.
pub fn d_pi(proj: &dyn Projector, x: &[f64]) -> Result<f64> {
    let px = project(proj, x)?;
    let diff: Vec<f64> = x.iter().zip(&px).map(|(a, b)| a - b).collect();
    Ok(l2_norm(&diff))
}

// ── PCA ─────────────────────────────────────────────────────────────────

/// Affine PCA projector: `x̂ = mean + Cᵀ C (x − mean)` with orthonormal rows
/// `C` (component matrix, one component per row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjector {
    pub mean: Vec<f64>,
    /// `k` rows of length `d`, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues matching `components`, descending.
    pub eigenvalues: Vec<f64>,
    /// Sum of all `d` covariance eigenvalues (for explained-variance ratios).
    pub total_variance: f64,
}

impl PcaProjector {
    /// Builds a projector from explicit parts, validating orthonormality
    /// to 1e-10.
    pub fn from_parts(
        mean: Vec<f64>,
        components: Vec<Vec<f64>>,
        eigenvalues: Vec<f64>,
        total_variance: f64,
    ) -> Result<Self> {
        let d = mean.len();
        if components.is_empty() {
            return Err(Error::Empty { what: "pca components" });
        }
        for c in &components {
            if c.len() != d {
                return Err(Error::shape("PcaProjector", d, c.len()));
            }
        }
        for i in 0..components.len() {
            for j in i..components.len() {
                let dot: f64 = components[i].iter().zip(&components[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-10 {
                    return Err(Error::InvalidParameter {
                        name: "components",
                        reason: format!("rows {i},{j} not orthonormal: dot = {dot}"),
                    });
                }
            }
        }
        if eigenvalues.len() != components.len() {
            return Err(Error::shape("PcaProjector eigenvalues", components.len(), eigenvalues.len()));
        }
        Ok(PcaProjector { mean, components, eigenvalues, total_variance })
    }

    /// Fraction of total variance captured by the kept components.
    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance == 0.0 {
            return 0.0;
        }
        self.eigenvalues.iter().sum::<f64>() / self.total_variance
    }
}

impl Projector for PcaProjector {
    fn kind(&self) -> &'static str {
        "pca"
    }

    fn input_len(&self) -> usize {
        self.mean.len()
    }

    fn project_batch(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if x.shape().len() != 2 || x.shape()[1] != d {
            return Err(Error::shape("pca project", format!("[n, {d}]"), x.shape()));
        }
        let n = x.shape()[0];
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = &x.data()[i * d..(i + 1) * d];
            let centered: Vec<f64> = row.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
            let mut rec = self.mean.clone();
            for comp in &self.components {
                let coef: f64 = comp.iter().zip(&centered).map(|(c, v)| c * v).sum();
                for (r, c) in rec.iter_mut().zip(comp) {
                    *r += coef * c;
                }
            }
            out.extend_from_slice(&rec);
        }
        Tensor::new(vec![n, d], out)
    }
}

/// Fits mean-centered PCA with `k` components on the flattened dataset.
/// Components are sorted by descending eigenvalue, each sign-fixed so its
/// largest-magnitude entry is positive.
pub fn fit_pca(ds: &Dataset, k: usize) -> Result<PcaProjector> {
    let n = ds.len();
    let d = ds.feature_len();
    if k == 0 || k > d {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("need 1..={d} components, got {k}"),
        });
    }
    if n < 2 {
        return Err(Error::InvalidParameter {
            name: "dataset",
            reason: format!("pca needs at least 2 examples, got {n}"),
        });
    }
    let data = ds.inputs().data();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            mean[j] += data[i * d + j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // Sample covariance (1/(n-1)).
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let row = &data[i * d..(i + 1) * d];
        for a in 0..d {
            let ca = row[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += ca * (row[b] - mean[b]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    let total_variance: f64 = (0..d).map(|j| cov[j * d + j]).sum();
    if total_variance <= 0.0 {
        return Err(Error::ConstantInput { which: "pca dataset" });
    }

    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite"));
    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for &j in order.iter().take(k) {
        let mut comp: Vec<f64> = eig.eigenvectors.column(j).iter().cloned().collect();
        // Sign convention: largest-magnitude entry positive (first on ties).
        let mut lead = 0;
        for (i, v) in comp.iter().enumerate() {
            if v.abs() > comp[lead].abs() {
                lead = i;
            }
        }
        if comp[lead] < 0.0 {
            for v in &mut comp {
                *v = -*v;
            }
        }
        components.push(comp);
        eigenvalues.push(eig.eigenvalues[j].max(0.0));
    }
    PcaProjector::from_parts(mean, components, eigenvalues, total_variance)
}

// ── Autoencoder ─────────────────────────────────────────────────────────

/// Encoder/decoder pair trained on ℓ1 reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub encoder: Model,
    pub decoder: Model,
    pub zdim: usize,
    /// Per-epoch mean training ℓ1 loss.
    pub history: Vec<f64>,
}

impl Projector for Autoencoder {
    fn kind(&self) -> &'static str {
        "autoencoder"
    }

    fn input_len(&self) -> usize {
        self.encoder.spec.input_shape[0]
    }

    fn project_batch(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.encoder.predict_logits(x)?;
        self.decoder.predict_logits(&z)
    }
}

impl Autoencoder {
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::new(vec![1, x.len()], x.to_vec())?;
        Ok(self.encoder.predict_logits(&t)?.data().to_vec())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::new(vec![1, z.len()], z.to_vec())?;
        Ok(self.decoder.predict_logits(&t)?.data().to_vec())
    }
}

/// Default desk-scale dense architecture for a `d → zdim → d` autoencoder
/// with a tanh output matching the `[-1, 1]` data range.
pub fn default_autoencoder_specs(d: usize, zdim: usize, hidden: usize) -> (ModelSpec, ModelSpec) {
    let encoder = ModelSpec {
        input_shape: vec![d],
        layers: vec![
            LayerSpec::Dense { units: hidden, activation: Activation::Relu },
            LayerSpec::Dense { units: zdim, activation: Activation::None },
        ],
        classes: zdim,
    };
    let decoder = ModelSpec {
        input_shape: vec![zdim],
        layers: vec![
            LayerSpec::Dense { units: hidden, activation: Activation::Relu },
            LayerSpec::Dense { units: d, activation: Activation::Tanh },
        ],
        classes: d,
    };
    (encoder, decoder)
}

/// Trains an autoencoder with the default architecture.
pub fn train_autoencoder(ds: &Dataset, zdim: usize, cfg: &TrainConfig) -> Result<Autoencoder> {
    let d = ds.feature_len();
    let (enc, dec) = default_autoencoder_specs(d, zdim, (2 * d).clamp(16, 128));
    train_autoencoder_with(ds, enc, dec, cfg)
}

/// Trains an explicit encoder/decoder pair on mean per-example ℓ1
/// reconstruction loss with minibatch Adam.
pub fn train_autoencoder_with(
    ds: &Dataset,
    encoder_spec: ModelSpec,
    decoder_spec: ModelSpec,
    cfg: &TrainConfig,
) -> Result<Autoencoder> {
    cfg.validate()?;
    let d = ds.feature_len();
    let zdim = encoder_spec.classes;
    if encoder_spec.input_shape != vec![d] || decoder_spec.classes != d || decoder_spec.input_shape != vec![zdim] {
        return Err(Error::shape(
            "autoencoder specs",
            format!("encoder [{d}] -> [{zdim}], decoder [{zdim}] -> [{d}]"),
            (encoder_spec.input_shape.clone(), decoder_spec.input_shape.clone()),
        ));
    }
    if zdim == 0 {
        return Err(Error::InvalidParameter { name: "zdim", reason: "must be >= 1".into() });
    }
    let mut encoder = Model::build(encoder_spec, derive_seed(cfg.seed, &[0xAE, 0]))?;
    let mut decoder = Model::build(decoder_spec, derive_seed(cfg.seed, &[0xAE, 1]))?;

    let sizes: Vec<usize> = encoder
        .params
        .iter()
        .chain(&decoder.params)
        .map(Tensor::len)
        .collect();
    let mut adam = Adam::new(cfg, &sizes);
    let mut shuffle_rng = rng_from_seed(derive_seed(cfg.seed, &[0xAE, 2]));
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    let flat_shape = vec![ds.len(), d];
    let flat = ds.inputs().reshaped(&flat_shape)?;
    let flat_ds = Dataset::new(flat, ds.labels().to_vec(), ds.classes())?;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let (x, _) = flat_ds.gather(chunk)?;
            let mut tape = Tape::new();
            let xid = tape.leaf(&x);
            let enc_ids = encoder.param_leaves(&mut tape);
            let dec_ids = decoder.param_leaves(&mut tape);
            let z = encoder.forward_on_tape(&mut tape, xid, &enc_ids)?;
            let xhat = decoder.forward_on_tape(&mut tape, z, &dec_ids)?;
            let residual = tape.sub(xhat, xid)?;
            let total_l1 = tape.abs_sum(residual)?;
            let loss = tape.scale(total_l1, 1.0 / chunk.len() as f64);
            let loss_val = tape.value(loss).item()?;
            if !loss_val.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("autoencoder loss at epoch {epoch}, batch {batch_idx}"),
                });
            }
            tape.backward(loss)?;
            let all_ids: Vec<_> = enc_ids.iter().chain(&dec_ids).cloned().collect();
            let grads: Vec<&[f64]> = all_ids
                .iter()
                .map(|&id| tape.grad(id).expect("ae params participate"))
                .collect();
            let mut params: Vec<Tensor> = encoder.params.iter().chain(&decoder.params).cloned().collect();
            adam.step(&mut params, &grads)?;
            let ne = encoder.params.len();
            encoder.params.clone_from_slice(&params[..ne]);
            decoder.params.clone_from_slice(&params[ne..]);
            loss_sum += loss_val * chunk.len() as f64;
        }
        history.push(loss_sum / ds.len() as f64);
    }
    Ok(Autoencoder { encoder, decoder, zdim, history })
}

/// Mean per-example ℓ1 reconstruction error of a projector on a dataset.
pub fn mean_l1_reconstruction(proj: &dyn Projector, ds: &Dataset) -> Result<f64> {
    let d = ds.feature_len();
    let flat = ds.inputs().reshaped(&[ds.len(), d])?;
    let rec = proj.project_batch(&flat)?;
    let total: f64 = flat
        .data()
        .iter()
        .zip(rec.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / ds.len() as f64)
}

/// Projection by explicit latent-space descent: starting from `z₀ = enc(x)`,
/// run `steps` gradient-descent steps on `‖x − dec(z)‖₂²` and decode the
/// best-seen latent (so the result is never worse than plain projection).
pub fn project_latent_opt(ae: &Autoencoder, x: &[f64], steps: usize, lr: f64) -> Result<Vec<f64>> {
    if lr.is_nan() || lr < 0.0 {
        return Err(Error::InvalidParameter { name: "lr", reason: format!("must be >= 0, got {lr}") });
    }
    let mut z = ae.encode(x)?;
    let x_t = Tensor::new(vec![1, x.len()], x.to_vec())?;

    let objective = |tape: &mut Tape, z_val: &[f64], dec: &Model| -> Result<(crate::tape::NodeId, crate::tape::NodeId)> {
        let zid = tape.leaf(&Tensor::new(vec![1, z_val.len()], z_val.to_vec())?);
        let dec_ids = dec.param_leaves(tape);
        let xhat = dec.forward_on_tape(tape, zid, &dec_ids)?;
        let xid = tape.leaf(&x_t);
        let residual = tape.sub(xhat, xid)?;
        let obj = tape.sum_of_squares(residual)?;
        Ok((zid, obj))
    };

    let eval = |z_val: &[f64]| -> Result<f64> {
        let xhat = ae.decode(z_val)?;
        Ok(x.iter().zip(&xhat).map(|(a, b)| (a - b) * (a - b)).sum())
    };

    let mut best_z = z.clone();
    let mut best_obj = eval(&z)?;
    for _ in 0..steps {
        if lr == 0.0 {
            break;
        }
        let mut tape = Tape::new();
        let (zid, obj) = objective(&mut tape, &z, &ae.decoder)?;
        tape.backward(obj)?;
        let grad = tape.grad(zid).expect("latent participates");
        for (zj, gj) in z.iter_mut().zip(grad) {
            *zj -= lr * gj;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "latent iterate in project_latent_opt".into() });
        }
        let o = eval(&z)?;
        if o < best_obj {
            best_obj = o;
            best_z = z.clone();
        }
    }
    ae.decode(&best_z)
}

// ── Registry ────────────────────────────────────────────────────────────

/// A fitted projector of either kind, concrete enough to serialize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnyProjector {
    Pca(PcaProjector),
    Autoencoder(Autoencoder),
}

impl AnyProjector {
    pub fn as_projector(&self) -> &dyn Projector {
        match self {
            AnyProjector::Pca(p) => p,
            AnyProjector::Autoencoder(a) => a,
        }
    }
}

impl Projector for AnyProjector {
    fn kind(&self) -> &'static str {
        self.as_projector().kind()
    }

    fn input_len(&self) -> usize {
        self.as_projector().input_len()
    }

    fn project_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.as_projector().project_batch(x)
    }
}

/// Options consumed by [`ProjectorFitter`]s; each fitter reads the fields
/// relevant to its kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectorConfig {
    /// PCA component count; `None` picks the smallest `k` reaching
    /// `variance_target`.
    pub k: Option<usize>,
    /// Fraction of total variance the automatic `k` must explain.
    pub variance_target: f64,
    /// Autoencoder latent dimension.
    pub zdim: usize,
    /// Autoencoder optimizer settings.
    pub train: TrainConfig,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        ProjectorConfig { k: None, variance_target: 0.95, zdim: 10, train: TrainConfig::default() }
    }
}

/// Strategy interface for fitting a manifold approximation to a dataset.
pub trait ProjectorFitter {
    fn name(&self) -> &'static str;
    fn fit(&self, ds: &Dataset, cfg: &ProjectorConfig) -> Result<AnyProjector>;
}

struct PcaFitter;

impl ProjectorFitter for PcaFitter {
    fn name(&self) -> &'static str {
        "pca"
    }

    fn fit(&self, ds: &Dataset, cfg: &ProjectorConfig) -> Result<AnyProjector> {
        let k = match cfg.k {
            Some(k) => k,
            None => choose_k_for_variance(ds, cfg.variance_target)?,
        };
        Ok(AnyProjector::Pca(fit_pca(ds, k)?))
    }
}

struct AutoencoderFitter;

impl ProjectorFitter for AutoencoderFitter {
    fn name(&self) -> &'static str {
        "autoencoder"
    }

    fn fit(&self, ds: &Dataset, cfg: &ProjectorConfig) -> Result<AnyProjector> {
        Ok(AnyProjector::Autoencoder(train_autoencoder(ds, cfg.zdim, &cfg.train)?))
    }
}

/// All built-in projector kinds.
pub fn projector_registry() -> Vec<Box<dyn ProjectorFitter>> {
    vec![Box::new(PcaFitter), Box::new(AutoencoderFitter)]
}

/// Finds a projector fitter by name.
pub fn lookup_projector(name: &str) -> Result<Box<dyn ProjectorFitter>> {
    projector_registry()
        .into_iter()
        .find(|f| f.name() == name)
        .ok_or_else(|| Error::InvalidParameter {
            name: "projector",
            reason: format!(
                "unknown projector '{name}'; known: {}",
                projector_registry().iter().map(|f| f.name()).collect::<Vec<_>>().join(", ")
            ),
        })
}

/// Smallest component count whose cumulative explained variance reaches
/// `target` (a fraction in `(0, 1]`).
pub fn choose_k_for_variance(ds: &Dataset, target: f64) -> Result<usize> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "variance_target",
            reason: format!("must lie in (0, 1], got {target}"),
        });
    }
    let full = fit_pca(ds, ds.feature_len())?;
    let total: f64 = full.total_variance;
    let mut cum = 0.0;
    for (i, ev) in full.eigenvalues.iter().enumerate() {
        cum += ev;
        if cum / total >= target {
            return Ok(i + 1);
        }
    }
    Ok(full.eigenvalues.len())
}

// ── Distance distributions ──────────────────────────────────────────────

/// Per-example distances for one named cohort plus summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub cohort: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    /// `(bin lower edge, count)` over `[min, max]`.
    pub histogram: Vec<(f64, usize)>,
}

/// Distances `d_π` for every row of `examples` (`[n, d]`). An empty cohort —
/// e.g. when every attack failed and was filtered out — is an explicit error
/// naming the cohort.
pub fn distance_distribution(
    proj: &dyn Projector,
    examples: &Tensor,
    cohort: &str,
    bins: usize,
) -> Result<DistanceStats> {
    if examples.is_empty() || examples.batch_len() == 0 {
        return Err(Error::EmptyCohort { context: cohort.to_string() });
    }
    if bins == 0 {
        return Err(Error::InvalidParameter { name: "bins", reason: "must be >= 1".into() });
    }
    let n = examples.batch_len();
    let d = examples.len() / n;
    let flat = examples.reshaped(&[n, d])?;
    let projected = proj.project_batch(&flat)?;
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let xs = &flat.data()[i * d..(i + 1) * d];
        let ps = &projected.data()[i * d..(i + 1) * d];
        let diff: Vec<f64> = xs.iter().zip(ps).map(|(a, b)| a - b).collect();
        values.push(l2_norm(&diff));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let lo = sorted[0];
    let hi = sorted[n - 1];
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut histogram: Vec<(f64, usize)> = (0..bins).map(|b| (lo + b as f64 * width, 0)).collect();
    for &v in &values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        histogram[b].1 += 1;
    }
    Ok(DistanceStats { cohort: cohort.to_string(), values, mean, median, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_toy, ToySpec};

    fn e1_projector() -> PcaProjector {
        PcaProjector::from_parts(vec![0.0, 0.0], vec![vec![1.0, 0.0]], vec![1.0], 1.0).unwrap()
    }

    #[test]
    fn coordinate_projection_example() {
        let p = e1_projector();
        assert_eq!(project(&p, &[3.0, 4.0]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(d_pi(&p, &[3.0, 4.0]).unwrap(), 4.0);
        assert_eq!(d_pi(&p, &[3.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn pca_projection_is_idempotent_and_non_expansive() {
        let ds = gen_toy(&ToySpec { samples_per_class: 100, ..ToySpec::default() }).unwrap();
        let p = fit_pca(&ds, 1).unwrap();
        for i in [0usize, 17, 116] {
            let x = ds.example(i).unwrap().data().to_vec();
            let once = project(&p, &x).unwrap();
            let twice = project(&p, &once).unwrap();
            let dd: Vec<f64> = once.iter().zip(&twice).map(|(a, b)| a - b).collect();
            assert!(l2_norm(&dd) <= 1e-10);
            assert!(d_pi(&p, &once).unwrap() <= 1e-10);
            let cx: Vec<f64> = x.iter().zip(&p.mean).map(|(a, m)| a - m).collect();
            let cp: Vec<f64> = once.iter().zip(&p.mean).map(|(a, m)| a - m).collect();
            assert!(l2_norm(&cp) <= l2_norm(&cx) + 1e-10);
        }
    }

    #[test]
    fn toy_pca_first_component_dominates_variance() {
        let ds = gen_toy(&ToySpec::default()).unwrap();
        let p = fit_pca(&ds, 1).unwrap();
        assert!(
            p.explained_variance_ratio() > 0.95,
            "ratio {}",
            p.explained_variance_ratio()
        );
    }

    #[test]
    fn full_rank_pca_reconstructs_training_points() {
        let ds = gen_toy(&ToySpec { samples_per_class: 50, ..ToySpec::default() }).unwrap();
        let p = fit_pca(&ds, 2).unwrap();
        for i in 0..10 {
            let x = ds.example(i).unwrap().data().to_vec();
            assert!(d_pi(&p, &x).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn pca_components_are_orthonormal() {
        let ds = gen_toy(&ToySpec { samples_per_class: 200, ..ToySpec::default() }).unwrap();
        let p = fit_pca(&ds, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let dot: f64 = p.components[i].iter().zip(&p.components[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() <= 1e-10);
            }
        }
        // Eigenvalues descending, sign convention applied.
        assert!(p.eigenvalues[0] >= p.eigenvalues[1]);
        for c in &p.components {
            let lead = c.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn pca_rejects_bad_k_and_degenerate_data() {
        let ds = gen_toy(&ToySpec { samples_per_class: 10, ..ToySpec::default() }).unwrap();
        assert!(fit_pca(&ds, 3).is_err());
        assert!(fit_pca(&ds, 0).is_err());
        let constant = Dataset::new(
            Tensor::new(vec![3, 2], vec![0.5; 6]).unwrap(),
            vec![0, 1, 0],
            2,
        )
        .unwrap();
        assert!(matches!(fit_pca(&constant, 1), Err(Error::ConstantInput { .. })));
    }

    #[test]
    fn fit_pca_is_deterministic() {
        let ds = gen_toy(&ToySpec { samples_per_class: 60, ..ToySpec::default() }).unwrap();
        assert_eq!(fit_pca(&ds, 2).unwrap(), fit_pca(&ds, 2).unwrap());
    }

    fn small_toy() -> Dataset {
        gen_toy(&ToySpec { samples_per_class: 60, ..ToySpec::default() }).unwrap()
    }

    fn quick_ae(ds: &Dataset) -> Autoencoder {
        let cfg = TrainConfig { epochs: 60, batch_size: 16, alpha: 0.01, seed: 3, ..Default::default() };
        train_autoencoder(ds, 1, &cfg).unwrap()
    }

    #[test]
    fn autoencoder_is_deterministic_and_beats_mean_baseline() {
        let ds = small_toy();
        let (train_ds, test_ds) = ds.split_holdout(0.25, 1).unwrap();
        let ae = quick_ae(&train_ds);
        let ae2 = quick_ae(&train_ds);
        assert_eq!(ae.encoder.params, ae2.encoder.params);
        assert_eq!(ae.decoder.params, ae2.decoder.params);

        let err = mean_l1_reconstruction(&ae, &test_ds).unwrap();
        // Mean-image baseline: reconstruct everything as the train mean.
        let d = train_ds.feature_len();
        let mut mean = vec![0.0; d];
        for i in 0..train_ds.len() {
            for (m, v) in mean.iter_mut().zip(train_ds.example(i).unwrap().data()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= train_ds.len() as f64;
        }
        let baseline: f64 = (0..test_ds.len())
            .map(|i| {
                test_ds
                    .example(i)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(&mean)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / test_ds.len() as f64;
        assert!(err < baseline, "ae {err} vs mean baseline {baseline}");
    }

    #[test]
    fn identity_capacity_autoencoder_reconstructs_nearly_exactly() {
        let ds = small_toy();
        // zdim = d with purely linear layers: identity is representable.
        let enc = ModelSpec {
            input_shape: vec![2],
            layers: vec![LayerSpec::Dense { units: 2, activation: Activation::None }],
            classes: 2,
        };
        let dec = enc.clone();
        let cfg = TrainConfig { epochs: 400, batch_size: 32, alpha: 0.01, seed: 5, ..Default::default() };
        let ae = train_autoencoder_with(&ds, enc, dec, &cfg).unwrap();
        let err = mean_l1_reconstruction(&ae, &ds).unwrap();
        assert!(err < 0.05, "near-zero reconstruction, got {err}");
    }

    #[test]
    fn latent_opt_zero_steps_or_zero_lr_equals_plain_projection() {
        let ds = small_toy();
        let ae = quick_ae(&ds);
        let x = ds.example(7).unwrap().data().to_vec();
        let plain = project(&ae, &x).unwrap();
        assert_eq!(project_latent_opt(&ae, &x, 0, 0.1).unwrap(), plain);
        assert_eq!(project_latent_opt(&ae, &x, 25, 0.0).unwrap(), plain);
    }

    #[test]
    fn latent_opt_never_increases_distance() {
        let ds = small_toy();
        let ae = quick_ae(&ds);
        for i in 0..20 {
            let x = ds.example(i).unwrap().data().to_vec();
            let plain = d_pi(&ae, &x).unwrap();
            let opt = project_latent_opt(&ae, &x, 10, 0.05).unwrap();
            let diff: Vec<f64> = x.iter().zip(&opt).map(|(a, b)| a - b).collect();
            assert!(l2_norm(&diff) <= plain + 1e-9, "example {i}");
        }
    }

    #[test]
    fn distance_stats_summary_and_permutation_invariance() {
        let p = e1_projector();
        let xs = Tensor::new(vec![4, 2], vec![0.0, 1.0, 0.0, 3.0, 0.0, 2.0, 0.0, 10.0]).unwrap();
        let stats = distance_distribution(&p, &xs, "test", 4).unwrap();
        assert_eq!(stats.values, vec![1.0, 3.0, 2.0, 10.0]);
        assert_eq!(stats.mean, 4.0);
        assert_eq!(stats.median, 2.5);
        let shuffled = Tensor::new(vec![4, 2], vec![0.0, 10.0, 0.0, 2.0, 0.0, 1.0, 0.0, 3.0]).unwrap();
        let stats2 = distance_distribution(&p, &shuffled, "test", 4).unwrap();
        assert_eq!(stats.mean, stats2.mean);
        assert_eq!(stats.median, stats2.median);
        assert_eq!(stats.histogram, stats2.histogram);
        assert_eq!(stats.histogram.iter().map(|(_, c)| c).sum::<usize>(), 4);
    }

    #[test]
    fn registry_fits_both_kinds_and_rejects_unknown_names() {
        let ds = small_toy();
        let names: Vec<_> = projector_registry().iter().map(|f| f.name()).collect();
        assert_eq!(names, vec!["pca", "autoencoder"]);

        let cfg = ProjectorConfig {
            zdim: 1,
            train: TrainConfig { epochs: 3, batch_size: 16, seed: 2, ..Default::default() },
            ..Default::default()
        };
        let pca = lookup_projector("pca").unwrap().fit(&ds, &cfg).unwrap();
        assert_eq!(pca.kind(), "pca");
        // Toy data: one component already explains > 95% of the variance.
        match &pca {
            AnyProjector::Pca(p) => assert_eq!(p.components.len(), 1),
            other => panic!("expected pca, got {}", other.kind()),
        }
        let ae = lookup_projector("autoencoder").unwrap().fit(&ds, &cfg).unwrap();
        assert_eq!(ae.kind(), "autoencoder");
        assert_eq!(ae.input_len(), 2);

        let err = lookup_projector("umap").err().expect("unknown projector must fail").to_string();
        assert!(err.contains("unknown projector"), "{err}");
        assert!(err.contains("pca"), "{err}");
    }

    #[test]
    fn variance_target_selects_minimal_k() {
        let ds = small_toy();
        assert_eq!(choose_k_for_variance(&ds, 0.95).unwrap(), 1);
        assert_eq!(choose_k_for_variance(&ds, 1.0).unwrap(), 2);
        assert!(choose_k_for_variance(&ds, 0.0).is_err());
        assert!(choose_k_for_variance(&ds, 1.5).is_err());
    }

    #[test]
    fn empty_cohort_is_an_explicit_error() {
        let p = e1_projector();
        let empty = Tensor::new(vec![0, 2], vec![]).unwrap();
        let err = distance_distribution(&p, &empty, "successful attacks", 10).unwrap_err();
        assert!(matches!(err, Error::EmptyCohort { .. }));
        assert!(err.to_string().contains("successful attacks"));
    }
}
