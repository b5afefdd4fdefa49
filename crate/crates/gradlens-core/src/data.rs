//! Datasets: the in-memory container plus the three sources (toy Gaussians,
//! synthetic class-template images, IDX files) and basic transforms.
//!
//! Every dataset holds inputs already normalized into `[-1, 1]` — that range
//! is a construction invariant, so attacks and occlusion fills can rely on it.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::Tensor;
use byteorder::{BigEndian, ReadBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

// ── Dataset ─────────────────────────────────────────────────────────────

/// Labeled inputs in `[-1, 1]`, batched along the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    /// Validates the core invariants: nonempty, label/input counts equal,
    /// labels within `classes`, inputs finite and inside `[-1, 1]`.
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let n = inputs.batch_len();
        if n == 0 || inputs.shape().is_empty() {
            return Err(Error::Empty { what: "dataset" });
        }
        if labels.len() != n {
            return Err(Error::shape("Dataset::new", format!("{n} labels"), labels.len()));
        }
        if classes < 2 {
            return Err(Error::InvalidParameter {
                name: "classes",
                reason: format!("need at least 2, got {classes}"),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes });
        }
        if !inputs.is_finite() {
            return Err(Error::NonFinite { context: "dataset inputs".into() });
        }
        if inputs.data().iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParameter {
                name: "inputs",
                reason: "values must lie in [-1, 1]".into(),
            });
        }
        Ok(Dataset { inputs, labels, classes })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of one example.
    pub fn feature_shape(&self) -> &[usize] {
        self.inputs.feature_shape()
    }

    pub fn feature_len(&self) -> usize {
        self.feature_shape().iter().product()
    }

    /// Channel count: leading axis of `[C, H, W]` features, otherwise 1.
    pub fn channels(&self) -> usize {
        if self.feature_shape().len() == 3 {
            self.feature_shape()[0]
        } else {
            1
        }
    }

    pub fn example(&self, i: usize) -> Result<Tensor> {
        self.inputs.example(i)
    }

    /// Gathers the examples at `idx` (in the given order) into a batch.
    pub fn gather(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let feat = self.feature_len();
        let mut data = Vec::with_capacity(idx.len() * feat);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::InvalidParameter {
                    name: "index",
                    reason: format!("{i} out of range for dataset of {}", self.len()),
                });
            }
            data.extend_from_slice(&self.inputs.data()[i * feat..(i + 1) * feat]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(self.feature_shape());
        Ok((Tensor::new(shape, data)?, labels))
    }

    /// New dataset restricted to `idx` (order preserved).
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::Empty { what: "subset indices" });
        }
        let (inputs, labels) = self.gather(idx)?;
        Ok(Dataset { inputs, labels, classes: self.classes })
    }

    /// Deterministic shuffled split into (rest, holdout).
    pub fn split_holdout(&self, holdout_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&holdout_fraction) || holdout_fraction == 0.0 {
            return Err(Error::InvalidParameter {
                name: "holdout_fraction",
                reason: format!("must be in (0, 1), got {holdout_fraction}"),
            });
        }
        let n = self.len();
        let k = ((n as f64 * holdout_fraction).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_from_seed(derive_seed(seed, &[0x5911])));
        let (hold, rest) = idx.split_at(k);
        let mut hold = hold.to_vec();
        let mut rest = rest.to_vec();
        hold.sort_unstable();
        rest.sort_unstable();
        Ok((self.subset(&rest)?, self.subset(&hold)?))
    }

    /// Deterministic random subsample of `n` examples (original order kept).
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidParameter {
                name: "subsample n",
                reason: format!("need 1..={}, got {n}", self.len()),
            });
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng_from_seed(derive_seed(seed, &[0x5ab])));
        let mut chosen = idx[..n].to_vec();
        chosen.sort_unstable();
        self.subset(&chosen)
    }

    /// Per-channel mean of all inputs — the default occlusion fill.
    pub fn channel_means(&self) -> Vec<f64> {
        let c = self.channels();
        let per = self.feature_len() / c;
        let mut sums = vec![0.0; c];
        for (i, v) in self.inputs.data().iter().enumerate() {
            sums[(i / per) % c] += v;
        }
        let count = (self.len() * per) as f64;
        sums.iter().map(|s| s / count).collect()
    }

    /// Replaces the input tensor, revalidating invariants.
    pub fn with_inputs(&self, inputs: Tensor) -> Result<Dataset> {
        if inputs.shape() != self.inputs.shape() {
            return Err(Error::shape("Dataset::with_inputs", self.inputs.shape(), inputs.shape()));
        }
        Dataset::new(inputs, self.labels.clone(), self.classes)
    }
}

// ── Toy two-Gaussian dataset ────────────────────────────────────────────

/// Two mirror-image bivariate Gaussians in the plane.
///
/// Class 0 is centered at `mean`, class 1 at `-mean`; both share `cov`.
/// Samples are jointly normalized into `[-1, 1]` with a single affine map
/// (one scale and offset for both coordinates), preserving the cluster
/// geometry up to similarity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub samples_per_class: usize,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            samples_per_class: 3000,
            mean: [1.2, 0.1],
            cov: [[0.1, -0.01], [-0.01, 0.002]],
            seed: 0,
        }
    }
}

impl ToySpec {
    fn cholesky(&self) -> Result<[f64; 3]> {
        let [[a, b], [c, d]] = self.cov;
        if b != c {
            return Err(Error::NotPositiveDefinite);
        }
        let det = a * d - b * c;
        if a <= 0.0 || det <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        let l11 = a.sqrt();
        let l21 = b / l11;
        let l22 = (d - l21 * l21).sqrt();
        Ok([l11, l21, l22])
    }
}

/// Raw (unnormalized) toy samples: class 0 block then class 1 block.
pub(crate) fn gen_toy_raw(spec: &ToySpec) -> Result<(Vec<f64>, Vec<usize>)> {
    if spec.samples_per_class == 0 {
        return Err(Error::Empty { what: "toy dataset" });
    }
    let [l11, l21, l22] = spec.cholesky()?;
    let mut rng = rng_from_seed(derive_seed(spec.seed, &[0x702]));
    let n = spec.samples_per_class;
    let mut data = Vec::with_capacity(4 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for class in 0..2usize {
        let sign = if class == 0 { 1.0 } else { -1.0 };
        for _ in 0..n {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            data.push(sign * spec.mean[0] + l11 * z1);
            data.push(sign * spec.mean[1] + l21 * z1 + l22 * z2);
            labels.push(class);
        }
    }
    Ok((data, labels))
}

/// Samples the toy dataset and normalizes it jointly into `[-1, 1]`.
pub fn gen_toy(spec: &ToySpec) -> Result<Dataset> {
    let (mut data, labels) = gen_toy_raw(spec)?;
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo).is_finite() || hi - lo < 1e-12 {
        return Err(Error::NonFinite { context: "toy normalization range".into() });
    }
    for v in &mut data {
        *v = 2.0 * (*v - lo) / (hi - lo) - 1.0;
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, 2], data)?, labels, 2)
}

// ── Synthetic class-template images ─────────────────────────────────────

/// Deterministic image-classification data: each class is a fixed template
/// of Gaussian blobs; examples jitter the blob centers, scale the intensity,
/// and add pixel noise. Class evidence is spatially localized, so attribution
/// ranking and occlusion behave the way they do on natural images.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticImageSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub blobs_per_class: usize,
    /// Std of i.i.d. pixel noise (pre-normalization units).
    pub noise: f64,
    /// Std of per-example blob center jitter, in pixels.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticImageSpec {
    fn default() -> Self {
        SyntheticImageSpec {
            classes: 4,
            height: 12,
            width: 12,
            train_per_class: 300,
            test_per_class: 75,
            blobs_per_class: 3,
            noise: 0.08,
            jitter: 0.5,
            seed: 0,
        }
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    sigma: f64,
    amp: f64,
}

/// Generates (train, test) with shared class templates but independent
/// example streams.
pub fn gen_synthetic_images(spec: &SyntheticImageSpec) -> Result<(Dataset, Dataset)> {
    if spec.classes < 2 {
        return Err(Error::InvalidParameter { name: "classes", reason: "need at least 2".into() });
    }
    if spec.height < 4 || spec.width < 4 {
        return Err(Error::InvalidParameter { name: "height/width", reason: "need at least 4x4".into() });
    }
    if spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::Empty { what: "synthetic image dataset" });
    }

    let mut template_rng = rng_from_seed(derive_seed(spec.seed, &[0x7e4, 0]));
    let templates: Vec<Vec<Blob>> = (0..spec.classes)
        .map(|_| {
            (0..spec.blobs_per_class)
                .map(|_| Blob {
                    cy: template_rng.gen_range(1.5..spec.height as f64 - 2.5),
                    cx: template_rng.gen_range(1.5..spec.width as f64 - 2.5),
                    sigma: template_rng.gen_range(0.8..1.6),
                    amp: template_rng.gen_range(0.7..1.0),
                })
                .collect()
        })
        .collect();

    let render = |spec: &SyntheticImageSpec, templates: &[Vec<Blob>], per_class: usize, stream: u64| -> Result<Dataset> {
        let mut rng = rng_from_seed(derive_seed(spec.seed, &[0x7e4, stream]));
        let (h, w) = (spec.height, spec.width);
        let mut data = Vec::with_capacity(spec.classes * per_class * h * w);
        let mut labels = Vec::with_capacity(spec.classes * per_class);
        for (class, template) in templates.iter().enumerate() {
            for _ in 0..per_class {
                let intensity = rng.gen_range(0.8..1.2);
                let jy: f64 = rng.sample::<f64, _>(StandardNormal) * spec.jitter;
                let jx: f64 = rng.sample::<f64, _>(StandardNormal) * spec.jitter;
                for y in 0..h {
                    for x in 0..w {
                        let mut v = 0.0;
                        for blob in template {
                            let dy = y as f64 - blob.cy - jy;
                            let dx = x as f64 - blob.cx - jx;
                            v += blob.amp * (-(dy * dy + dx * dx) / (2.0 * blob.sigma * blob.sigma)).exp();
                        }
                        v = v * intensity + spec.noise * rng.sample::<f64, _>(StandardNormal);
                        data.push(v.clamp(0.0, 1.0) * 2.0 - 1.0);
                    }
                }
                labels.push(class);
            }
        }
        let n = labels.len();
        Dataset::new(Tensor::new(vec![n, 1, h, w], data)?, labels, spec.classes)
    };

    let train = render(spec, &templates, spec.train_per_class, 1)?;
    let test = render(spec, &templates, spec.test_per_class, 2)?;
    Ok((train, test))
}

// ── IDX ingestion ───────────────────────────────────────────────────────

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label file pair (big-endian, magic `0x00000803` /
/// `0x00000801`), mapping pixels from `[0, 255]` to `[-1, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let fmt = |path: &Path, reason: String| Error::FileFormat { path: path.display().to_string(), reason };

    let mut f = std::fs::File::open(images_path)?;
    let magic = f.read_u32::<BigEndian>().map_err(|_| fmt(images_path, "truncated header".into()))?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(fmt(images_path, format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")));
    }
    let n = f.read_u32::<BigEndian>().map_err(|_| fmt(images_path, "truncated header".into()))? as usize;
    let rows = f.read_u32::<BigEndian>().map_err(|_| fmt(images_path, "truncated header".into()))? as usize;
    let cols = f.read_u32::<BigEndian>().map_err(|_| fmt(images_path, "truncated header".into()))? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    f.read_exact(&mut pixels)
        .map_err(|_| fmt(images_path, format!("truncated: expected {} pixel bytes", n * rows * cols)))?;

    let mut f = std::fs::File::open(labels_path)?;
    let magic = f.read_u32::<BigEndian>().map_err(|_| fmt(labels_path, "truncated header".into()))?;
    if magic != IDX_LABELS_MAGIC {
        return Err(fmt(labels_path, format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")));
    }
    let n_labels = f.read_u32::<BigEndian>().map_err(|_| fmt(labels_path, "truncated header".into()))? as usize;
    if n_labels != n {
        return Err(fmt(
            labels_path,
            format!("label count {n_labels} does not match image count {n}"),
        ));
    }
    let mut raw_labels = vec![0u8; n_labels];
    f.read_exact(&mut raw_labels)
        .map_err(|_| fmt(labels_path, format!("truncated: expected {n_labels} label bytes")))?;

    let data: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 127.5 - 1.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    Dataset::new(Tensor::new(vec![n, 1, rows, cols], data)?, labels, classes)
}

// ── Transforms ──────────────────────────────────────────────────────────

/// 2x2 average-pool downsample of an image dataset (even spatial dims).
pub fn downsample2x(ds: &Dataset) -> Result<Dataset> {
    let shape = ds.feature_shape();
    if shape.len() != 3 {
        return Err(Error::shape("downsample2x", "[C, H, W] features", shape));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidParameter {
            name: "spatial dims",
            reason: format!("downsample2x needs even height/width, got {h}x{w}"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let n = ds.len();
    let src = ds.inputs().data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for y in 0..oh {
                for x in 0..ow {
                    let s = src[base + (2 * y) * w + 2 * x]
                        + src[base + (2 * y) * w + 2 * x + 1]
                        + src[base + (2 * y + 1) * w + 2 * x]
                        + src[base + (2 * y + 1) * w + 2 * x + 1];
                    out.push(s / 4.0);
                }
            }
        }
    }
    Dataset::new(
        Tensor::new(vec![n, c, oh, ow], out)?,
        ds.labels().to_vec(),
        ds.classes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn toy_default_has_6000_points_3000_per_class() {
        let ds = gen_toy(&ToySpec::default()).unwrap();
        assert_eq!(ds.len(), 6000);
        assert_eq!(ds.labels().iter().filter(|&&y| y == 0).count(), 3000);
        assert_eq!(ds.feature_shape(), &[2]);
    }

    #[test]
    fn toy_same_seed_is_identical_different_seed_differs() {
        let a = gen_toy(&ToySpec::default()).unwrap();
        let b = gen_toy(&ToySpec::default()).unwrap();
        assert_eq!(a, b);
        let c = gen_toy(&ToySpec { seed: 1, ..ToySpec::default() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn toy_sample_covariance_matches_spec_within_10_percent() {
        let spec = ToySpec::default();
        let (data, labels) = gen_toy_raw(&spec).unwrap();
        let n = spec.samples_per_class;
        // Class 0 block.
        let xs: Vec<f64> = (0..n).map(|i| data[2 * i]).collect();
        let ys: Vec<f64> = (0..n).map(|i| data[2 * i + 1]).collect();
        assert!(labels[..n].iter().all(|&y| y == 0));
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let mut cxx = 0.0;
        let mut cxy = 0.0;
        let mut cyy = 0.0;
        for i in 0..n {
            cxx += (xs[i] - mx) * (xs[i] - mx);
            cxy += (xs[i] - mx) * (ys[i] - my);
            cyy += (ys[i] - my) * (ys[i] - my);
        }
        let (cxx, cxy, cyy) = (cxx / (n - 1) as f64, cxy / (n - 1) as f64, cyy / (n - 1) as f64);
        assert!((cxx - spec.cov[0][0]).abs() < 0.1 * spec.cov[0][0].abs(), "var x {cxx}");
        assert!((cxy - spec.cov[0][1]).abs() < 0.1 * spec.cov[0][1].abs(), "cov {cxy}");
        assert!((cyy - spec.cov[1][1]).abs() < 0.1 * spec.cov[1][1].abs(), "var y {cyy}");
    }

    #[test]
    fn toy_rejects_non_positive_definite_covariance() {
        let spec = ToySpec { cov: [[0.1, -0.01], [-0.01, 0.0002]], ..ToySpec::default() };
        assert!(matches!(gen_toy(&spec), Err(Error::NotPositiveDefinite)));
        let asym = ToySpec { cov: [[0.1, 0.01], [-0.01, 0.002]], ..ToySpec::default() };
        assert!(matches!(gen_toy(&asym), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn toy_normalization_exactly_spans_range() {
        let ds = gen_toy(&ToySpec::default()).unwrap();
        let lo = ds.inputs().data().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ds.inputs().data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, -1.0);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn dataset_rejects_bad_labels_and_out_of_range_values() {
        let t = Tensor::new(vec![2, 2], vec![0.0, 0.5, -0.5, 1.0]).unwrap();
        assert!(Dataset::new(t.clone(), vec![0, 5], 2).is_err());
        let big = Tensor::new(vec![1, 2], vec![0.0, 1.5]).unwrap();
        assert!(Dataset::new(big, vec![0], 2).is_err());
    }

    #[test]
    fn holdout_split_partitions_without_overlap() {
        let ds = gen_toy(&ToySpec { samples_per_class: 50, ..ToySpec::default() }).unwrap();
        let (train, test) = ds.split_holdout(0.2, 7).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        // Determinism.
        let (train2, _) = ds.split_holdout(0.2, 7).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn channel_means_match_manual_average() {
        // 1 example, 2 channels of 2x1 pixels.
        let t = Tensor::new(vec![1, 2, 2, 1], vec![0.0, 1.0, -1.0, -0.5]).unwrap();
        let ds = Dataset::new(t, vec![0], 2).unwrap();
        assert_eq!(ds.channel_means(), vec![0.5, -0.75]);
    }

    fn write_idx_pair(dir: &Path, pixels: &[u8], n: u32, rows: u32, cols: u32, labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("images.idx");
        let lab = dir.join("labels.idx");
        let mut f = std::fs::File::create(&img).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&n.to_be_bytes()).unwrap();
        f.write_all(&rows.to_be_bytes()).unwrap();
        f.write_all(&cols.to_be_bytes()).unwrap();
        f.write_all(pixels).unwrap();
        let mut f = std::fs::File::create(&lab).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
        (img, lab)
    }

    #[test]
    fn idx_round_trip_and_pixel_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), &[0, 255, 128, 64, 0, 255, 10, 20], 2, 2, 2, &[3, 1]);
        let ds = load_idx(&img, &lab).unwrap();
        assert_eq!(ds.inputs().shape(), &[2, 1, 2, 2]);
        assert_eq!(ds.labels(), &[3, 1]);
        assert_eq!(ds.classes(), 4);
        let d = ds.inputs().data();
        assert_eq!(d[0], -1.0);
        assert_eq!(d[1], 1.0);
        assert!((d[2] - (128.0 / 127.5 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn idx_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), &[0; 4], 1, 2, 2, &[0]);
        // Corrupt the image magic.
        let mut bytes = std::fs::read(&img).unwrap();
        bytes[3] = 0x99;
        std::fs::write(&img, &bytes).unwrap();
        let err = load_idx(&img, &lab).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "got: {err}");
    }

    #[test]
    fn idx_rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), &[0; 8], 2, 2, 2, &[0, 1, 2]);
        let err = load_idx(&img, &lab).unwrap_err();
        assert!(err.to_string().contains("does not match"), "got: {err}");
    }

    #[test]
    fn idx_rejects_truncated_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = write_idx_pair(dir.path(), &[0; 7], 2, 2, 2, &[0, 1]);
        let err = load_idx(&img, &lab).unwrap_err();
        assert!(err.to_string().contains("truncated"), "got: {err}");
    }

    #[test]
    fn downsample_averages_blocks() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        let ds = Dataset::new(t, vec![0], 2).unwrap();
        let down = downsample2x(&ds).unwrap();
        assert_eq!(down.inputs().shape(), &[1, 1, 1, 1]);
        assert_eq!(down.inputs().data(), &[0.0]);
    }

    #[test]
    fn synthetic_images_are_deterministic_and_in_range() {
        let spec = SyntheticImageSpec { train_per_class: 5, test_per_class: 2, ..Default::default() };
        let (tr1, te1) = gen_synthetic_images(&spec).unwrap();
        let (tr2, _) = gen_synthetic_images(&spec).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(tr1.len(), 20);
        assert_eq!(te1.len(), 8);
        assert_eq!(tr1.feature_shape(), &[1, 12, 12]);
        assert!(tr1.inputs().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        // Train and test differ (independent example streams).
        assert_ne!(tr1.example(0).unwrap(), te1.example(0).unwrap());
    }

    #[test]
    fn subsample_is_deterministic_and_sized() {
        let ds = gen_toy(&ToySpec { samples_per_class: 30, ..ToySpec::default() }).unwrap();
        let a = ds.subsample(10, 3).unwrap();
        let b = ds.subsample(10, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }
}
