//! Deterministic artifact emission: CSV tables, binary PGM/PPM images,
//! gradient heatmaps, and decision-region rasters.
//!
//! All floats are formatted with Rust's shortest round-trip `Display`, so a
//! rerun with identical inputs produces byte-identical files.

use gradlens_core::checkpoint::{save_model, save_projector};
use gradlens_core::data::Dataset;
use gradlens_core::error::{Error, Result};
use gradlens_core::manifold::AnyProjector;
use gradlens_core::model::Model;
use gradlens_core::tensor::Tensor;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Shortest round-trip decimal form of `v` (deterministic across runs).
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Collects every file written under one experiment output directory.
pub struct Artifacts {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Artifacts { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn target(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.written.push(p.clone());
        p
    }

    /// Writes a CSV with the given header; every row must match its arity.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.target(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            if row.len() != header.len() {
                return Err(Error::shape("csv row", header.len(), row.len()));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Binary 8-bit grayscale PGM (P5).
    pub fn pgm(&mut self, name: &str, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
        let path = self.target(name);
        write_pgm(&path, width, height, pixels)
    }

    /// Binary 8-bit RGB PPM (P6).
    pub fn ppm(&mut self, name: &str, width: usize, height: usize, pixels: &[[u8; 3]]) -> Result<()> {
        let path = self.target(name);
        write_ppm(&path, width, height, pixels)
    }

    pub fn model(&mut self, name: &str, model: &Model) -> Result<()> {
        let path = self.target(name);
        save_model(model, &path)
    }

    pub fn projector(&mut self, name: &str, proj: &AnyProjector) -> Result<()> {
        let path = self.target(name);
        save_projector(proj, &path)
    }

    pub fn into_paths(self) -> Vec<PathBuf> {
        self.written
    }
}

// ── PGM / PPM ───────────────────────────────────────────────────────────

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape("write_pgm", width * height, pixels.len()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_ppm(path: &Path, width: usize, height: usize, pixels: &[[u8; 3]]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape("write_ppm", width * height, pixels.len()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{width} {height}\n255\n")?;
    for px in pixels {
        w.write_all(px)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary PGM written by [`write_pgm`]: `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let reason = |r: &str| Error::FileFormat { path: path.display().to_string(), reason: r.into() };
    // Header: three whitespace-separated tokens after the magic.
    if !bytes.starts_with(b"P5\n") {
        return Err(reason("missing P5 magic"));
    }
    let header_end = bytes
        .iter()
        .enumerate()
        .skip(3)
        .filter(|(_, b)| **b == b'\n')
        .map(|(i, _)| i)
        .nth(1)
        .ok_or_else(|| reason("truncated header"))?;
    let header = std::str::from_utf8(&bytes[3..header_end]).map_err(|_| reason("non-utf8 header"))?;
    let mut tokens = header.split_whitespace();
    let width: usize = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| reason("bad width"))?;
    let height: usize = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| reason("bad height"))?;
    let maxval: usize = tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| reason("bad maxval"))?;
    if maxval != 255 {
        return Err(reason("only maxval 255 supported"));
    }
    let pixels = bytes[header_end + 1..].to_vec();
    if pixels.len() != width * height {
        return Err(reason("pixel payload does not match dimensions"));
    }
    Ok((width, height, pixels))
}

/// Maps a `[-1, 1]` input plane to 8-bit gray (−1 → 0, +1 → 255).
pub fn input_to_gray(values: &[f64]) -> Vec<u8> {
    values.iter().map(|v| ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

/// Inverse of [`input_to_gray`] up to quantization (error ≤ 1/255).
pub fn gray_to_input(pixels: &[u8]) -> Vec<f64> {
    pixels.iter().map(|&p| p as f64 / 255.0 * 2.0 - 1.0).collect()
}

// ── Gradient heatmaps ───────────────────────────────────────────────────

/// Linear-interpolated percentile of a sorted slice (`q` in `[0, 100]`).
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = q / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Renders a gradient tensor shaped `[c, h, w]` (or `[h, w]`) as an 8-bit
/// heatmap: sum over channels, cap at the [0.5th, 99.5th] percentiles, then
/// rescale linearly to 0..255. A constant plane renders as mid-gray.
pub fn render_heatmap(grad: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let shape = grad.shape();
    let (c, h, w) = match shape.len() {
        2 => (1, shape[0], shape[1]),
        3 => (shape[0], shape[1], shape[2]),
        _ => return Err(Error::shape("render_heatmap", "[c, h, w] or [h, w]", shape)),
    };
    let plane = h * w;
    let mut summed = vec![0.0; plane];
    for ch in 0..c {
        let vals = &grad.data()[ch * plane..(ch + 1) * plane];
        for (s, v) in summed.iter_mut().zip(vals) {
            *s += v;
        }
    }
    if summed.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "render_heatmap input".into() });
    }
    let mut sorted = summed.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let lo = percentile_sorted(&sorted, 0.5);
    let hi = percentile_sorted(&sorted, 99.5);
    for v in &mut summed {
        *v = v.clamp(lo, hi);
    }
    let min = summed.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = summed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bytes = if max > min {
        summed.iter().map(|v| ((v - min) / (max - min) * 255.0).round() as u8).collect()
    } else {
        vec![128u8; plane]
    };
    Ok((w, h, bytes))
}

// ── Decision-region rasters ─────────────────────────────────────────────

/// Axis-aligned bounding box `[x0, x1, y0, y1]` over every 2-d dataset in
/// `sets`, padded on each side by `padding` × the side length.
pub fn bounding_box(sets: &[&Dataset], padding: f64) -> Result<[f64; 4]> {
    if sets.is_empty() {
        return Err(Error::Empty { what: "bounding_box datasets" });
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for ds in sets {
        if ds.feature_len() != 2 {
            return Err(Error::shape("bounding_box", "2-d inputs", ds.feature_shape()));
        }
        for p in ds.inputs().data().chunks(2) {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
    }
    let (px, py) = ((x1 - x0) * padding, (y1 - y0) * padding);
    Ok([x0 - px, x1 + px, y0 - py, y1 + py])
}

/// Coordinates of the pixel center at `(row, col)` of a `res`×`res` raster
/// over `bbox`. Row 0 is the top of the image (largest y).
pub fn grid_point(bbox: [f64; 4], res: usize, row: usize, col: usize) -> (f64, f64) {
    let [x0, x1, y0, y1] = bbox;
    let x = x0 + (col as f64 + 0.5) / res as f64 * (x1 - x0);
    let y = y1 - (row as f64 + 0.5) / res as f64 * (y1 - y0);
    (x, y)
}

/// Predicted class of every pixel center, row-major from the top-left.
pub fn classify_grid(model: &Model, bbox: [f64; 4], res: usize) -> Result<Vec<usize>> {
    let mut classes = Vec::with_capacity(res * res);
    // Classify row chunks to bound peak memory.
    for row in 0..res {
        let mut flat = Vec::with_capacity(res * 2);
        for col in 0..res {
            let (x, y) = grid_point(bbox, res, row, col);
            flat.push(x);
            flat.push(y);
        }
        let batch = Tensor::new(vec![res, 2], flat)?;
        classes.extend(model.predict(&batch)?);
    }
    Ok(classes)
}

/// Two-tone palette for binary decision regions.
pub fn class_color(class: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 6] = [
        [222, 126, 113],
        [117, 157, 219],
        [142, 196, 137],
        [201, 166, 96],
        [170, 132, 205],
        [120, 190, 190],
    ];
    PALETTE[class % PALETTE.len()]
}

/// Rasterizes decision regions into RGB pixels.
pub fn raster_regions(model: &Model, bbox: [f64; 4], res: usize) -> Result<Vec<[u8; 3]>> {
    Ok(classify_grid(model, bbox, res)?.into_iter().map(class_color).collect())
}
