//! Versioned binary checkpoints for models and projectors.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes   b"GLCK"
//! version    u32       currently 1
//! kind_len   u32
//! kind       utf-8     "model" | "projector"
//! meta_len   u64
//! meta       utf-8     JSON header (spec / dimensions / training history)
//! n_arrays   u32
//! per array:
//!   count    u64
//!   values   count × f64 bits
//! ```
//!
//! Parameter arrays are stored as raw IEEE-754 bits, so a save/load cycle
//! reproduces parameters bit-identically.

use crate::error::{Error, Result};
use crate::manifold::{AnyProjector, Autoencoder, PcaProjector};
use crate::model::{EpochStats, Model, ModelSpec};
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"GLCK";
const VERSION: u32 = 1;

// ── Container primitives ────────────────────────────────────────────────

fn write_container(path: &Path, kind: &str, meta: &str, arrays: &[&[f64]]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(kind.len() as u32)?;
    w.write_all(kind.as_bytes())?;
    w.write_u64::<LittleEndian>(meta.len() as u64)?;
    w.write_all(meta.as_bytes())?;
    w.write_u32::<LittleEndian>(arrays.len() as u32)?;
    for arr in arrays {
        w.write_u64::<LittleEndian>(arr.len() as u64)?;
        for &v in *arr {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::FileFormat { path: path.display().to_string(), reason: reason.into() }
}

/// Maps premature EOF onto a named truncation error.
fn map_eof(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        bad(path, "truncated file")
    } else {
        Error::Io(e)
    }
}

fn read_container(path: &Path, expect_kind: &str) -> Result<(String, Vec<Vec<f64>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| map_eof(path, e))?;
    if &magic != MAGIC {
        return Err(bad(path, format!("bad magic number {magic:02x?}")));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| map_eof(path, e))?;
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version} (expected {VERSION})")));
    }
    let kind_len = r.read_u32::<LittleEndian>().map_err(|e| map_eof(path, e))? as usize;
    if kind_len > 64 {
        return Err(bad(path, format!("implausible kind length {kind_len}")));
    }
    let mut kind_buf = vec![0u8; kind_len];
    r.read_exact(&mut kind_buf).map_err(|e| map_eof(path, e))?;
    let kind = String::from_utf8(kind_buf).map_err(|_| bad(path, "kind is not utf-8"))?;
    if kind != expect_kind {
        return Err(bad(path, format!("checkpoint kind is '{kind}', expected '{expect_kind}'")));
    }
    let meta_len = r.read_u64::<LittleEndian>().map_err(|e| map_eof(path, e))? as usize;
    let mut meta_buf = vec![0u8; meta_len];
    r.read_exact(&mut meta_buf).map_err(|e| map_eof(path, e))?;
    let meta = String::from_utf8(meta_buf).map_err(|_| bad(path, "metadata is not utf-8"))?;
    let n_arrays = r.read_u32::<LittleEndian>().map_err(|e| map_eof(path, e))? as usize;
    let mut arrays = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let count = r.read_u64::<LittleEndian>().map_err(|e| map_eof(path, e))? as usize;
        let mut arr = Vec::with_capacity(count);
        for _ in 0..count {
            arr.push(r.read_f64::<LittleEndian>().map_err(|e| map_eof(path, e))?);
        }
        arrays.push(arr);
    }
    // Trailing garbage means the file is not what we wrote.
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => return Err(bad(path, "trailing bytes after arrays")),
        Err(e) => return Err(Error::Io(e)),
    }
    Ok((meta, arrays))
}

// ── Models ──────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    spec: ModelSpec,
    history: Vec<EpochStats>,
}

/// Writes a model checkpoint (spec + training history + parameters).
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let meta = serde_json::to_string(&ModelMeta {
        spec: model.spec.clone(),
        history: model.history.clone(),
    })
    .expect("model metadata serializes");
    let arrays: Vec<&[f64]> = model.params.iter().map(|p| p.data()).collect();
    write_container(path, "model", &meta, &arrays)
}

/// Reads a model checkpoint back, validating array counts and lengths
/// against the stored spec.
pub fn load_model(path: &Path) -> Result<Model> {
    let (meta, arrays) = read_container(path, "model")?;
    let meta: ModelMeta =
        serde_json::from_str(&meta).map_err(|e| bad(path, format!("metadata: {e}")))?;
    let shapes = meta.spec.param_shapes()?;
    if shapes.len() != arrays.len() {
        return Err(bad(path, format!("expected {} parameter arrays, found {}", shapes.len(), arrays.len())));
    }
    let mut params = Vec::with_capacity(arrays.len());
    for (shape, arr) in shapes.iter().zip(arrays) {
        let want: usize = shape.iter().product();
        if want != arr.len() {
            return Err(bad(path, format!("parameter length {} does not fit shape {shape:?}", arr.len())));
        }
        params.push(Tensor::new(shape.clone(), arr)?);
    }
    Ok(Model { spec: meta.spec, params, history: meta.history })
}

// ── Projectors ──────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ProjectorMeta {
    Pca { d: usize, k: usize, total_variance: f64 },
    Autoencoder { encoder_spec: ModelSpec, decoder_spec: ModelSpec, zdim: usize, history: Vec<f64> },
}

/// Writes a projector checkpoint (kind, dimensions, parameters).
pub fn save_projector(proj: &AnyProjector, path: &Path) -> Result<()> {
    match proj {
        AnyProjector::Pca(p) => {
            let meta = serde_json::to_string(&ProjectorMeta::Pca {
                d: p.mean.len(),
                k: p.components.len(),
                total_variance: p.total_variance,
            })
            .expect("pca metadata serializes");
            let mut arrays: Vec<&[f64]> = vec![&p.mean, &p.eigenvalues];
            for c in &p.components {
                arrays.push(c);
            }
            write_container(path, "projector", &meta, &arrays)
        }
        AnyProjector::Autoencoder(a) => {
            let meta = serde_json::to_string(&ProjectorMeta::Autoencoder {
                encoder_spec: a.encoder.spec.clone(),
                decoder_spec: a.decoder.spec.clone(),
                zdim: a.zdim,
                history: a.history.clone(),
            })
            .expect("autoencoder metadata serializes");
            let arrays: Vec<&[f64]> = a
                .encoder
                .params
                .iter()
                .chain(&a.decoder.params)
                .map(|p| p.data())
                .collect();
            write_container(path, "projector", &meta, &arrays)
        }
    }
}

/// Reads a projector checkpoint back.
pub fn load_projector(path: &Path) -> Result<AnyProjector> {
    let (meta, arrays) = read_container(path, "projector")?;
    let meta: ProjectorMeta =
        serde_json::from_str(&meta).map_err(|e| bad(path, format!("metadata: {e}")))?;
    match meta {
        ProjectorMeta::Pca { d, k, total_variance } => {
            if arrays.len() != k + 2 {
                return Err(bad(path, format!("expected {} arrays for pca(k={k}), found {}", k + 2, arrays.len())));
            }
            let mut it = arrays.into_iter();
            let mean = it.next().expect("mean array");
            let eigenvalues = it.next().expect("eigenvalue array");
            let components: Vec<Vec<f64>> = it.collect();
            if mean.len() != d || components.iter().any(|c| c.len() != d) {
                return Err(bad(path, format!("component length does not match d={d}")));
            }
            Ok(AnyProjector::Pca(PcaProjector::from_parts(mean, components, eigenvalues, total_variance)?))
        }
        ProjectorMeta::Autoencoder { encoder_spec, decoder_spec, zdim, history } => {
            let enc_shapes = encoder_spec.param_shapes()?;
            let dec_shapes = decoder_spec.param_shapes()?;
            if enc_shapes.len() + dec_shapes.len() != arrays.len() {
                return Err(bad(
                    path,
                    format!(
                        "expected {} parameter arrays, found {}",
                        enc_shapes.len() + dec_shapes.len(),
                        arrays.len()
                    ),
                ));
            }
            let mut it = arrays.into_iter();
            let mut take = |shapes: &[Vec<usize>]| -> Result<Vec<Tensor>> {
                shapes
                    .iter()
                    .map(|shape| {
                        let arr = it.next().expect("array count checked");
                        let want: usize = shape.iter().product();
                        if want != arr.len() {
                            return Err(bad(path, format!("parameter length {} does not fit shape {shape:?}", arr.len())));
                        }
                        Tensor::new(shape.clone(), arr)
                    })
                    .collect()
            };
            let enc_params = take(&enc_shapes)?;
            let dec_params = take(&dec_shapes)?;
            Ok(AnyProjector::Autoencoder(Autoencoder {
                encoder: Model { spec: encoder_spec, params: enc_params, history: vec![] },
                decoder: Model { spec: decoder_spec, params: dec_params, history: vec![] },
                zdim,
                history,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_toy, ToySpec};
    use crate::manifold::{fit_pca, train_autoencoder};
    use crate::train::{train, TrainConfig};

    fn toy_trained() -> Model {
        let ds = gen_toy(&ToySpec { samples_per_class: 40, ..ToySpec::default() }).unwrap();
        let model = Model::build(ModelSpec::toy(), 7).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: 32, seed: 7, ..Default::default() };
        train(model, &ds, Some(&ds), &cfg).unwrap()
    }

    #[test]
    fn model_round_trip_is_bit_identical() {
        let model = toy_trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.glck");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.spec, model.spec);
        assert_eq!(loaded.params, model.params);
        assert_eq!(loaded.history, model.history);
    }

    #[test]
    fn pca_projector_round_trip_is_bit_identical() {
        let ds = gen_toy(&ToySpec { samples_per_class: 50, ..ToySpec::default() }).unwrap();
        let proj = AnyProjector::Pca(fit_pca(&ds, 2).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proj.glck");
        save_projector(&proj, &path).unwrap();
        assert_eq!(load_projector(&path).unwrap(), proj);
    }

    #[test]
    fn autoencoder_projector_round_trip_is_bit_identical() {
        let ds = gen_toy(&ToySpec { samples_per_class: 30, ..ToySpec::default() }).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 16, seed: 9, ..Default::default() };
        let proj = AnyProjector::Autoencoder(train_autoencoder(&ds, 1, &cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.glck");
        save_projector(&proj, &path).unwrap();
        assert_eq!(load_projector(&path).unwrap(), proj);
    }

    #[test]
    fn rejects_bad_magic_version_kind_and_truncation() {
        let model = toy_trained();
        let dir = tempfile::tempdir().unwrap();

        // Garbage magic.
        let garbage = dir.path().join("garbage.glck");
        std::fs::write(&garbage, b"NOPE0000000000000000").unwrap();
        let err = load_model(&garbage).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");

        // Unsupported version.
        let versioned = dir.path().join("version.glck");
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 16]);
        std::fs::write(&versioned, bytes).unwrap();
        let err = load_model(&versioned).unwrap_err().to_string();
        assert!(err.contains("unsupported version 99"), "{err}");

        // Kind mismatch: a projector checkpoint is not a model checkpoint.
        let ds = gen_toy(&ToySpec { samples_per_class: 20, ..ToySpec::default() }).unwrap();
        let proj_path = dir.path().join("proj.glck");
        save_projector(&AnyProjector::Pca(fit_pca(&ds, 1).unwrap()), &proj_path).unwrap();
        let err = load_model(&proj_path).unwrap_err().to_string();
        assert!(err.contains("kind is 'projector'"), "{err}");

        // Truncation at half length.
        let full = dir.path().join("model.glck");
        save_model(&model, &full).unwrap();
        let bytes = std::fs::read(&full).unwrap();
        let cut = dir.path().join("cut.glck");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_model(&cut).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        // Trailing bytes are rejected too.
        let padded = dir.path().join("padded.glck");
        let mut grown = bytes.clone();
        grown.push(0x00);
        std::fs::write(&padded, grown).unwrap();
        let err = load_model(&padded).unwrap_err().to_string();
        assert!(err.contains("trailing bytes"), "{err}");
    }
}
