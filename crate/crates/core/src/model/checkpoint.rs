//! Single-file checkpoint container.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! offset        field
//! 0             magic bytes "ADCP"
//! 4             format version, u32 (currently 1)
//! 8             metadata byte length M, u64
//! 16            metadata: UTF-8 JSON of `CheckpointMeta`
//! 16 + M        array count, u32
//! ...           per array:
//!                 name length u16, name bytes (UTF-8)
//!                 ndim u8, then ndim dimension sizes as u64
//!                 payload: product(dims) f32 values, little endian
//! end - 32      SHA-256 digest of every preceding byte
//! ```
//!
//! Files are written to `<path>.tmp` and atomically renamed into place, and
//! the digest is verified on load, so a torn or corrupted file is reported
//! rather than silently misread.

use super::joint::JointModel;
use super::probe::LinearProbe;
use super::ModelError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"ADCP";
const FORMAT_VERSION: u32 = 1;

/// JSON metadata stored alongside the raw arrays.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CheckpointMeta {
    /// What this file holds: "joint", "probe" or "supervised".
    pub kind: String,
    /// Completed epochs at save time.
    pub epoch: u64,
    /// Completed optimiser steps at save time.
    pub global_step: u64,
    /// Hash of the experiment config that produced the run.
    pub config_hash: String,
    pub encoder_arch: String,
    pub input_px: usize,
    pub embedding_dim: usize,
    pub expander_dim: usize,
    pub shared_weights: bool,
    /// Base seed of the run; all RNG streams derive from it.
    pub seed: u64,
    /// Adam step counter (bias-correction time).
    pub adam_t: u64,
    /// Next index of each derived RNG stream (streams are stateless
    /// functions of (seed, tag, index), so a cursor fully locates them).
    pub rng_cursors: BTreeMap<String, u64>,
    /// Free-form extras (task names, branch tags, ...).
    pub extra: BTreeMap<String, String>,
}

/// One named array in the container.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

impl ArrayEntry {
    pub fn flat(name: impl Into<String>, data: Vec<f32>) -> Self {
        let dims = vec![data.len() as u64];
        Self {
            name: name.into(),
            dims,
            data,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ModelError {
    ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn corrupt(path: &Path, detail: impl Into<String>) -> ModelError {
    ModelError::Corrupt {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Serialise and atomically write a container file.
pub fn save_container(
    path: &Path,
    meta: &CheckpointMeta,
    arrays: &[ArrayEntry],
) -> Result<(), ModelError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let meta_json = serde_json::to_vec(meta).expect("meta serialises");
    buf.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        let name = a.name.as_bytes();
        assert!(name.len() <= u16::MAX as usize, "array name too long");
        let expected: u64 = a.dims.iter().product();
        assert_eq!(expected as usize, a.data.len(), "dims disagree with data");
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(a.dims.len() as u8);
        for d in &a.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &a.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(&buf).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(corrupt(self.path, format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self, what: &str) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Read and verify a container file.
pub fn load_container(path: &Path) -> Result<(CheckpointMeta, Vec<ArrayEntry>), ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    if bytes.len() < 32 + 16 {
        return Err(corrupt(path, "file too short for header and digest"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let computed = Sha256::digest(body);
    if computed.as_slice() != digest {
        return Err(corrupt(path, "checksum mismatch"));
    }
    let mut cur = Cursor {
        buf: body,
        pos: 0,
        path,
    };
    if cur.take(4, "magic")? != MAGIC {
        return Err(corrupt(path, "bad magic bytes"));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(corrupt(path, format!("unsupported format version {version}")));
    }
    let meta_len = cur.u64("metadata length")? as usize;
    let meta_bytes = cur.take(meta_len, "metadata")?;
    let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
        .map_err(|e| corrupt(path, format!("metadata JSON: {e}")))?;
    let n_arrays = cur.u32("array count")?;
    let mut arrays = Vec::with_capacity(n_arrays as usize);
    for _ in 0..n_arrays {
        let name_len = cur.u16("array name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "array name")?)
            .map_err(|_| corrupt(path, "array name is not UTF-8"))?
            .to_string();
        let ndim = cur.take(1, "array ndim")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u64("array dims")?);
        }
        let count: u64 = dims.iter().product();
        let payload = cur.take(count as usize * 4, "array payload")?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(ArrayEntry { name, dims, data });
    }
    if cur.pos != body.len() {
        return Err(corrupt(path, "trailing bytes after final array"));
    }
    Ok((meta, arrays))
}

/// Collect every parameter of a joint model as named flat arrays.
pub fn joint_param_arrays(model: &JointModel) -> Vec<ArrayEntry> {
    let mut arrays = Vec::new();
    model.visit_ro(&mut |name, v| arrays.push(ArrayEntry::flat(name, v.to_vec())));
    arrays
}

/// Write stored parameter arrays back into a freshly built model.
///
/// Arrays whose names are not model parameters (e.g. optimiser state) are
/// ignored here; callers handle them separately. A missing parameter or a
/// length mismatch is an explicit error naming the layer.
pub fn restore_joint_params(
    model: &mut JointModel,
    arrays: &[ArrayEntry],
) -> Result<(), ModelError> {
    let by_name: BTreeMap<&str, &ArrayEntry> =
        arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    let mut result = Ok(());
    model.visit(&mut |name, value, _| {
        if result.is_err() {
            return;
        }
        match by_name.get(name.as_str()) {
            None => result = Err(ModelError::MissingArray { layer: name }),
            Some(a) if a.data.len() != value.len() => {
                result = Err(ModelError::ShapeMismatch {
                    layer: name,
                    expected: value.len(),
                    got: a.data.len(),
                })
            }
            Some(a) => value.copy_from_slice(&a.data),
        }
    });
    result
}

/// Rebuild a joint model from a container's metadata and parameters.
/// Returns the remaining (non-parameter) arrays for the caller.
pub fn load_joint(path: &Path) -> Result<(JointModel, CheckpointMeta, Vec<ArrayEntry>), ModelError> {
    use super::encoder::{EncoderArch, EncoderSpec};
    use super::expander::ExpanderSpec;
    let (meta, arrays) = load_container(path)?;
    let arch: EncoderArch = meta.encoder_arch.parse()?;
    let spec = EncoderSpec::new(arch, meta.input_px)?;
    let mut model = JointModel::new(
        spec,
        ExpanderSpec {
            dim: meta.expander_dim,
        },
        meta.shared_weights,
        meta.seed,
    );
    restore_joint_params(&mut model, &arrays)?;
    let mut param_names = std::collections::BTreeSet::new();
    model.visit_ro(&mut |name, _| {
        param_names.insert(name);
    });
    let rest = arrays
        .into_iter()
        .filter(|a| !param_names.contains(&a.name))
        .collect();
    Ok((model, meta, rest))
}

/// Probe parameters as container arrays.
pub fn probe_param_arrays(probe: &LinearProbe) -> Vec<ArrayEntry> {
    let mut arrays = Vec::new();
    probe
        .fc
        .visit_ro("probe", &mut |name, v| arrays.push(ArrayEntry::flat(name, v.to_vec())));
    arrays
}

/// Restore probe parameters saved by [`probe_param_arrays`].
pub fn restore_probe_params(
    probe: &mut LinearProbe,
    arrays: &[ArrayEntry],
) -> Result<(), ModelError> {
    let by_name: BTreeMap<&str, &ArrayEntry> =
        arrays.iter().map(|a| (a.name.as_str(), a)).collect();
    let mut result = Ok(());
    probe.fc.visit("probe", &mut |name, value, _| {
        if result.is_err() {
            return;
        }
        match by_name.get(name.as_str()) {
            None => result = Err(ModelError::MissingArray { layer: name }),
            Some(a) if a.data.len() != value.len() => {
                result = Err(ModelError::ShapeMismatch {
                    layer: name,
                    expected: value.len(),
                    got: a.data.len(),
                })
            }
            Some(a) => value.copy_from_slice(&a.data),
        }
    });
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encoder::{EncoderArch, EncoderSpec};
    use crate::model::expander::ExpanderSpec;
    use crate::model::joint::Branch;
    use tempfile::tempdir;

    fn tiny_model(seed: u64) -> JointModel {
        JointModel::new(
            EncoderSpec::new(EncoderArch::DeskCnnTiny, 16).unwrap(),
            ExpanderSpec { dim: 24 },
            false,
            seed,
        )
    }

    fn meta_for(model: &JointModel) -> CheckpointMeta {
        CheckpointMeta {
            kind: "joint".into(),
            encoder_arch: model.encoder_spec.arch.to_string(),
            input_px: model.encoder_spec.input_px,
            embedding_dim: model.encoder_spec.embedding_dim(),
            expander_dim: model.expander_spec.dim,
            shared_weights: model.shared,
            seed: 77,
            ..CheckpointMeta::default()
        }
    }

    #[test]
    fn save_load_roundtrip_preserves_parameters_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(77);
        save_container(&path, &meta_for(&model), &joint_param_arrays(&model)).unwrap();
        let (restored, meta, rest) = load_joint(&path).unwrap();
        assert_eq!(meta.kind, "joint");
        assert!(rest.is_empty());
        assert_eq!(
            model.branch_checksum(Branch::A),
            restored.branch_checksum(Branch::A)
        );
        assert_eq!(
            model.branch_checksum(Branch::B),
            restored.branch_checksum(Branch::B)
        );
    }

    #[test]
    fn repeated_saves_are_byte_identical() {
        let dir = tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let model = tiny_model(3);
        save_container(&p1, &meta_for(&model), &joint_param_arrays(&model)).unwrap();
        save_container(&p2, &meta_for(&model), &joint_param_arrays(&model)).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_fails_the_checksum() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(3);
        save_container(&path, &meta_for(&model), &joint_param_arrays(&model)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 100);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_container(&path).unwrap_err();
        assert!(matches!(err, ModelError::Corrupt { .. }), "{err}");
    }

    #[test]
    fn flipped_payload_bit_fails_the_checksum() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(3);
        save_container(&path, &meta_for(&model), &joint_param_arrays(&model)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_container(&path).unwrap_err(),
            ModelError::Corrupt { .. }
        ));
    }

    #[test]
    fn restoring_into_a_mismatched_architecture_names_the_layer() {
        let model = tiny_model(3);
        let arrays = joint_param_arrays(&model);
        // Same arch family, different expander width -> first expander
        // array that disagrees must be named in the error.
        let mut other = JointModel::new(
            EncoderSpec::new(EncoderArch::DeskCnnTiny, 16).unwrap(),
            ExpanderSpec { dim: 48 },
            false,
            3,
        );
        let err = restore_joint_params(&mut other, &arrays).unwrap_err();
        match err {
            ModelError::ShapeMismatch { layer, .. } => {
                assert!(layer.contains("exp."), "unexpected layer {layer}")
            }
            other => panic!("expected shape mismatch, got {other}"),
        }
    }

    #[test]
    fn extra_arrays_survive_the_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(5);
        let mut arrays = joint_param_arrays(&model);
        arrays.push(ArrayEntry::flat("adam.m", vec![0.5; 10]));
        arrays.push(ArrayEntry::flat("adam.v", vec![0.25; 10]));
        save_container(&path, &meta_for(&model), &arrays).unwrap();
        let (_, _, rest) = load_joint(&path).unwrap();
        let names: Vec<&str> = rest.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["adam.m", "adam.v"]);
        assert_eq!(rest[0].data, vec![0.5; 10]);
    }
}
