//! Single-file checkpoint: model config plus a flat map of named f32 tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "FPSNCKPT"
//! version      u32       1
//! config_len   u32
//! config       config_len bytes, UTF-8 JSON of ModelConfig
//! count        u32       number of tensors
//! count times:
//!   name_len   u32
//!   name       name_len bytes, UTF-8, dot-separated path ("head.merge.conv.weight")
//!   ndim       u32
//!   dims       ndim x u64
//!   data       prod(dims) x f32, row-major
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::{FpsNet, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Scalar;

const MAGIC: &[u8; 8] = b"FPSNCKPT";
const VERSION: u32 = 1;

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn save<T: Scalar>(model: &mut FpsNet<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.config).expect("config serializes");
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg);

    let mut tensors: Vec<(String, ArrayD<f32>)> = Vec::new();
    model.visit(&mut |name, slot| {
        tensors.push((name.to_string(), slot.value().mapv(|v| v.to_f32().unwrap())));
    });
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.data.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(out)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// Raw contents of a checkpoint file.
pub struct CheckpointData {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, ArrayD<f32>>,
}

pub fn read(path: &Path) -> Result<CheckpointData> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|e| Error::io(path, e))?;
    let truncated = || ckpt_err(path, "truncated file");
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(8).ok_or_else(truncated)? != MAGIC {
        return Err(ckpt_err(path, "bad magic"));
    }
    let version = c.u32().ok_or_else(truncated)?;
    if version != VERSION {
        return Err(ckpt_err(path, format!("unsupported version {version}")));
    }
    let cfg_len = c.u32().ok_or_else(truncated)? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(cfg_len).ok_or_else(truncated)?)
        .map_err(|e| ckpt_err(path, format!("config: {e}")))?;
    let count = c.u32().ok_or_else(truncated)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let n = c.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(c.take(n).ok_or_else(truncated)?)
            .map_err(|_| ckpt_err(path, "tensor name is not UTF-8"))?
            .to_string();
        let ndim = c.u32().ok_or_else(truncated)? as usize;
        let dims = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let numel: usize = dims.iter().product();
        let bytes = c.take(numel * 4).ok_or_else(truncated)?;
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = ArrayD::from_shape_vec(IxDyn(&dims), values).expect("numel matches dims");
        tensors.insert(name, t);
    }
    if c.pos != data.len() {
        return Err(ckpt_err(path, "trailing bytes"));
    }
    Ok(CheckpointData { config, tensors })
}

/// Rebuild a model from a checkpoint; every tensor must be present with the
/// expected shape.
pub fn load<T: Scalar>(path: &Path) -> Result<FpsNet<T>> {
    let CheckpointData { config, mut tensors } = read(path)?;
    let mut model = FpsNet::<T>::new(config, 0)?;
    let mut problem: Option<String> = None;
    model.visit(&mut |name, mut slot| {
        if problem.is_some() {
            return;
        }
        match tensors.remove(name) {
            None => problem = Some(format!("missing tensor {name}")),
            Some(t) if t.shape() != slot.value().shape() => {
                problem = Some(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.value().shape()
                ))
            }
            Some(t) => *slot.value_mut() = t.mapv(|v| T::from(v).unwrap()),
        }
    });
    if let Some(p) = problem {
        return Err(ckpt_err(path, p));
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(ckpt_err(path, format!("unexpected tensor {extra}")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_att: 3,
            n_stuff: 2,
            n_things: 2,
            f_dim: 4,
            backbone_width: 4,
            backbone_depth: 0,
            head_width: 4,
            ..Default::default()
        }
    }

    #[test]
    fn save_then_load_preserves_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = FpsNet::<f32>::new(tiny(), 7).unwrap();
        save(&mut m, &path).unwrap();
        let mut back = load::<f32>(&path).unwrap();
        assert_eq!(back.config, m.config);
        let mut a = Vec::new();
        m.visit(&mut |n, s| a.push((n.to_string(), s.value().clone())));
        let mut b = Vec::new();
        back.visit(&mut |n, s| b.push((n.to_string(), s.value().clone())));
        assert_eq!(a, b);
    }

    #[test]
    fn header_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = FpsNet::<f32>::new(tiny(), 0).unwrap();
        save(&mut m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"FPSNCKPT");
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut m = FpsNet::<f32>::new(tiny(), 0).unwrap();
        save(&mut m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load::<f32>(&path), Err(Error::Checkpoint { .. })));
    }
}
