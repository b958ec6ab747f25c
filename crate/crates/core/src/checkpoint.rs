//! Self-describing weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"VMP1"                  4-byte magic
//! u64 header_len
//! header_len bytes         UTF-8 JSON header
//! payload                  f64 values, concatenated in header order
//! ```
//!
//! The header is `{"kind": str, "meta": any, "tensors": [{"name", "shape",
//! "offset", "len"}]}` where `offset`/`len` count f64 elements into the
//! payload. See `docs/checkpoint.md`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmpError};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 4] = b"VMP1";

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_store(kind: &str, meta: serde_json::Value, store: &ParamStore) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (name, var) in store.iter() {
            let values: Vec<f64> = var.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
            tensors.insert(name.clone(), (var.dims().to_vec(), values));
        }
        Ok(Checkpoint {
            kind: kind.to_string(),
            meta,
            tensors,
        })
    }

    /// Copies every stored tensor under `prefix` into `store`. Each
    /// parameter of the store under `prefix` must be present.
    pub fn load_into(&self, store: &ParamStore, prefix: &str) -> Result<()> {
        for (name, var) in store.iter().filter(|(k, _)| k.starts_with(prefix)) {
            let (shape, values) = self
                .tensors
                .get(name)
                .ok_or_else(|| VmpError::Invalid(format!("checkpoint lacks parameter {name}")))?;
            if shape.as_slice() != var.dims() {
                return Err(VmpError::Shape(format!(
                    "parameter {name}: checkpoint {shape:?}, model {:?}",
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(values.clone(), shape.as_slice(), store.device())?;
            store.set(name, &t)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, (shape, values)) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
                len: values.len(),
            });
            offset += values.len();
        }
        let header = serde_json::to_vec(&Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, values) in self.tensors.values() {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let parse_err = |msg: &str| VmpError::Parse {
            path: origin.to_string(),
            msg: msg.to_string(),
        };
        if bytes.len() < 12 {
            return Err(parse_err("file too short for a checkpoint header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(VmpError::Version {
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
                expected: "VMP1".into(),
            });
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(12..12usize.saturating_add(header_len))
            .ok_or_else(|| parse_err("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| parse_err(&e.to_string()))?;
        let payload = &bytes[12 + header_len..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            if e.shape.iter().product::<usize>() != e.len {
                return Err(parse_err(&format!("tensor {} shape/len disagree", e.name)));
            }
            let start = e.offset * 8;
            let end = start + e.len * 8;
            let raw = payload
                .get(start..end)
                .ok_or_else(|| parse_err(&format!("payload truncated in tensor {}", e.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(e.name, (e.shape, values));
        }
        Ok(Checkpoint {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(VmpError::MissingCheckpoint(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| VmpError::io(path, e))?;
        Checkpoint::from_bytes(&bytes, &path.display().to_string())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| VmpError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| VmpError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| VmpError::io(&tmp, e))?;
    f.sync_all().map_err(|e| VmpError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| VmpError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, ParamStore};
    use candle_core::Device;

    #[test]
    fn store_round_trip_and_truncation() {
        let mut store = ParamStore::new(Device::Cpu, DType::F64);
        {
            let mut vb = store.root(3);
            vb.pp("a").var("w", &[2, 3], Init::Normal(1.0)).unwrap();
            vb.pp("b").var("w", &[4], Init::Uniform(0.5)).unwrap();
        }
        let ck = Checkpoint::from_store("test", serde_json::json!({"x": 1}), &store).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.tensors, ck.tensors);

        let mut other = ParamStore::new(Device::Cpu, DType::F64);
        {
            let mut vb = other.root(99);
            vb.pp("a").var("w", &[2, 3], Init::Const(0.0)).unwrap();
            vb.pp("b").var("w", &[4], Init::Const(0.0)).unwrap();
        }
        back.load_into(&other, "").unwrap();
        assert_eq!(other.digest(""), store.digest(""));

        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3], "mem"),
            Err(VmpError::Parse { .. })
        ));
        let mut wrong = bytes.clone();
        wrong[3] = b'2';
        assert!(matches!(Checkpoint::from_bytes(&wrong, "mem"), Err(VmpError::Version { .. })));
    }
}
