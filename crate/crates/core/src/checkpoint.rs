//! Binary checkpoint format.
//!
//! ```text
//! "PXLM"  u32 version  u32 meta_len  meta (UTF-8 JSON)  u32 tensor_count
//! per tensor: u32 name_len  name  u8 rank  u32 × rank extents  f32 × numel
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use pixdial_tensor::{Tensor, VarStore};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PXLM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_store(meta: serde_json::Value, vs: &VarStore) -> Self {
        let tensors = vs
            .iter()
            .map(|(name, t)| TensorRecord { name: name.to_string(), shape: t.shape().to_vec(), data: t.to_vec() })
            .collect();
        Checkpoint { meta, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Overwrites every parameter of `vs` accepted by `filter` with the
    /// record of the same name. Missing records and shape mismatches fail.
    pub fn restore_into(&self, vs: &mut VarStore, filter: impl Fn(&str) -> bool) -> Result<usize> {
        let names: Vec<String> = vs.iter().map(|(n, _)| n.to_string()).filter(|n| filter(n)).collect();
        for name in &names {
            let rec = self
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no tensor '{name}'")))?;
            let current = vs.find(name).expect("listed above");
            if current.shape() != rec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {:?} in the checkpoint but {:?} in the model",
                    rec.shape,
                    current.shape()
                )));
            }
            vs.set_by_name(name, Tensor::param(rec.data.clone(), &rec.shape)?)?;
        }
        Ok(names.len())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_len(&mut out, meta.len(), "metadata")?;
        out.extend_from_slice(&meta);
        put_len(&mut out, self.tensors.len(), "tensor count")?;
        for t in &self.tensors {
            put_len(&mut out, t.name.len(), "tensor name")?;
            out.extend_from_slice(t.name.as_bytes());
            let rank = u8::try_from(t.shape.len())
                .map_err(|_| Error::Checkpoint(format!("tensor '{}' has rank above 255", t.name)))?;
            out.push(rank);
            for &d in &t.shape {
                put_len(&mut out, d, "extent")?;
            }
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Checkpoint(format!("tensor '{}' data does not match its shape", t.name)));
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version} (expected {VERSION})")));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::Checkpoint(format!("metadata is not valid JSON: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let shape = (0..rank).map(|_| r.u32("extent").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' is too large")))?;
            let raw = r.take(numel.saturating_mul(4), "tensor data")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.push(TensorRecord { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn put_len(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in 32 bits")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("file truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (VarStore, Checkpoint) {
        let mut vs = VarStore::new();
        vs.add("a.weight", Tensor::param(vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0e-41], &[2, 2]).unwrap()).unwrap();
        vs.add("b", Tensor::param(vec![7.0], &[1]).unwrap()).unwrap();
        let ck = Checkpoint::from_store(serde_json::json!({"front_end": "pixel"}), &vs);
        (vs, ck)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (vs, ck) = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.meta, ck.meta);
        let mut restored = vs.detached();
        restored.set_by_name("b", Tensor::param(vec![0.0], &[1]).unwrap()).unwrap();
        back.restore_into(&mut restored, |_| true).unwrap();
        assert!(restored.bit_equal(&vs));
    }

    #[test]
    fn corruption_is_detected() {
        let (_, ck) = sample();
        let bytes = ck.to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().to_string().contains("version"));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err().to_string().contains("truncated"));
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (_, ck) = sample();
        let mut other = VarStore::new();
        other.add("b", Tensor::zeros(&[2])).unwrap();
        assert!(ck.restore_into(&mut other, |_| true).is_err());
        let mut missing = VarStore::new();
        missing.add("c", Tensor::zeros(&[1])).unwrap();
        assert!(ck.restore_into(&mut missing, |_| true).is_err());
        assert_eq!(ck.restore_into(&mut missing, |n| n != "c").unwrap(), 0);
    }
}
