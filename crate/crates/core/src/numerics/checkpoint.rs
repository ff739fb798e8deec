//! `HTLA1` checkpoint container: named tensors as shape + little-endian `f64`.
//!
//! Layout: magic `HTLA1`, `u32` tensor count, then per tensor a `u32` name
//! length, UTF-8 name, `u32` rank, `u64` dims and row-major data.

use std::path::Path;

use super::{NumericsError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"HTLA1";

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_elements() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NumericsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NumericsError::Truncated(what.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NumericsError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, NumericsError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes every tensor in a checkpoint, in file order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, NumericsError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len(), "magic").ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(NumericsError::BadMagic);
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(len, "name")?.to_vec())
            .map_err(|_| NumericsError::Truncated("utf-8 name".into()))?;
        let rank = r.u32(&name)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64(&name)? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or(NumericsError::BadMagic)?, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

impl ParamStore {
    /// Replaces parameter values from decoded checkpoint entries. Every
    /// parameter must be present with a matching shape.
    pub fn load_values(&mut self, entries: Vec<(String, Tensor)>) -> Result<(), NumericsError> {
        let mut seen = vec![false; self.len()];
        let mut staged = Vec::with_capacity(entries.len());
        for (name, tensor) in entries {
            let id = self
                .id(&name)
                .ok_or_else(|| NumericsError::UnexpectedTensor(name.clone()))?;
            let expected = self.value(id).shape();
            if expected != tensor.shape() {
                return Err(NumericsError::TensorShape {
                    name,
                    expected: expected.to_vec(),
                    found: tensor.shape().to_vec(),
                });
            }
            seen[id.0] = true;
            staged.push((id, tensor));
        }
        if let Some(missing) = self.ids().find(|id| !seen[id.0]) {
            return Err(NumericsError::MissingTensor(self.get(missing).name.clone()));
        }
        for (id, tensor) in staged {
            *self.value_mut(id) = tensor;
        }
        Ok(())
    }
}

pub fn write_checkpoint(path: &Path, store: &ParamStore) -> Result<(), NumericsError> {
    std::fs::write(path, encode_checkpoint(store)).map_err(|e| NumericsError::Io(format!("{}: {e}", path.display())))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>, NumericsError> {
    let bytes = std::fs::read(path).map_err(|e| NumericsError::Io(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
