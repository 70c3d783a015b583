//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "GFMCKPT1"
//! meta      u64 length + UTF-8 JSON
//! params    u64 count, then per parameter:
//!             u32 name length, name, u64 rows, u64 cols, rows*cols f64
//! adam step u64
//! moments   u64 count, then per entry:
//!             u32 name length, name, u64 step, u64 rows, u64 cols,
//!             rows*cols f64 (first moment), rows*cols f64 (second moment)
//! ```

use super::{AdamState, Moments, ParamStore};
use crate::tensor::Tensor2;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GFMCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form JSON describing the model.
    pub meta: String,
    pub params: ParamStore,
    pub optimizer: AdamState,
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor2) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(ckpt.meta.len() as u64).to_le_bytes());
    out.extend_from_slice(ckpt.meta.as_bytes());
    out.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    for (name, p) in ckpt.params.iter() {
        put_name(&mut out, name);
        out.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        put_tensor(&mut out, &p.value);
    }
    out.extend_from_slice(&ckpt.optimizer.step.to_le_bytes());
    out.extend_from_slice(&(ckpt.optimizer.moments.len() as u64).to_le_bytes());
    for (name, m) in &ckpt.optimizer.moments {
        put_name(&mut out, name);
        out.extend_from_slice(&m.step.to_le_bytes());
        out.extend_from_slice(&(m.m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.m.cols() as u64).to_le_bytes());
        put_tensor(&mut out, &m.m);
        put_tensor(&mut out, &m.v);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))
    }

    fn tensor(&mut self, rows: usize, cols: usize) -> Result<Tensor2> {
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        let data = self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor2::from_vec(rows, cols, data)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if !bytes.starts_with(CHECKPOINT_MAGIC) {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader { bytes, pos: 8 };
    let meta_len = r.u64()? as usize;
    let meta = String::from_utf8(r.take(meta_len)?.to_vec())
        .map_err(|_| Error::Format("checkpoint metadata is not UTF-8".into()))?;
    let mut params = ParamStore::new();
    for _ in 0..r.u64()? {
        let name = r.name()?;
        let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
        params.insert(name, r.tensor(rows, cols)?);
    }
    let mut optimizer = AdamState {
        step: r.u64()?,
        ..AdamState::default()
    };
    for _ in 0..r.u64()? {
        let name = r.name()?;
        let step = r.u64()?;
        let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
        let m = r.tensor(rows, cols)?;
        let v = r.tensor(rows, cols)?;
        optimizer.moments.insert(name, Moments { m, v, step });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        meta,
        params,
        optimizer,
    })
}
