//! Portable binary model checkpoints.
//!
//! All integers and reals are little-endian:
//!
//! ```text
//! magic      8 bytes  "SARTOLCK"
//! version    u32      1
//! spec_len   u32      byte length of the JSON model spec that follows
//! spec       bytes    UTF-8 JSON
//! norm_mean  f64      input normalization
//! norm_std   f64
//! n_tensors  u32
//! per tensor, in declaration order:
//!   name_len u32, name bytes (UTF-8)
//!   rank u32, dims u32 x rank
//!   values f32 x product(dims)
//! ```

use std::path::Path;

use super::params::ModelParams;
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::raster::NormStats;

pub const MAGIC: &[u8; 8] = b"SARTOLCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ModelParams<f32>,
    pub stats: NormStats,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let spec = serde_json::to_vec(&ck.spec).expect("spec serializes");
    put_u32(&mut out, spec.len());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&ck.stats.mean.to_le_bytes());
    out.extend_from_slice(&ck.stats.std.to_le_bytes());
    put_u32(&mut out, ck.params.tensors.len());
    for (slot, t) in ck.params.slots.iter().zip(&ck.params.tensors) {
        put_u32(&mut out, slot.name.len());
        out.extend_from_slice(slot.name.as_bytes());
        put_u32(&mut out, slot.shape.len());
        for &d in &slot.shape {
            put_u32(&mut out, d);
        }
        for v in t {
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
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()?;
    let spec: ModelSpec =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint spec: {e}")))?;
    let stats = NormStats {
        mean: r.f64()?,
        std: r.f64()?,
    };
    let plan = spec.plan()?;
    let n = r.u32()?;
    if n != plan.slots.len() {
        return Err(Error::Structural(format!(
            "checkpoint holds {n} tensors, spec `{}` needs {}",
            spec.name,
            plan.slots.len()
        )));
    }
    let mut tensors = Vec::with_capacity(n);
    for slot in &plan.slots {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| Error::Format(e.to_string()))?;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if name != slot.name || dims != slot.shape {
            return Err(Error::Structural(format!(
                "tensor {name} {dims:?} does not match {} {:?}",
                slot.name, slot.shape
            )));
        }
        let raw = r.take(slot.len() * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value in tensor {name}")));
        }
        tensors.push(values);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        spec,
        params: ModelParams {
            slots: plan.slots,
            tensors,
        },
        stats,
    })
}

pub fn write_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
