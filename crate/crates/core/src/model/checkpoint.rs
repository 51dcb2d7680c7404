//! Binary checkpoint format.
//!
//! ```text
//! magic    "ADPL"
//! version  u16 LE (= 1)
//! width    u8, scalar width in bytes (4 = f32, 8 = f64)
//! count    u32 LE
//! count × entry:
//!   group   u16 LE length + UTF-8
//!   name    u16 LE length + UTF-8
//!   ndim    u8
//!   dims    ndim × u32 LE
//!   payload product(dims) little-endian scalars
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::MultimodalModel;
use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"ADPL";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry<T> {
    pub group: Group,
    pub name: String,
    pub value: Tensor<T>,
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Checkpoint(format!("name too long: {s}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn write_checkpoint<T: Scalar>(store: &ParamStore<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::WIDTH as u8);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        put_str(&mut out, p.group.as_str())?;
        put_str(&mut out, &p.name)?;
        let shape = p.value.shape();
        out.push(u8::try_from(shape.len()).map_err(|_| Error::Checkpoint("rank > 255".into()))?);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Vec<CheckpointEntry<T>>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width = r.u8()? as usize;
    if width != T::WIDTH {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {width}-byte scalars, expected {}",
            T::WIDTH
        )));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let group = r.string()?.parse()?;
        let name = r.string()?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(n * width)?;
        let data = payload.chunks(width).map(T::read_le).collect();
        entries.push(CheckpointEntry {
            group,
            name,
            value: Tensor::new(shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn save_checkpoint<T: Scalar>(model: &MultimodalModel<T>, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(&model.store)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads parameter values into `model`. Adapters present in the checkpoint
/// but missing from the model are inserted first; afterwards the sets of
/// tensors must match exactly.
pub fn load_checkpoint<T: Scalar>(model: &mut MultimodalModel<T>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let entries = read_checkpoint::<T>(&bytes)?;
    let wants_adapters = entries
        .iter()
        .any(|e| matches!(e.group, Group::EncoderAdapters | Group::DecoderAdapters));
    if wants_adapters && !model.has_adapters() {
        model.insert_adapters(0);
    }
    if entries.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            entries.len(),
            model.store.len()
        )));
    }
    let mut by_name: HashMap<&str, &CheckpointEntry<T>> = HashMap::new();
    for e in &entries {
        by_name.insert(e.name.as_str(), e);
    }
    for (_, p) in model.store.iter_mut() {
        let e = by_name
            .get(p.name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
        if e.group != p.group || e.value.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: expected {} {:?}, found {} {:?}",
                p.name,
                p.group,
                p.value.shape(),
                e.group,
                e.value.shape()
            )));
        }
        p.value = e.value.clone();
    }
    Ok(())
}
