//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! `MAGIC | version u32 | step u64 | count u32 | record* | meta_len u64 | meta utf-8`
//! where a record is
//! `name_len u32 | name | dtype u8 | ndims u32 | dims u64* | values | m | v`.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::real::{DType, Real};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GPSTCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<R: Real>(store: &ParamStore<R>, meta: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&store.step_count().to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(R::DTYPE.code());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for seq in [p.value.data(), &p.m[..], &p.v[..]] {
            for &x in seq {
                x.put_le(&mut out);
            }
        }
    }
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out
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

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn values<R: Real>(&mut self, dtype: DType, n: usize) -> Result<Vec<R>> {
        let w = dtype.width();
        let bytes = self.take(n * w)?;
        Ok(bytes
            .chunks(w)
            .map(|c| match dtype {
                DType::F32 => R::of(f32::get_le(c) as f64),
                DType::F64 => R::of(f64::get_le(c)),
            })
            .collect())
    }
}

/// Decodes a checkpoint, converting stored values to `R` if needed.
pub fn decode<R: Real>(bytes: &[u8]) -> Result<(ParamStore<R>, String)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let step = r.u64()?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
        let code = r.take(1)?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown dtype code {code}")))?;
        let ndims = r.u32()? as usize;
        let shape = (0..ndims).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().product();
        let values = r.values(dtype, numel)?;
        let m = r.values(dtype, numel)?;
        let v = r.values(dtype, numel)?;
        let id = store.add(name, Tensor::new(shape, values)?)?;
        let p = &mut store.params_mut()[id.0];
        p.m = m;
        p.v = v;
    }
    store.set_step_count(step);
    let meta_len = r.u64()? as usize;
    let meta = String::from_utf8(r.take(meta_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("metadata is not utf-8".into()))?;
    Ok((store, meta))
}

pub fn save<R: Real>(path: &Path, store: &ParamStore<R>, meta: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(store, meta)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load<R: Real>(path: &Path) -> Result<(ParamStore<R>, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
