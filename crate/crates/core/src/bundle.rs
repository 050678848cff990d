//! Named-tensor bundle file, shared by checkpoints, feature files and
//! reference triplanes.
//!
//! Layout (little-endian):
//!
//! ```text
//! "PLAM" | version u32 | meta_len u32 | meta (UTF-8 "key=value\n" lines)
//! count u32 | count × { name_len u32, name, dtype u8, rank u32, dims u64×rank, offset u64 }
//! payload (tensor data, offsets relative to payload start)
//! crc32 u32 over every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::mesh::ByteReader;
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use crate::real::{DType, Real};

pub const MAGIC: &[u8; 4] = b"PLAM";
pub const VERSION: u32 = 1;

pub type Meta = Vec<(String, String)>;

pub fn encode<T: Real>(meta: &[(String, String)], tensors: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in tensors.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += (t.len() * T::DTYPE.size()) as u64;
    }
    for (_, t) in tensors.iter() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct DirEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
}

/// Decodes a bundle. Tensors stored at the other precision are converted.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(Meta, ParamStore<T>)> {
    let fmt = |offset: usize, msg: String| Error::Format {
        offset: offset as u64,
        msg,
    };
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(fmt(0, "bad magic (expected PLAM)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(fmt(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let meta_start = r.pos() + 4;
    let meta_len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|e| fmt(meta_start, format!("config block is not UTF-8: {e}")))?;
    let mut meta = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| fmt(meta_start, format!("config line without '=': {line}")))?;
        meta.push((k.to_string(), v.to_string()));
    }

    let count = r.u32()? as usize;
    let mut dir = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let at = r.pos();
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| fmt(at, "tensor name is not UTF-8".into()))?;
        let tag_at = r.pos();
        let dtype = DType::from_tag(r.u8()?)
            .ok_or_else(|| fmt(tag_at, format!("unknown dtype tag for `{name}`")))?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(fmt(tag_at + 1, format!("implausible rank {rank} for `{name}`")));
        }
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64()?;
        dir.push(DirEntry {
            name,
            dtype,
            shape,
            offset,
        });
    }

    let payload_start = r.pos();
    if bytes.len() < payload_start + 4 {
        return Err(fmt(bytes.len(), "truncated before payload".into()));
    }
    let payload_end = bytes.len() - 4;
    let mut store = ParamStore::new();
    let mut expected_offset = 0u64;
    for e in dir {
        if e.offset != expected_offset {
            return Err(fmt(payload_start, format!("tensor `{}` has offset {} (expected {expected_offset})", e.name, e.offset)));
        }
        let n: usize = e.shape.iter().product();
        let nbytes = n * e.dtype.size();
        let start = payload_start + e.offset as usize;
        if start + nbytes > payload_end {
            return Err(fmt(
                start,
                format!("truncated payload for `{}`: needs {nbytes} bytes", e.name),
            ));
        }
        let raw = &bytes[start..start + nbytes];
        let data: Vec<T> = match e.dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| T::c(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| T::c(f64::read_le(c))).collect(),
        };
        expected_offset += nbytes as u64;
        store.insert(e.name, Tensor::new(&e.shape, data)?)?;
    }
    let end = payload_start + expected_offset as usize;
    if end != payload_end {
        return Err(fmt(end, format!("{} unexpected bytes after payload", payload_end as i64 - end as i64)));
    }
    let stored = u32::from_le_bytes(bytes[payload_end..].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[..payload_end]);
    if stored != actual {
        return Err(fmt(
            payload_end,
            format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})"),
        ));
    }
    Ok((meta, store))
}

pub fn save<T: Real>(path: &Path, meta: &[(String, String)], tensors: &ParamStore<T>) -> Result<()> {
    std::fs::write(path, encode(meta, tensors))?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<(Meta, ParamStore<T>)> {
    decode(&std::fs::read(path)?)
}
