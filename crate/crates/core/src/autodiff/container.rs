//! Flat binary tensor container used for checkpoints.
//!
//! All integers little-endian:
//!
//! ```text
//! magic      8 bytes  "QFUSETNS"
//! version    u32      currently 1
//! meta_len   u32      length of the metadata block
//! metadata   meta_len bytes of UTF-8 (free-form; checkpoints store JSON)
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 × ndim)
//!   payload  f64 × product(dims)
//! crc32      u32      CRC-32 (IEEE) of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 8] = b"QFUSETNS";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub metadata: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_container_bytes(metadata: &str, tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    put_u32(&mut out, CONTAINER_VERSION);
    put_u32(&mut out, metadata.len() as u32);
    out.extend_from_slice(metadata.as_bytes());
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len() as u32);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

/// Writes via a temporary sibling and a rename, so an interrupted write never
/// clobbers an existing file.
pub fn write_container(path: &Path, metadata: &str, tensors: &[(&str, &Tensor)]) -> Result<()> {
    let bytes = write_container_bytes(metadata, tensors);
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("container truncated".into()));
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

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 in container".into()))
    }
}

pub fn read_container_bytes(bytes: &[u8]) -> Result<Container> {
    if bytes.len() < CONTAINER_MAGIC.len() + 4 + 4 || &bytes[..8] != CONTAINER_MAGIC {
        return Err(Error::Checkpoint("bad magic: not a tensor container".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint("checksum mismatch: container is corrupted".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Checkpoint(format!("unsupported container version {version}")));
    }
    let meta_len = r.u32()? as usize;
    let metadata = r.string(meta_len)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        tensors.push((name, t));
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(Container { metadata, tensors })
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_container_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let a = Tensor::new(vec![2, 2], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]).unwrap();
        let b = Tensor::scalar(7.0);
        write_container_bytes("{\"k\":1}", &[("a", &a), ("b.bias", &b)])
    }

    #[test]
    fn layout_starts_with_header() {
        let bytes = sample();
        assert_eq!(&bytes[..8], b"QFUSETNS");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 7);
        let c = read_container_bytes(&bytes).unwrap();
        assert_eq!(c.metadata, "{\"k\":1}");
        assert_eq!(c.get("a").unwrap().data()[3], f64::MIN_POSITIVE);
        assert_eq!(c.get("b.bias").unwrap().shape(), &[] as &[usize]);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(read_container_bytes(&bytes), Err(Error::Checkpoint(m)) if m.contains("checksum")));
        let bytes = sample();
        assert!(read_container_bytes(&bytes[..bytes.len() - 9]).is_err());
        assert!(read_container_bytes(b"garbage!garbage!").is_err());
    }
}
