//! "SOMT" tensor container: the bit-exact persistence format for datasets,
//! checkpoints, templates, and sample sets.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "SOMT"
//! version u8       1
//! dtype   u8       1 = f32, 2 = f64, 3 = complex-f32 (re/im interleaved)
//! names   u8       1 when a name precedes each tensor, 0 otherwise
//! count   u32      number of tensors
//! per tensor:
//!   name  u16 length + UTF-8 bytes          (only when names == 1)
//!   ndim  u8
//!   dims  ndim x u32
//!   data  row-major payload                 (complex: 2 floats per element)
//! ```
//!
//! Free-form metadata travels as a named tensor whose scalars hold the bytes
//! of a UTF-8 `key=value` blob, so provenance stays inside the container
//! without a second format.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SOMT";
pub const VERSION: u8 = 1;

/// One stored tensor. All entries of a file share one dtype code.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorEntry {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
    /// Interleaved re/im pairs; `data.len() == 2 * product(shape)`.
    C32 { shape: Vec<usize>, data: Vec<f32> },
}

impl TensorEntry {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorEntry::F32 { shape, .. }
            | TensorEntry::F64 { shape, .. }
            | TensorEntry::C32 { shape, .. } => shape,
        }
    }

    fn dtype_code(&self) -> u8 {
        match self {
            TensorEntry::F32 { .. } => 1,
            TensorEntry::F64 { .. } => 2,
            TensorEntry::C32 { .. } => 3,
        }
    }

    fn check(&self) -> Result<()> {
        let n: usize = self.shape().iter().product();
        let ok = match self {
            TensorEntry::F32 { data, .. } => data.len() == n,
            TensorEntry::F64 { data, .. } => data.len() == n,
            TensorEntry::C32 { data, .. } => data.len() == 2 * n,
        };
        if !ok {
            return Err(Error::Format(format!(
                "tensor entry: payload does not match shape {:?}",
                self.shape()
            )));
        }
        Ok(())
    }
}

/// Write bytes to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into())
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Serialize named tensors; every entry must carry the same dtype code.
pub fn to_bytes(tensors: &[(String, TensorEntry)]) -> Result<Vec<u8>> {
    let dtype = match tensors.first() {
        Some((_, e)) => e.dtype_code(),
        None => 1,
    };
    for (name, e) in tensors {
        e.check()?;
        if e.dtype_code() != dtype {
            return Err(Error::Format(format!(
                "container: mixed dtypes ({} is code {}, file is code {dtype})",
                name,
                e.dtype_code()
            )));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("tensor name too long: {}", name.len())));
        }
    }
    if tensors.len() > u32::MAX as usize {
        return Err(Error::Format("too many tensors for u32 count".into()));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype);
    out.push(1); // names present
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, e) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = e.shape();
        out.push(shape.len() as u8);
        for &d in shape {
            if d > u32::MAX as usize {
                return Err(Error::Format(format!("dimension {d} exceeds u32")));
            }
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match e {
            TensorEntry::F32 { data, .. } | TensorEntry::C32 { data, .. } => {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            TensorEntry::F64 { data, .. } => {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[(String, TensorEntry)]) -> Result<()> {
    atomic_write(path, &to_bytes(tensors)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated payload: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
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
}

pub fn from_bytes(buf: &[u8]) -> Result<Vec<(String, TensorEntry)>> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02x?}, expected \"SOMT\"")));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("version mismatch: file {version}, supported {VERSION}")));
    }
    let dtype = r.u8()?;
    if !(1..=3).contains(&dtype) {
        return Err(Error::Format(format!("unknown dtype code {dtype}")));
    }
    let named = r.u8()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let name = if named == 1 {
            let len = r.u16()? as usize;
            String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
        } else {
            format!("tensor{i}")
        };
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let entry = match dtype {
            1 | 3 => {
                let elems = if dtype == 3 { 2 * n } else { n };
                let raw = r.take(4 * elems)?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                if dtype == 3 {
                    TensorEntry::C32 { shape, data }
                } else {
                    TensorEntry::F32 { shape, data }
                }
            }
            2 => {
                let raw = r.take(8 * n)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                TensorEntry::F64 { shape, data }
            }
            _ => unreachable!(),
        };
        tensors.push((name, entry));
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!(
            "trailing bytes: {} past end of declared tensors",
            buf.len() - r.pos
        )));
    }
    Ok(tensors)
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, TensorEntry)>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

/// Encode a UTF-8 blob as a tensor entry matching the file's dtype code.
pub fn encode_meta(text: &str, dtype_code: u8) -> TensorEntry {
    let bytes = text.as_bytes();
    match dtype_code {
        2 => TensorEntry::F64 {
            shape: vec![bytes.len()],
            data: bytes.iter().map(|&b| b as f64).collect(),
        },
        _ => TensorEntry::F32 {
            shape: vec![bytes.len()],
            data: bytes.iter().map(|&b| b as f32).collect(),
        },
    }
}

/// Recover the UTF-8 blob written by [`encode_meta`].
pub fn decode_meta(entry: &TensorEntry) -> Result<String> {
    let bytes: Vec<u8> = match entry {
        TensorEntry::F32 { data, .. } => data.iter().map(|&v| v as u8).collect(),
        TensorEntry::F64 { data, .. } => data.iter().map(|&v| v as u8).collect(),
        TensorEntry::C32 { .. } => {
            return Err(Error::Format("meta tensor cannot be complex".into()))
        }
    };
    String::from_utf8(bytes).map_err(|_| Error::Format("meta blob is not UTF-8".into()))
}

/// Find an entry by name.
pub fn find<'a>(tensors: &'a [(String, TensorEntry)], name: &str) -> Result<&'a TensorEntry> {
    tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, e)| e)
        .ok_or_else(|| Error::Format(format!("container is missing tensor '{name}'")))
}
