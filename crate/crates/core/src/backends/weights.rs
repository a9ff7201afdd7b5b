//! Binary weight archive shared with the training tooling.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PTDW" | u32 version=1 | u32 tensor_count
//! per tensor: u16 name_len | name (UTF-8) | u8 dtype (0 = f32) | u8 ndim
//!             | ndim × u32 dims | product(dims) × f32 payload
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result, WeightError};

pub const MAGIC: [u8; 4] = *b"PTDW";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightArchive {
    version: u32,
    tensors: Vec<NamedTensor>,
}

impl Default for WeightArchive {
    fn default() -> Self {
        Self {
            version: FORMAT_VERSION,
            tensors: Vec::new(),
        }
    }
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Appends a tensor; names must be unique and the payload must fill the shape.
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<(), WeightError> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(WeightError::DuplicateName(name));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(WeightError::PayloadLength {
                name,
                expected,
                found: data.len(),
            });
        }
        self.tensors.push(NamedTensor { name, shape, data });
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.parameter_count() * 4 + self.tensors.len() * 32);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightError> {
        if bytes.len() < 4 {
            return Err(WeightError::Truncated {
                what: "magic",
                offset: 0,
            });
        }
        if bytes[..4] != MAGIC {
            return Err(WeightError::BadMagic {
                found: bytes[..4].try_into().expect("four bytes"),
            });
        }
        let body_len = bytes.len().saturating_sub(4).max(4);
        let mut r = Reader {
            buf: &bytes[..body_len],
            pos: 4,
        };
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(WeightError::UnsupportedVersion(version));
        }
        let count = r.u32("tensor count")? as usize;
        let mut seen = HashSet::new();
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| WeightError::InvalidName)?
                .to_owned();
            if !seen.insert(name.clone()) {
                return Err(WeightError::DuplicateName(name));
            }
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(WeightError::UnsupportedDtype(dtype));
            }
            let ndim = r.u8("rank")? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(n.checked_mul(4).ok_or(WeightError::Truncated {
                what: "payload",
                offset: r.pos,
            })?, "payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if bytes.len() < r.pos + 4 {
            return Err(WeightError::Truncated {
                what: "checksum",
                offset: r.pos,
            });
        }
        if bytes.len() > r.pos + 4 {
            return Err(WeightError::TrailingBytes(bytes.len() - r.pos - 4));
        }
        let stored = u32::from_le_bytes(bytes[r.pos..].try_into().expect("four bytes"));
        let computed = crc32fast::hash(&bytes[..r.pos]);
        if stored != computed {
            return Err(WeightError::ChecksumMismatch { stored, computed });
        }
        Ok(Self { version, tensors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_bytes(&bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(WeightError::Truncated { what, offset: self.pos })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, WeightError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, WeightError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }
}
