//! Binary tensor container shared by datasets, checkpoints, and embedding
//! dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "PRSM"
//! version u16      currently 1
//! count   u32      number of tensors
//! per tensor:
//!   name_len u16, name bytes (UTF-8)
//!   rank u8, dims u32 * rank
//!   payload f64 * prod(dims), IEEE-754 little-endian
//! ```

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"PRSM";
pub const FORMAT_VERSION: u16 = 1;

/// One named tensor in a container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: &str, dims: Vec<u32>, data: Vec<f64>) -> Self {
        let expected: usize = dims.iter().map(|&d| d as usize).product();
        assert_eq!(expected, data.len(), "tensor payload mismatch for {name}");
        Self {
            name: name.to_string(),
            dims,
            data,
        }
    }

    pub fn scalar(name: &str, value: f64) -> Self {
        Self::new(name, vec![], vec![value])
    }
}

/// Serializes tensors to a byte buffer.
pub fn encode_tensors(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for tensor in tensors {
        let name_bytes = tensor.name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.dims.len() as u8);
        for &dim in &tensor.dims {
            out.extend_from_slice(&dim.to_le_bytes());
        }
        for &value in &tensor.data {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                expected: self.pos + n,
                got: self.buf.len(),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a container from bytes.
pub fn decode_tensors(buf: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut cursor = Cursor { buf, pos: 0 };
    let magic = cursor.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic bytes {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = cursor.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            got: version,
            supported: FORMAT_VERSION,
        });
    }
    let count = cursor.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cursor.u16()? as usize;
        let name = std::str::from_utf8(cursor.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".to_string()))?
            .to_string();
        let rank = cursor.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cursor.u32()?);
        }
        let len: usize = dims.iter().map(|&d| d as usize).product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(cursor.f64()?);
        }
        tensors.push(NamedTensor { name, dims, data });
    }
    if cursor.pos != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            buf.len() - cursor.pos
        )));
    }
    Ok(tensors)
}

pub fn write_container(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    fs::write(path, encode_tensors(tensors))?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Vec<NamedTensor>> {
    decode_tensors(&fs::read(path)?)
}

/// Looks up a tensor by name.
pub fn find<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Format(format!("missing tensor {name}")))
}
