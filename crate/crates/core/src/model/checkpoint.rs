//! Binary checkpoint: `"SMAE"`, u32 version, u32 array count, then per array
//! u16 name length, UTF-8 name, u8 dtype code, u8 ndim, u32 dims and raw
//! little-endian values. Every integer is little-endian.

use std::path::Path;

use smae_tensor::{DType, Element, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SMAE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl ArrayData {
    pub fn shape(&self) -> &[usize] {
        match self {
            ArrayData::F32(t) => t.shape(),
            ArrayData::F64(t) => t.shape(),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
        }
    }

    /// Values converted to `T`.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        match self {
            ArrayData::F32(t) => t.cast(),
            ArrayData::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for ArrayData {
    fn from(t: Tensor<f32>) -> Self {
        ArrayData::F32(t)
    }
}

impl From<Tensor<f64>> for ArrayData {
    fn from(t: Tensor<f64>) -> Self {
        ArrayData::F64(t)
    }
}

/// Ordered named arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    arrays: Vec<(String, ArrayData)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, data: impl Into<ArrayData>) {
        self.arrays.push((name.into(), data.into()));
    }

    pub fn arrays(&self) -> &[(String, ArrayData)] {
        &self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&ArrayData> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn require(&self, name: &str) -> Result<&ArrayData> {
        self.get(name)
            .ok_or_else(|| Error::Contract(format!("checkpoint has no array {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, data) in &self.arrays {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Contract(format!("array name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(data.dtype().code());
            let shape = data.shape();
            out.push(
                u8::try_from(shape.len())
                    .map_err(|_| Error::Contract(format!("{name} has too many dimensions")))?,
            );
            for &dim in shape {
                let dim = u32::try_from(dim)
                    .map_err(|_| Error::Contract(format!("{name} dimension {dim} too large")))?;
                out.extend_from_slice(&dim.to_le_bytes());
            }
            match data {
                ArrayData::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                ArrayData::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Parse { offset: 0, message: "not an SMAE checkpoint".into() });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Parse {
                offset: 4,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Parse { offset: at, message: "array name is not UTF-8".into() })?
                .to_string();
            let at = r.pos;
            let dtype = DType::from_code(r.u8()?)
                .ok_or_else(|| Error::Parse { offset: at, message: "unknown dtype code".into() })?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * dtype.size_of())?;
            let data = match dtype {
                DType::F32 => ArrayData::F32(Tensor::new(
                    shape,
                    raw.chunks_exact(4).map(f32::read_le).collect(),
                )?),
                DType::F64 => ArrayData::F64(Tensor::new(
                    shape,
                    raw.chunks_exact(8).map(f64::read_le).collect(),
                )?),
            };
            arrays.push((name, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse { offset: r.pos, message: "trailing bytes after last array".into() });
        }
        Ok(Self { arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Parse {
                offset: self.bytes.len(),
                message: format!("checkpoint truncated: needed {n} bytes at offset {}", self.pos),
            }
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
