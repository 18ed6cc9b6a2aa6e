//! Small self-describing binary container shared by dataset caches and
//! checkpoints.
//!
//! ```text
//! magic     [u8; 8]
//! version   u32
//! count     u32
//! entry*    name_len u32 | name utf8 | dtype u8 | ndim u32 | dims u64*ndim | payload
//! ```
//!
//! All integers and floats are little-endian. Text payloads carry their byte
//! length as the single dimension.

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::{DType, Scalar};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    U32(Vec<u32>),
    I64(Vec<i64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    Text(String),
}

impl Payload {
    fn dtype(&self) -> DType {
        match self {
            Payload::U32(_) => DType::U32,
            Payload::I64(_) => DType::I64,
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
            Payload::Text(_) => DType::Utf8,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::U32(v) => v.len(),
            Payload::I64(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::Text(s) => s.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl Entry {
    pub fn as_text(&self) -> Result<&str> {
        match &self.payload {
            Payload::Text(s) => Ok(s),
            _ => Err(Error::Container(format!("entry {} is not text", self.name))),
        }
    }

    pub fn as_u32(&self) -> Result<&[u32]> {
        match &self.payload {
            Payload::U32(v) => Ok(v),
            _ => Err(Error::Container(format!("entry {} is not u32", self.name))),
        }
    }

    pub fn as_i64(&self) -> Result<&[i64]> {
        match &self.payload {
            Payload::I64(v) => Ok(v),
            _ => Err(Error::Container(format!("entry {} is not i64", self.name))),
        }
    }

    /// Reads a float entry into any scalar type, converting precision if needed.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| T::from_f64_lossy(f64::from(x))).collect(),
            Payload::F64(v) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            _ => return Err(Error::Container(format!("entry {} is not floating point", self.name))),
        };
        Tensor::from_vec(&self.dims, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 8],
    pub entries: Vec<Entry>,
}

impl Container {
    pub fn new(magic: [u8; 8]) -> Self {
        Container { magic, entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, payload: Payload) -> Result<()> {
        let name = name.into();
        let expect: usize = dims.iter().product();
        if expect != payload.len() {
            return Err(Error::Container(format!("entry {name}: dims {dims:?} vs {} elements", payload.len())));
        }
        if self.get(&name).is_some() {
            return Err(Error::Container(format!("duplicate entry {name}")));
        }
        self.entries.push(Entry { name, dims, payload });
        Ok(())
    }

    pub fn push_text(&mut self, name: impl Into<String>, text: impl Into<String>) -> Result<()> {
        let text = text.into();
        self.push(name, vec![text.len()], Payload::Text(text))
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<()> {
        let payload = match T::DTYPE {
            DType::F32 => Payload::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            _ => Payload::F64(t.to_f64()),
        };
        self.push(name, t.shape().to_vec(), payload)
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name).ok_or_else(|| Error::Container(format!("missing entry {name}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.payload.dtype() as u8);
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.payload {
                Payload::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::Text(s) => out.extend_from_slice(s.as_bytes()),
            }
        }
        out
    }

    pub fn from_bytes(magic: [u8; 8], bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != magic {
            return Err(Error::Container(format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let count = cur.u32()? as usize;
        let mut out = Container::new(magic);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| Error::Container("entry name is not UTF-8".into()))?;
            let tag = cur.take(1)?[0];
            let dtype = DType::from_u8(tag).ok_or_else(|| Error::Container(format!("entry {name}: unknown dtype {tag}")))?;
            let ndim = cur.u32()? as usize;
            let dims = (0..ndim)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Container(format!("entry {name}: dims overflow")))?;
            let payload = match dtype {
                DType::U32 => Payload::U32(cur.chunks(n, 4)?.map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
                DType::I64 => Payload::I64(cur.chunks(n, 8)?.map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
                DType::F32 => Payload::F32(cur.chunks(n, 4)?.map(f32::read_le).collect()),
                DType::F64 => Payload::F64(cur.chunks(n, 8)?.map(f64::read_le).collect()),
                DType::Utf8 => Payload::Text(
                    String::from_utf8(cur.take(n)?.to_vec())
                        .map_err(|_| Error::Container(format!("entry {name}: text is not UTF-8")))?,
                ),
            };
            out.push(name, dims, payload)?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::Container(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(out)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Container(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn chunks(&mut self, n: usize, width: usize) -> Result<std::slice::ChunksExact<'a, u8>> {
        let len = n.checked_mul(width).ok_or_else(|| Error::Container("payload size overflow".into()))?;
        Ok(self.take(len)?.chunks_exact(width))
    }
}
