//! Named parameter storage and the `LTVW` binary weight format.
//!
//! Layout (little-endian): magic `LTVW`, `u32` version (1), `u32` tensor
//! count, then per tensor: `u16` name length, UTF-8 name, `u8` dtype code
//! (0 = f32), `u8` rank, `rank × u32` dims, raw f32 payload. Trailing
//! unit dimensions are dropped when writing and restored on read.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"LTVW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Ordered map from dotted parameter name to tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStore<T: Scalar = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> WeightStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }

    /// Fails if `name` is already present.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Load {
                name,
                msg: "duplicate tensor name".into(),
            });
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::Load {
            name: name.to_string(),
            msg: "missing".into(),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total scalar count over every tensor.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> WeightStore<U> {
        WeightStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

fn file_dims(dims: [usize; 4]) -> &'static [usize] {
    // rank after dropping trailing unit dims, at least 1
    let mut rank = 4;
    while rank > 1 && dims[rank - 1] == 1 {
        rank -= 1;
    }
    &[0, 1, 2, 3][..rank]
}

impl WeightStore<f32> {
    /// Serialises the store into the `LTVW` layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + self.scalar_count() * 4 + self.len() * 48);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (name, t) in self.iter() {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len()).map_err(|_| Error::Load {
                name: name.to_string(),
                msg: "name longer than 65535 bytes".into(),
            })?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(bytes);
            out.push(DTYPE_F32);
            let dims = t.dims();
            let axes = file_dims(dims);
            out.push(axes.len() as u8);
            for &a in axes {
                let d = u32::try_from(dims[a]).map_err(|_| Error::Load {
                    name: name.to_string(),
                    msg: "dimension exceeds u32".into(),
                })?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses an `LTVW` buffer; every failure names the byte offset.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(r.error_at(0, format!("bad magic {:?}, expected \"LTVW\"", String::from_utf8_lossy(magic))));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let count = r.u32("tensor count")? as usize;
        let mut store = WeightStore::new();
        for _ in 0..count {
            let start = r.pos;
            let name_len = r.u16("name length")? as usize;
            let name_bytes = r.take(name_len, "tensor name")?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| r.error_at(start + 2, "tensor name is not UTF-8".into()))?
                .to_string();
            let dtype_pos = r.pos;
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(r.error_at(dtype_pos, format!("unsupported dtype code {dtype} for `{name}`")));
            }
            let rank_pos = r.pos;
            let rank = r.u8("rank")? as usize;
            if rank == 0 || rank > 4 {
                return Err(r.error_at(rank_pos, format!("rank {rank} of `{name}` outside 1..=4")));
            }
            let mut dims = [1usize; 4];
            for d in dims.iter_mut().take(rank) {
                *d = r.u32("dimension")? as usize;
            }
            let n: usize = dims.iter().product();
            let payload_pos = r.pos;
            let payload = r.take(n * 4, "payload").map_err(|_| {
                r.error_at(payload_pos, format!("payload of `{name}` truncated: need {} bytes", n * 4))
            })?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if store.contains(&name) {
                return Err(r.error_at(start, format!("duplicate tensor `{name}`")));
            }
            store.insert(name, Tensor::new(dims, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, msg: String) -> Error {
        Error::Format {
            offset: offset as u64,
            msg,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
