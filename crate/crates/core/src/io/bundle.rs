//! Container format shared by data, ground truth, and checkpoints.
//!
//! ```text
//! magic            8 bytes  ("RICAMB01" or "RICACP01")
//! array count      u32 LE
//! per array:
//!   name length    u16 LE
//!   name           UTF-8 bytes
//!   ndim           u8
//!   dims           ndim x u64 LE
//!   payload        prod(dims) x f64 LE, row-major
//! metadata count   u32 LE
//! per entry:
//!   key length     u16 LE
//!   key            UTF-8 bytes
//!   value length   u32 LE
//!   value          UTF-8 bytes
//! ```

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::matcore::DenseMatrix;

pub const BUNDLE_MAGIC: &[u8; 8] = b"RICAMB01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RICACP01";

/// N-dimensional row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NdArray {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::DimOverflow(format!("{dims:?}")))?;
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn to_matrix(&self) -> Result<DenseMatrix> {
        match self.dims.as_slice() {
            [r, c] => DenseMatrix::new(*r, *c, self.data.clone()),
            [n] => DenseMatrix::new(*n, 1, self.data.clone()),
            _ => Err(Error::ShapeMismatch(format!(
                "expected a matrix, got dims {:?}",
                self.dims
            ))),
        }
    }
}

impl From<&DenseMatrix> for NdArray {
    fn from(m: &DenseMatrix) -> Self {
        Self {
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }
}

/// Named arrays plus string metadata. Insertion order is preserved and is
/// the on-disk order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixBundle {
    pub arrays: IndexMap<String, NdArray>,
    pub metadata: IndexMap<String, String>,
}

impl MatrixBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, array: NdArray) -> Result<()> {
        let name = name.into();
        if self.arrays.contains_key(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.arrays.insert(name, array);
        Ok(())
    }

    pub fn insert_matrix(&mut self, name: impl Into<String>, m: &DenseMatrix) -> Result<()> {
        self.insert(name, NdArray::from(m))
    }

    pub fn insert_vector(&mut self, name: impl Into<String>, v: &[f64]) -> Result<()> {
        self.insert(
            name,
            NdArray {
                dims: vec![v.len()],
                data: v.to_vec(),
            },
        )
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn array(&self, name: &str) -> Result<&NdArray> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::MissingArray(name.to_string()))
    }

    pub fn matrix(&self, name: &str) -> Result<DenseMatrix> {
        self.array(name)?.to_matrix()
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.array(name)?.data.clone())
    }

    /// Arrays named `{prefix}{index}` for index = 0, 1, ... until a gap.
    pub fn indexed_matrices(&self, prefix: &str) -> Result<Vec<DenseMatrix>> {
        let mut out = Vec::new();
        while let Some(a) = self.arrays.get(&format!("{prefix}{}", out.len())) {
            out.push(a.to_matrix()?);
        }
        Ok(out)
    }

    pub fn encode(&self, magic: &[u8; 8]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(magic);
        out.extend_from_slice(&count_u32(self.arrays.len(), "array count")?.to_le_bytes());
        for (name, arr) in &self.arrays {
            write_str16(&mut out, name)?;
            let ndim = u8::try_from(arr.dims.len())
                .map_err(|_| Error::DimOverflow(name.clone()))?;
            out.push(ndim);
            for &d in &arr.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &arr.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&count_u32(self.metadata.len(), "metadata count")?.to_le_bytes());
        for (k, v) in &self.metadata {
            write_str16(&mut out, k)?;
            out.extend_from_slice(&count_u32(v.len(), k)?.to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], magic: &[u8; 8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let found = r.take(8, "magic")?;
        if found != magic {
            return Err(Error::BadMagic(format!(
                "expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(found)
            )));
        }
        let mut bundle = MatrixBundle::new();
        let n_arrays = r.u32("array count")?;
        for _ in 0..n_arrays {
            let name = r.str16("array name")?;
            let ndim = r.take(1, "ndim")?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let d = r.u64("dims")?;
                dims.push(usize::try_from(d).map_err(|_| Error::DimOverflow(name.clone()))?);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(8).map(|b| (n, b)))
                .ok_or_else(|| Error::DimOverflow(name.clone()))?;
            let payload = r.take(len.1, &name)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if bundle.arrays.contains_key(&name) {
                return Err(Error::DuplicateName(name));
            }
            bundle.arrays.insert(name, NdArray { dims, data });
        }
        let n_meta = r.u32("metadata count")?;
        for _ in 0..n_meta {
            let key = r.str16("metadata key")?;
            let len = r.u32(&key)? as usize;
            let raw = r.take(len, &key)?;
            let value = std::str::from_utf8(raw)
                .map_err(|_| Error::Malformed(format!("metadata {key} is not UTF-8")))?
                .to_string();
            bundle.metadata.insert(key, value);
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(bundle)
    }
}

fn count_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::DimOverflow(what.to_string()))
}

fn write_str16(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::DimOverflow(s.to_string()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::TruncatedFile(format!("while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn str16(&mut self, what: &str) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()) as usize;
        let raw = self.take(len, what)?;
        std::str::from_utf8(raw)
            .map(str::to_string)
            .map_err(|_| Error::Malformed(format!("{what} is not UTF-8")))
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    // write-then-rename so readers never see a partial file
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bundle(path: impl AsRef<Path>, bundle: &MatrixBundle) -> Result<()> {
    write_file(path.as_ref(), &bundle.encode(BUNDLE_MAGIC)?)
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<MatrixBundle> {
    let path = path.as_ref();
    MatrixBundle::decode(&read_file(path)?, BUNDLE_MAGIC).map_err(|e| match e {
        Error::BadMagic(m) => Error::BadMagic(format!("{}: {m}", path.display())),
        other => other,
    })
}
