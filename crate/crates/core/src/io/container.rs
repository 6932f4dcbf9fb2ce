//! `SOMX` files.
//!
//! ```text
//! magic        4 bytes  "SOMX"
//! version      u32 LE
//! entry count  u64 LE   (matrix entries)
//! entries      name (u32 LE byte length + UTF-8), rows u64 LE, cols u64 LE,
//!              rows * cols f64 LE in row-major order
//! metadata     name "__metadata__", u64 LE byte length, UTF-8 `key=value` lines
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SOMX";
pub const FORMAT_VERSION: u32 = 1;
pub const METADATA_ENTRY: &str = "__metadata__";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixContainer {
    entries: Vec<(String, DMatrix<f64>)>,
    metadata: BTreeMap<String, String>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl MatrixContainer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the matrix `name`.
    pub fn insert(&mut self, name: impl Into<String>, m: DMatrix<f64>) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name == METADATA_ENTRY {
            return Err(fmt_err(format!("invalid entry name {name:?}")));
        }
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = m,
            None => self.entries.push((name, m)),
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn require(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.get(name).ok_or_else(|| fmt_err(format!("missing entry {name:?}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> Result<()> {
        let value = value.to_string();
        if key.is_empty() || key.contains(['=', '\n', '\r']) || value.contains(['\n', '\r']) {
            return Err(fmt_err(format!("invalid metadata pair {key:?} = {value:?}")));
        }
        self.metadata.insert(key.to_string(), value);
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| fmt_err(format!("missing metadata key {key:?}")))
    }

    pub fn parse_meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require_meta(key)?;
        raw.parse()
            .map_err(|_| fmt_err(format!("metadata {key:?} has unparsable value {raw:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        let put_name = |out: &mut Vec<u8>, name: &str| {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        };
        for (name, m) in &self.entries {
            put_name(&mut out, name);
            out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.extend_from_slice(&m[(i, j)].to_le_bytes());
                }
            }
        }
        let text: String = self.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_name(&mut out, METADATA_ENTRY);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(fmt_err("bad magic bytes"));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(fmt_err(format!("unsupported format version {version}")));
        }
        let count = r.u64()?;
        let mut c = MatrixContainer::new();
        for _ in 0..count {
            let name = r.name()?;
            let rows = r.u64()?;
            let cols = r.u64()?;
            let len = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .filter(|n| *n <= r.remaining() as u64)
                .ok_or_else(|| fmt_err(format!("entry {name:?} declares {rows}x{cols} beyond the payload")))?;
            let payload = r.take(len as usize)?;
            let (rows, cols) = (rows as usize, cols as usize);
            let mut m = DMatrix::zeros(rows, cols);
            for (k, chunk) in payload.chunks_exact(8).enumerate() {
                m[(k / cols, k % cols)] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
            if c.get(&name).is_some() {
                return Err(fmt_err(format!("duplicate entry {name:?}")));
            }
            c.insert(name, m)?;
        }
        if r.name()? != METADATA_ENTRY {
            return Err(fmt_err("metadata entry missing"));
        }
        let len = r.u64()?;
        if len > r.remaining() as u64 {
            return Err(fmt_err("metadata length beyond the payload"));
        }
        let text = std::str::from_utf8(r.take(len as usize)?).map_err(|_| fmt_err("metadata is not UTF-8"))?;
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt_err(format!("metadata line without '=': {line:?}")))?;
            c.set_meta(k, v)?;
        }
        if r.remaining() != 0 {
            return Err(fmt_err(format!("{} trailing bytes", r.remaining())));
        }
        Ok(c)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(fmt_err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn name(&mut self) -> Result<String> {
        let len = u32::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| fmt_err("entry name is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_zero_and_layout() {
        let mut c = MatrixContainer::new();
        c.insert("a", DMatrix::from_row_slice(1, 2, &[-0.0, 1.5])).unwrap();
        c.set_meta("n", 2).unwrap();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"SOMX");
        let back = MatrixContainer::from_bytes(&bytes).unwrap();
        assert!(back.get("a").unwrap()[(0, 0)].is_sign_negative());
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.meta("n"), Some("2"));
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut c = MatrixContainer::new();
        c.insert("a", DMatrix::zeros(3, 3)).unwrap();
        let bytes = c.to_bytes();
        assert!(MatrixContainer::from_bytes(&bytes[..bytes.len() - 30]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(MatrixContainer::from_bytes(&extra).is_err());
    }
}
