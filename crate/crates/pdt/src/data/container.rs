//! Bit-exact binary tensor container.
//!
//! Layout (all little-endian):
//!   magic "PDTC" | version u16 = 1 | entry count u32 |
//!   per entry: name len u16 | name bytes (UTF-8) | rank u8 |
//!              dims u32 each | payload f64 IEEE-754, row-major
//!
//! Entry names are unique and the declared sizes must exactly consume
//! the file.

use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"PDTC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// An ordered map of named tensors. Order is preserved so that
/// write -> read -> write is byte-identical.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Entry)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(Error::Format(format!("duplicate entry name '{name}'")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Format(format!(
                "entry '{name}': shape {shape:?} implies {numel} values, got {}",
                data.len()
            )));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!("entry name too long ({})", name.len())));
        }
        self.entries.push((name.to_string(), Entry { shape, data }));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
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

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(e.shape.len() as u8);
            for &d in &e.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?} at byte offset 0, expected \"PDTC\"",
                &magic[..4.min(magic.len())]
            )));
        }
        let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version} at byte offset 4"
            )));
        }
        let count = u32::from_le_bytes(r.take(4, "entry count")?.try_into().unwrap());
        let mut out = Container::new();
        for i in 0..count {
            let name_len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
            let name_off = r.pos;
            let name_bytes = r.take(name_len, "name")?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| {
                    Error::Format(format!("entry {i}: name at byte offset {name_off} is not UTF-8"))
                })?
                .to_string();
            let rank = r.take(1, "rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.take(4, "dim")?.try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let payload_off = r.pos;
            let payload = r.take(numel * 8, "payload")?;
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.insert(&name, shape, data).map_err(|e| {
                Error::Format(format!("{e} (entry starting at byte offset {payload_off})"))
            })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes at byte offset {}",
                bytes.len() - r.pos,
                r.pos
            )));
        }
        Ok(out)
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("pdtc.tmp");
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
            f.sync_all().ok();
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated while reading {what} at byte offset {} (need {n} bytes, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
