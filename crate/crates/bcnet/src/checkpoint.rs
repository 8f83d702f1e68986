//! Named-tensor checkpoint archive.
//!
//! Layout: magic "BCNT", format version u32, entry count u32, then per entry
//! name length u16 + UTF-8 name, rank u8, dims u32[], payload f32
//! little-endian; trailing CRC-32 of all preceding bytes.

use std::path::Path;

use crate::crc32::crc32;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BCNT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub entries: Vec<Entry>,
}

impl Archive {
    pub fn push(&mut self, name: &str, dims: &[usize], data: Vec<f32>) {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        self.entries.push(Entry {
            name: name.to_string(),
            dims: dims.to_vec(),
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let name = e.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Archive> {
        let fail = |msg: &str| Error::format(origin, msg);
        if bytes.len() < 16 {
            return Err(fail("file too short"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail("bad magic"));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32(body) != stored {
            return Err(fail("CRC mismatch"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(fail(&format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut pos = 12usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > body.len() {
                return Err(Error::format(origin, "truncated entry"));
            }
            let s = &body[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(nlen)?)
                .map_err(|_| Error::format(origin, "non-UTF8 name"))?
                .to_string();
            let rank = take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
            }
            let n: usize = dims.iter().product();
            let raw = take(4 * n)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(Entry { name, dims, data });
        }
        Ok(Archive { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Archive> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Archive::from_bytes(&bytes, &path.display().to_string())
    }
}

/// UTF-8 text stored as one byte per f32 value, for config echo entries.
pub fn text_to_f32(text: &str) -> Vec<f32> {
    text.bytes().map(|b| b as f32).collect()
}

pub fn f32_to_text(data: &[f32]) -> Option<String> {
    let bytes: Option<Vec<u8>> = data
        .iter()
        .map(|&v| {
            if (0.0..256.0).contains(&v) && v.fract() == 0.0 {
                Some(v as u8)
            } else {
                None
            }
        })
        .collect();
    String::from_utf8(bytes?).ok()
}
