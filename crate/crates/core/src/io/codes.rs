//! `VPQC` code files: header (version, n_videos, S, m), then each video's
//! packed code (`ceil(S·m/8)` bytes, indices packed LSB-first; one byte per
//! index when m = 8), then a string table of `u32` length + UTF-8 id per video.

use std::io::Write;
use std::path::Path;

use super::{atomic_write, BinReader, ReadOptions, FORMAT_VERSION};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VPQC";

/// Bit-packed PQ codes for a batch of vectors, `S` indices of `bits` each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    n_sub: usize,
    bits: u32,
    n: usize,
    bytes: Vec<u8>,
}

impl PackedCodes {
    pub fn new(n_sub: usize, bits: u32) -> Result<Self> {
        if !(1..=16).contains(&bits) || n_sub == 0 {
            return Err(Error::Parameter(format!("invalid code layout S={n_sub} m={bits}")));
        }
        Ok(PackedCodes {
            n_sub,
            bits,
            n: 0,
            bytes: Vec::new(),
        })
    }

    pub fn from_bytes(n_sub: usize, bits: u32, n: usize, bytes: Vec<u8>) -> Result<Self> {
        let mut c = Self::new(n_sub, bits)?;
        if bytes.len() != n * c.bytes_per_code() {
            return Err(Error::Corruption(format!(
                "{} code bytes for {n} codes of {} bytes",
                bytes.len(),
                c.bytes_per_code()
            )));
        }
        c.n = n;
        c.bytes = bytes;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Storage bytes per vector: exactly `S·m/8` rounded up.
    pub fn bytes_per_code(&self) -> usize {
        (self.n_sub * self.bits as usize).div_ceil(8)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn raw(&self, i: usize) -> &[u8] {
        let b = self.bytes_per_code();
        &self.bytes[i * b..(i + 1) * b]
    }

    pub fn push(&mut self, indices: &[u16]) -> Result<()> {
        if indices.len() != self.n_sub {
            return Err(Error::Shape(format!("code has {} indices, expected {}", indices.len(), self.n_sub)));
        }
        let limit = 1u32 << self.bits;
        if let Some(&bad) = indices.iter().find(|&&i| (i as u32) >= limit) {
            return Err(Error::Parameter(format!("index {bad} does not fit in {} bits", self.bits)));
        }
        let start = self.bytes.len();
        self.bytes.resize(start + self.bytes_per_code(), 0);
        let out = &mut self.bytes[start..];
        if self.bits == 8 {
            for (o, &i) in out.iter_mut().zip(indices) {
                *o = i as u8;
            }
        } else {
            let mut bitpos = 0usize;
            for &i in indices {
                for b in 0..self.bits as usize {
                    if (i >> b) & 1 == 1 {
                        out[(bitpos + b) / 8] |= 1 << ((bitpos + b) % 8);
                    }
                }
                bitpos += self.bits as usize;
            }
        }
        self.n += 1;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Vec<u16> {
        let raw = self.raw(i);
        if self.bits == 8 {
            return raw.iter().map(|&b| b as u16).collect();
        }
        let bits = self.bits as usize;
        (0..self.n_sub)
            .map(|s| {
                let mut v = 0u16;
                for b in 0..bits {
                    let p = s * bits + b;
                    if (raw[p / 8] >> (p % 8)) & 1 == 1 {
                        v |= 1 << b;
                    }
                }
                v
            })
            .collect()
    }
}

/// Codes plus the video id of each row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeFile {
    pub ids: Vec<String>,
    pub codes: PackedCodes,
}

pub fn write_codes(path: impl AsRef<Path>, file: &CodeFile) -> Result<()> {
    if file.ids.len() != file.codes.len() {
        return Err(Error::Shape(format!(
            "{} ids for {} codes",
            file.ids.len(),
            file.codes.len()
        )));
    }
    let c = &file.codes;
    let header = [c.len(), c.n_sub(), c.bits() as usize]
        .iter()
        .map(|&v| u32::try_from(v).map_err(|_| Error::Shape("code header exceeds u32".into())))
        .collect::<Result<Vec<u32>>>()?;
    atomic_write(path.as_ref(), |w| {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for h in &header {
            w.write_all(&h.to_le_bytes())?;
        }
        w.write_all(c.as_bytes())?;
        for id in &file.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        Ok(())
    })
}

pub fn read_codes(path: impl AsRef<Path>) -> Result<CodeFile> {
    let path = path.as_ref();
    let opts = ReadOptions::default();
    let mut r = BinReader::open(path, MAGIC)?;
    let n = r.u32()? as usize;
    let n_sub = r.u32()? as usize;
    let bits = r.u32()?;
    if !(1..=16).contains(&bits) || n_sub == 0 {
        return Err(Error::Format(format!("{}: invalid S={n_sub} m={bits}", path.display())));
    }
    let per = (n_sub * bits as usize).div_ceil(8) as u64;
    let bytes = r.bytes(per * n as u64, &opts)?;
    let codes = PackedCodes::from_bytes(n_sub, bits, n, bytes)?;
    let mut ids = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = r.u32()? as u64;
        let raw = r.bytes(len, &opts)?;
        ids.push(String::from_utf8(raw).map_err(|_| Error::Format("video id is not UTF-8".into()))?);
    }
    r.expect_end()?;
    Ok(CodeFile { ids, codes })
}
