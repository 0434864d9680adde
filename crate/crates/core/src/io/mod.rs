//! Binary and CSV file formats.
//!
//! All binary formats are little-endian and start with a four-byte magic
//! followed by a `u32` version (currently 1). Byte layouts are documented in
//! `FORMATS.md` at the repository root.
//!
//! | magic  | contents                                  |
//! |--------|-------------------------------------------|
//! | `VDSC` | [`DescriptorSet`]: n×d f32 rows           |
//! | `VP5T` | [`Pool5Tensor`]: frames × a × a × M f32   |
//! | `VMDL` | [`ModelFile`]: JSON header + f32 blocks   |
//! | `VPQC` | [`CodeFile`]: packed PQ codes + video ids |
//!
//! Writers go through a temporary file in the destination directory that is
//! renamed into place, so a destination path never holds a partial file.

mod codes;
mod descriptors;
mod model;
mod pool5;
mod table;

pub use codes::{read_codes, write_codes, CodeFile, PackedCodes};
pub use descriptors::{read_descriptors, read_descriptors_with, write_descriptors, DescriptorSet};
pub use model::{decode_model, encode_model, read_model, write_model, FloatBlock, ModelFile, ModelKind};
pub use pool5::{read_pool5, write_pool5, Pool5Frame, Pool5Tensor};
pub use table::{read_labels, read_scores, write_labels, write_scores, LabelFile, ScoreFile};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Default ceiling on the payload size a header may declare (16 GiB).
pub const DEFAULT_MAX_PAYLOAD: u64 = 16 << 30;

#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    pub max_payload_bytes: u64,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            max_payload_bytes: DEFAULT_MAX_PAYLOAD,
        }
    }
}

/// Write a file via temp-file-then-rename in the target directory.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".vidrep-")
        .tempfile_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Reader positioned after a validated magic + version prefix.
pub(crate) struct BinReader {
    inner: BufReader<File>,
    remaining: u64,
    path: String,
}

impl BinReader {
    pub(crate) fn open(path: &Path, magic: &[u8; 4]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut r = BinReader {
            inner: BufReader::new(file),
            remaining: len,
            path: path.display().to_string(),
        };
        let mut got = [0u8; 4];
        r.read_bytes(&mut got)
            .map_err(|_| Error::Format(format!("{}: file too short for magic", r.path)))?;
        if &got != magic {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected {:?}",
                r.path,
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r
            .u32()
            .map_err(|_| Error::Format(format!("{}: missing version", r.path)))?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported version {version}",
                r.path
            )));
        }
        Ok(r)
    }

    pub(crate) fn remaining(&self) -> u64 {
        self.remaining
    }

    fn read_bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        if (buf.len() as u64) > self.remaining {
            return Err(Error::Corruption(format!("{}: unexpected end of file", self.path)));
        }
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::io(self.path.clone(), e))?;
        self.remaining -= buf.len() as u64;
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_bytes(&mut b)
            .map_err(|_| Error::Format(format!("{}: truncated header", self.path)))?;
        Ok(u32::from_le_bytes(b))
    }

    /// Read `len` raw bytes after checking them against the remaining file length.
    pub(crate) fn bytes(&mut self, len: u64, opts: &ReadOptions) -> Result<Vec<u8>> {
        self.check_declared(len, opts)?;
        let mut buf = vec![0u8; len as usize];
        self.read_bytes(&mut buf)?;
        Ok(buf)
    }

    fn check_declared(&self, len: u64, opts: &ReadOptions) -> Result<()> {
        if len > opts.max_payload_bytes {
            return Err(Error::Format(format!(
                "{}: declared payload of {len} bytes exceeds cap of {} bytes",
                self.path, opts.max_payload_bytes
            )));
        }
        if len > self.remaining {
            return Err(Error::Corruption(format!(
                "{}: header declares {len} payload bytes but only {} remain",
                self.path, self.remaining
            )));
        }
        Ok(())
    }

    /// Read `count` little-endian f32 values and reject non-finite ones.
    pub(crate) fn f32s(&mut self, count: u64, opts: &ReadOptions) -> Result<Vec<f32>> {
        let len = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{}: payload size overflows", self.path)))?;
        self.check_declared(len, opts)?;
        let mut out = Vec::with_capacity(count as usize);
        let mut buf = vec![0u8; 1 << 16];
        let mut left = len as usize;
        while left > 0 {
            let take = left.min(buf.len());
            self.read_bytes(&mut buf[..take])?;
            out.extend(
                buf[..take]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
            );
            left -= take;
        }
        crate::error::check_finite(&out)?;
        Ok(out)
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.remaining != 0 {
            return Err(Error::Corruption(format!(
                "{}: {} trailing bytes after declared payload",
                self.path, self.remaining
            )));
        }
        Ok(())
    }
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, data: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(data.len().min(1 << 14) * 4);
    for chunk in data.chunks(1 << 14) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}
