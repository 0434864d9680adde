use std::path::Path;

use super::{atomic_write, write_f32s, BinReader, ReadOptions, FORMAT_VERSION};
use crate::error::{check_finite, Error, Result};

pub const MAGIC: &[u8; 4] = b"VP5T";

/// Last-pooling-layer activations for a video: `n_frames × a × a × M`,
/// row-major in (frame, row, col, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Pool5Tensor {
    n_frames: usize,
    side: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Borrowed view of one `a × a × M` frame.
#[derive(Debug, Clone, Copy)]
pub struct Pool5Frame<'a> {
    side: usize,
    channels: usize,
    data: &'a [f32],
}

impl Pool5Tensor {
    pub fn new(n_frames: usize, side: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if side == 0 || channels == 0 {
            return Err(Error::Shape("pool5 side and channel count must be >= 1".into()));
        }
        let expect = n_frames
            .checked_mul(side * side)
            .and_then(|v| v.checked_mul(channels));
        if expect != Some(data.len()) {
            return Err(Error::Shape(format!(
                "{} values do not form {n_frames}x{side}x{side}x{channels}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Pool5Tensor {
            n_frames,
            side,
            channels,
            data,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// Spatial side length `a`.
    pub fn side(&self) -> usize {
        self.side
    }

    /// Filter count `M`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Flat payload offset of (frame, row, col, channel).
    pub fn offset(&self, frame: usize, row: usize, col: usize, channel: usize) -> usize {
        ((frame * self.side + row) * self.side + col) * self.channels + channel
    }

    pub fn get(&self, frame: usize, row: usize, col: usize, channel: usize) -> f32 {
        self.data[self.offset(frame, row, col, channel)]
    }

    pub fn frame(&self, i: usize) -> Pool5Frame<'_> {
        let len = self.side * self.side * self.channels;
        Pool5Frame {
            side: self.side,
            channels: self.channels,
            data: &self.data[i * len..(i + 1) * len],
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = Pool5Frame<'_>> {
        (0..self.n_frames).map(move |i| self.frame(i))
    }
}

impl<'a> Pool5Frame<'a> {
    pub fn new(side: usize, channels: usize, data: &'a [f32]) -> Result<Self> {
        if side == 0 || channels == 0 || data.len() != side * side * channels {
            return Err(Error::Shape(format!(
                "{} values do not form a {side}x{side}x{channels} frame",
                data.len()
            )));
        }
        Ok(Pool5Frame { side, channels, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// The `M`-vector at spatial location (row, col).
    pub fn cell(&self, row: usize, col: usize) -> &'a [f32] {
        let start = (row * self.side + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn as_slice(&self) -> &'a [f32] {
        self.data
    }
}

pub fn read_pool5(path: impl AsRef<Path>) -> Result<Pool5Tensor> {
    let path = path.as_ref();
    let opts = ReadOptions::default();
    let mut r = BinReader::open(path, MAGIC)?;
    let n = r.u32()? as u64;
    let a = r.u32()? as u64;
    let m = r.u32()? as u64;
    if a == 0 || m == 0 {
        return Err(Error::Format(format!("{}: zero side or channel count", path.display())));
    }
    let count = n
        .checked_mul(a * a)
        .and_then(|v| v.checked_mul(m))
        .ok_or_else(|| Error::Format("pool5 header overflows".into()))?;
    let data = r.f32s(count, &opts)?;
    r.expect_end()?;
    Pool5Tensor::new(n as usize, a as usize, m as usize, data)
}

pub fn write_pool5(path: impl AsRef<Path>, t: &Pool5Tensor) -> Result<()> {
    let header = [t.n_frames, t.side, t.channels]
        .iter()
        .map(|&v| u32::try_from(v).map_err(|_| Error::Shape("pool5 header exceeds u32".into())))
        .collect::<Result<Vec<u32>>>()?;
    atomic_write(path.as_ref(), |w| {
        use std::io::Write;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for h in &header {
            w.write_all(&h.to_le_bytes())?;
        }
        write_f32s(w, &t.data)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(dir: &Path, header: &[u32], n_floats: usize) -> std::path::PathBuf {
        let mut bytes = MAGIC.to_vec();
        for h in header {
            bytes.extend_from_slice(&h.to_le_bytes());
        }
        for i in 0..n_floats {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        let p = dir.join("t.vp5t");
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn decodes_one_frame_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw(dir.path(), &[1, 1, 2, 3], 12);
        let t = read_pool5(&p).unwrap();
        assert_eq!((t.n_frames(), t.side(), t.channels()), (1, 2, 3));
        assert_eq!(t.offset(0, 1, 0, 2), 8);
        assert_eq!(t.get(0, 1, 0, 2), 8.0);
        assert_eq!(t.frame(0).cell(1, 0), &[6.0, 7.0, 8.0]);
    }

    #[test]
    fn reference_net_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw(dir.path(), &[1, 1, 7, 512], 25088);
        let t = read_pool5(&p).unwrap();
        assert_eq!(t.as_slice().len(), 7 * 7 * 512);
    }

    #[test]
    fn errors_match_descriptor_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw(dir.path(), &[1, 2, 2, 3], 12);
        assert!(matches!(read_pool5(&p), Err(Error::Corruption(_))));
        let p = raw(dir.path(), &[3, 1, 2, 3], 12);
        assert!(matches!(read_pool5(&p), Err(Error::Format(_))));
    }

    #[test]
    fn roundtrip_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw(dir.path(), &[1, 2, 2, 3], 24);
        let t = read_pool5(&p).unwrap();
        let q = dir.path().join("u.vp5t");
        write_pool5(&q, &t).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }
}
