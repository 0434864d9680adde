use std::path::Path;

use super::{atomic_write, write_f32s, BinReader, ReadOptions, FORMAT_VERSION};
use crate::error::{check_finite, Error, Result};

pub const MAGIC: &[u8; 4] = b"VDSC";

/// Row-major `n_items × dim` matrix of f32 descriptors.
///
/// Used for frame descriptors, latent concept descriptors, encoded video
/// representations (one row each) and feature matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    n_items: usize,
    dim: usize,
    data: Vec<f32>,
}

impl DescriptorSet {
    pub fn new(n_items: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("descriptor dimension must be >= 1".into()));
        }
        if n_items.checked_mul(dim) != Some(data.len()) {
            return Err(Error::Shape(format!(
                "{} values do not form a {n_items}x{dim} matrix",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(DescriptorSet { n_items, dim, data })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(0, dim, Vec::new())
    }

    /// One-row set, the on-disk form of a video representation.
    pub fn single(row: Vec<f32>) -> Result<Self> {
        let dim = row.len();
        Self::new(1, dim, row)
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::EmptyInput("no rows".into()));
        };
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Shape(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    /// Stack sets with a common dimension, preserving order.
    pub fn concat(sets: &[DescriptorSet]) -> Result<Self> {
        let Some(first) = sets.first() else {
            return Err(Error::EmptyInput("no descriptor sets to concatenate".into()));
        };
        let dim = first.dim;
        let mut data = Vec::with_capacity(sets.iter().map(|s| s.data.len()).sum());
        for s in sets {
            if s.dim != dim {
                return Err(Error::Shape(format!("dimension {} vs {dim}", s.dim)));
            }
            data.extend_from_slice(&s.data);
        }
        Ok(DescriptorSet {
            n_items: data.len() / dim,
            dim,
            data,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.n_items == 0
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> DescriptorSet {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        DescriptorSet {
            n_items: indices.len(),
            dim: self.dim,
            data,
        }
    }

    /// Columns `start..start+len` of every row.
    pub fn column_slice(&self, start: usize, len: usize) -> DescriptorSet {
        let mut data = Vec::with_capacity(self.n_items * len);
        for r in self.rows() {
            data.extend_from_slice(&r[start..start + len]);
        }
        DescriptorSet {
            n_items: self.n_items,
            dim: len,
            data,
        }
    }

    /// Build a set row by row from an infallible, already-finite map.
    pub(crate) fn from_raw(n_items: usize, dim: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(n_items * dim, data.len());
        DescriptorSet { n_items, dim, data }
    }
}

pub fn read_descriptors(path: impl AsRef<Path>) -> Result<DescriptorSet> {
    read_descriptors_with(path, &ReadOptions::default())
}

pub fn read_descriptors_with(path: impl AsRef<Path>, opts: &ReadOptions) -> Result<DescriptorSet> {
    let path = path.as_ref();
    let mut r = BinReader::open(path, MAGIC)?;
    let n_items = r.u32()? as u64;
    let dim = r.u32()? as u64;
    if dim == 0 {
        return Err(Error::Format(format!("{}: dimension 0", path.display())));
    }
    let data = r.f32s(n_items * dim, opts)?;
    r.expect_end()?;
    DescriptorSet::new(n_items as usize, dim as usize, data)
}

pub fn write_descriptors(path: impl AsRef<Path>, set: &DescriptorSet) -> Result<()> {
    let n = u32::try_from(set.n_items).map_err(|_| Error::Shape("too many rows for u32 header".into()))?;
    let d = u32::try_from(set.dim).map_err(|_| Error::Shape("dimension exceeds u32".into()))?;
    atomic_write(path.as_ref(), |w| {
        use std::io::Write;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&d.to_le_bytes())?;
        write_f32s(w, &set.data)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_file(dir: &Path, header: &[u32], floats: &[f32]) -> std::path::PathBuf {
        let mut bytes = MAGIC.to_vec();
        for h in header {
            bytes.extend_from_slice(&h.to_le_bytes());
        }
        for f in floats {
            bytes.extend_from_slice(&f.to_le_bytes());
        }
        let p = dir.join("x.vdsc");
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn decodes_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw_file(dir.path(), &[1, 2, 3], &[1., 2., 3., 4., 5., 6.]);
        let s = read_descriptors(&p).unwrap();
        assert_eq!((s.n_items(), s.dim()), (2, 3));
        assert_eq!(s.row(1), &[4., 5., 6.]);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw_file(dir.path(), &[1, 2, 3], &[1., -2.5, 3., 4e-9, 5., 6.]);
        let s = read_descriptors(&p).unwrap();
        let q = dir.path().join("y.vdsc");
        write_descriptors(&q, &s).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw_file(dir.path(), &[1, 5, 2], &[0.0; 8]);
        assert!(matches!(read_descriptors(&p), Err(Error::Corruption(_))));
    }

    #[test]
    fn trailing_bytes_are_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw_file(dir.path(), &[1, 1, 2], &[0.0; 3]);
        assert!(matches!(read_descriptors(&p), Err(Error::Corruption(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad");
        std::fs::write(&p, b"XXXX\x01\0\0\0").unwrap();
        assert!(matches!(read_descriptors(&p), Err(Error::Format(_))));
        let p = raw_file(dir.path(), &[2, 0, 1], &[]);
        assert!(matches!(read_descriptors(&p), Err(Error::Format(_))));
    }

    #[test]
    fn nan_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw_file(dir.path(), &[1, 2, 2], &[0., 1., f32::NAN, 2.]);
        match read_descriptors(&p) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn payload_cap_rejects_before_allocating() {
        let dir = tempfile::tempdir().unwrap();
        let p = raw_file(dir.path(), &[1, u32::MAX, u32::MAX], &[]);
        assert!(matches!(read_descriptors(&p), Err(Error::Format(_))));
        let p = raw_file(dir.path(), &[1, 4, 4], &[0.0; 16]);
        let tiny = ReadOptions { max_payload_bytes: 32 };
        assert!(matches!(read_descriptors_with(&p, &tiny), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn roundtrip(n in 0usize..6, d in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let s = DescriptorSet::new(n, d, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.vdsc");
            write_descriptors(&p, &s).unwrap();
            prop_assert_eq!(read_descriptors(&p).unwrap(), s);
        }
    }
}
