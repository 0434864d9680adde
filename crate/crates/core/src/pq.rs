//! Product quantization: sub-vector codebooks, compact codes, and linear
//! scoring straight from codes through per-subspace lookup tables.

use serde_json::json;

use crate::codebook::{fit_kmeans, KMeansParams};
use crate::error::{check_finite, Error, Result};
use crate::io::{DescriptorSet, FloatBlock, ModelFile, ModelKind, PackedCodes};
use crate::math::{dot, sq_dist};
use crate::par;

pub const MAX_BITS: u32 = 16;

/// Storage reduction of a code versus 32-bit floats: `B·32/m`.
pub fn compression_ratio(b: usize, m: u32) -> f64 {
    (b * 32) as f64 / m as f64
}

/// `S = D/B` codebooks of `2^m` centers each, stored `[S, 2^m, B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PqModel {
    dim: usize,
    b: usize,
    m: u32,
    codebooks: Vec<f32>,
}

/// One index per subspace, each `< 2^m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PqCode {
    pub indices: Vec<u16>,
}

fn check_layout(dim: usize, b: usize, m: u32) -> Result<()> {
    if b == 0 || dim == 0 {
        return Err(Error::Parameter(format!("pq needs D > 0 and B > 0, got D={dim} B={b}")));
    }
    if !dim.is_multiple_of(b) {
        return Err(Error::Parameter(format!("D={dim} is not divisible by B={b}")));
    }
    if !(1..=MAX_BITS).contains(&m) {
        return Err(Error::Parameter(format!("m={m} must be in 1..={MAX_BITS}")));
    }
    Ok(())
}

impl PqModel {
    pub fn new(dim: usize, b: usize, m: u32, codebooks: Vec<f32>) -> Result<Self> {
        check_layout(dim, b, m)?;
        let expected = (dim / b) * (1usize << m) * b;
        if codebooks.len() != expected {
            return Err(Error::Shape(format!(
                "{} codebook values, expected {expected} for D={dim} B={b} m={m}",
                codebooks.len()
            )));
        }
        check_finite(&codebooks)?;
        Ok(PqModel { dim, b, m, codebooks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sub_len(&self) -> usize {
        self.b
    }

    pub fn bits(&self) -> u32 {
        self.m
    }

    pub fn n_sub(&self) -> usize {
        self.dim / self.b
    }

    pub fn n_centers(&self) -> usize {
        1 << self.m
    }

    pub fn codebooks(&self) -> &[f32] {
        &self.codebooks
    }

    pub fn center(&self, s: usize, j: usize) -> &[f32] {
        let start = (s * self.n_centers() + j) * self.b;
        &self.codebooks[start..start + self.b]
    }

    fn sub_codebook(&self, s: usize) -> &[f32] {
        let len = self.n_centers() * self.b;
        &self.codebooks[s * len..(s + 1) * len]
    }

    pub fn compression_ratio(&self) -> f64 {
        compression_ratio(self.b, self.m)
    }

    pub fn empty_codes(&self) -> PackedCodes {
        PackedCodes::new(self.n_sub(), self.m).expect("layout validated at construction")
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile::new(
            ModelKind::Pq,
            json!({"dim": self.dim, "B": self.b, "m": self.m})
                .as_object()
                .cloned()
                .unwrap_or_default(),
            vec![FloatBlock::new(
                "codebooks",
                vec![self.n_sub(), self.n_centers(), self.b],
                self.codebooks.clone(),
            )],
        )
    }

    pub fn from_model_file(mut m: ModelFile) -> Result<Self> {
        m.expect_kind(ModelKind::Pq)?;
        m.validate()?;
        let dim = m.usize_param("dim")?;
        let b = m.usize_param("B")?;
        let bits = m.usize_param("m")? as u32;
        PqModel::new(dim, b, bits, m.take_block("codebooks")?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqParams {
    pub b: usize,
    pub m: u32,
    pub seed: u64,
    /// Lloyd iteration cap for each sub-quantizer.
    pub max_iter: usize,
}

impl PqParams {
    pub fn new(b: usize, m: u32, seed: u64) -> Self {
        PqParams {
            b,
            m,
            seed,
            max_iter: 100,
        }
    }
}

/// Seed for the sub-quantizer of subspace `s`.
fn sub_seed(seed: u64, s: usize) -> u64 {
    seed ^ (s as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// K-means with `K = 2^m` on each `B`-slice of the training rows.
pub fn fit_pq(train: &DescriptorSet, params: &PqParams) -> Result<PqModel> {
    let dim = train.dim();
    check_layout(dim, params.b, params.m)?;
    let k = 1usize << params.m;
    if train.n_items() < k {
        return Err(Error::InsufficientData(format!(
            "pq with m={} needs at least {k} training rows, got {}",
            params.m,
            train.n_items()
        )));
    }
    let b = params.b;
    let books = par::map_range(dim / b, |s| {
        let slice = train.column_slice(s * b, b);
        let kp = KMeansParams {
            max_iter: params.max_iter,
            ..KMeansParams::new(k, sub_seed(params.seed, s))
        };
        fit_kmeans(&slice, &kp)
    });
    let mut codebooks = Vec::with_capacity(dim * k);
    for cb in books {
        codebooks.extend_from_slice(cb?.centers());
    }
    PqModel::new(dim, b, params.m, codebooks)
}

fn nearest(book: &[f32], b: usize, x: &[f32]) -> u16 {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in book.chunks_exact(b).enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best as u16
}

/// Nearest center per subspace; ties go to the lowest index.
pub fn pq_encode(model: &PqModel, x: &[f32]) -> Result<PqCode> {
    if x.len() != model.dim {
        return Err(Error::Shape(format!("vector has dim {}, pq model expects {}", x.len(), model.dim)));
    }
    check_finite(x)?;
    let b = model.b;
    let indices = x
        .chunks_exact(b)
        .enumerate()
        .map(|(s, xs)| nearest(model.sub_codebook(s), b, xs))
        .collect();
    Ok(PqCode { indices })
}

/// Encode every row into a packed code array, rows in order.
pub fn pq_encode_set(model: &PqModel, set: &DescriptorSet) -> Result<PackedCodes> {
    if set.dim() != model.dim {
        return Err(Error::Shape(format!("rows have dim {}, pq model expects {}", set.dim(), model.dim)));
    }
    let codes = par::map_range(set.n_items(), |i| pq_encode(model, set.row(i)));
    let mut packed = model.empty_codes();
    for c in codes {
        packed.push(&c?.indices)?;
    }
    Ok(packed)
}

fn check_code(model_sub: usize, n_centers: usize, code: &[u16]) -> Result<()> {
    if code.len() != model_sub {
        return Err(Error::Shape(format!("code has {} indices, expected {model_sub}", code.len())));
    }
    if let Some(&bad) = code.iter().find(|&&i| i as usize >= n_centers) {
        return Err(Error::Corruption(format!("code index {bad} exceeds {} centers", n_centers)));
    }
    Ok(())
}

/// Concatenation of the indexed centers.
pub fn pq_decode(model: &PqModel, code: &PqCode) -> Result<Vec<f32>> {
    check_code(model.n_sub(), model.n_centers(), &code.indices)?;
    let mut out = Vec::with_capacity(model.dim);
    for (s, &j) in code.indices.iter().enumerate() {
        out.extend_from_slice(model.center(s, j as usize));
    }
    Ok(out)
}

/// Partial dot products `table[s][j] = <center_{s,j}, w_s>` plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLut {
    n_sub: usize,
    n_centers: usize,
    table: Vec<f64>,
    bias: f64,
}

impl ScoreLut {
    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    pub fn n_centers(&self) -> usize {
        self.n_centers
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn entry(&self, s: usize, j: usize) -> f64 {
        self.table[s * self.n_centers + j]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }
}

pub fn build_lut(model: &PqModel, w: &[f32], bias: f64) -> Result<ScoreLut> {
    if w.len() != model.dim {
        return Err(Error::Shape(format!("w has dim {}, pq model expects {}", w.len(), model.dim)));
    }
    check_finite(w)?;
    if !bias.is_finite() {
        return Err(Error::Parameter(format!("bias {bias} is not finite")));
    }
    let b = model.b;
    let k = model.n_centers();
    let mut table = vec![0f64; model.n_sub() * k];
    par::for_each_chunk_mut(&mut table, k, |s, row| {
        let ws = &w[s * b..(s + 1) * b];
        for (j, t) in row.iter_mut().enumerate() {
            *t = dot(model.center(s, j), ws);
        }
    });
    Ok(ScoreLut {
        n_sub: model.n_sub(),
        n_centers: k,
        table,
        bias,
    })
}

/// `Σ_s table[s][code_s] + bias`.
pub fn score_compressed(lut: &ScoreLut, code: &PqCode) -> Result<f64> {
    check_code(lut.n_sub, lut.n_centers, &code.indices)?;
    let mut acc = 0f64;
    for (s, &j) in code.indices.iter().enumerate() {
        acc += lut.entry(s, j as usize);
    }
    Ok(acc + lut.bias)
}

/// Receives the number of table lookups each batch step performs.
pub trait LookupObserver: Sync {
    fn lookups(&self, count: u64);
}

/// Observer that ignores all events.
pub struct NoObserver;

impl LookupObserver for NoObserver {
    fn lookups(&self, _count: u64) {}
}

/// Lookup counter for instrumentation.
#[derive(Debug, Default)]
pub struct LookupCounter(std::sync::atomic::AtomicU64);

impl LookupCounter {
    pub fn total(&self) -> u64 {
        self.0.load(std::sync::atomic::Ordering::Relaxed)
    }
}

impl LookupObserver for LookupCounter {
    fn lookups(&self, count: u64) {
        self.0.fetch_add(count, std::sync::atomic::Ordering::Relaxed);
    }
}

/// Videos per interleaved chunk; also the unit of parallel work.
const VIDEO_CHUNK: usize = 4096;
/// Transpose tile edge.
const TILE: usize = 64;

/// Codes rearranged for batch scoring: videos are grouped in chunks, and
/// within a chunk the indices of each subspace are contiguous, one byte per
/// video. Built once per code set and reused across classifiers. Requires
/// `m ≤ 8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterleavedCodes {
    n: usize,
    n_sub: usize,
    bits: u32,
    data: Vec<u8>,
}

impl InterleavedCodes {
    pub fn from_packed(codes: &PackedCodes) -> Result<Self> {
        if codes.bits() > 8 {
            return Err(Error::Parameter(format!(
                "interleaved scoring needs m <= 8, got m={}",
                codes.bits()
            )));
        }
        let n = codes.len();
        let s = codes.n_sub();
        let mut data = vec![0u8; n * s];
        par::for_each_chunk_mut(&mut data, VIDEO_CHUNK * s, |ci, out| {
            let start = ci * VIDEO_CHUNK;
            let len = out.len() / s;
            if codes.bits() == 8 {
                let raw = &codes.as_bytes()[start * s..(start + len) * s];
                for v0 in (0..len).step_by(TILE) {
                    let v1 = (v0 + TILE).min(len);
                    for t0 in (0..s).step_by(TILE) {
                        let t1 = (t0 + TILE).min(s);
                        for t in t0..t1 {
                            let dst = &mut out[t * len + v0..t * len + v1];
                            for (d, v) in dst.iter_mut().zip(v0..v1) {
                                *d = raw[v * s + t];
                            }
                        }
                    }
                }
            } else {
                for v in 0..len {
                    for (t, &j) in codes.get(start + v).iter().enumerate() {
                        out[t * len + v] = j as u8;
                    }
                }
            }
        });
        Ok(InterleavedCodes {
            n,
            n_sub: s,
            bits: codes.bits(),
            data,
        })
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

    /// Score every video. Equivalent to `score_compressed` per code.
    pub fn score(&self, lut: &ScoreLut) -> Result<Vec<f64>> {
        self.score_observed(lut, &NoObserver)
    }

    pub fn score_observed(&self, lut: &ScoreLut, observer: &dyn LookupObserver) -> Result<Vec<f64>> {
        if self.n_sub != lut.n_sub || (1usize << self.bits) != lut.n_centers {
            return Err(Error::Shape(format!(
                "codes have S={} m={}, table expects S={} with {} centers",
                self.n_sub, self.bits, lut.n_sub, lut.n_centers
            )));
        }
        let s = self.n_sub;
        let mut out = vec![0f64; self.n];
        par::for_each_chunk_mut(&mut out, VIDEO_CHUNK, |ci, acc| {
            let cols = &self.data[ci * VIDEO_CHUNK * s..(ci * VIDEO_CHUNK + acc.len()) * s];
            let count = if self.bits == 8 {
                sweep_bytes(&lut.table, cols, s, acc)
            } else {
                sweep_generic(&lut.table, lut.n_centers, cols, s, acc)
            };
            for a in acc.iter_mut() {
                *a += lut.bias;
            }
            observer.lookups(count);
        });
        Ok(out)
    }
}

/// Adds four subspaces per pass over the chunk. Returns the lookup count.
fn sweep_bytes(table: &[f64], cols: &[u8], n_sub: usize, acc: &mut [f64]) -> u64 {
    let (rows, _) = table.as_chunks::<256>();
    let len = acc.len();
    let mut col_groups = cols.chunks_exact(4 * len);
    for (g, c) in (&mut col_groups).enumerate() {
        let r = &rows[4 * g..4 * g + 4];
        let (c0, rest) = c.split_at(len);
        let (c1, rest) = rest.split_at(len);
        let (c2, c3) = rest.split_at(len);
        for i in 0..len {
            acc[i] += (r[0][c0[i] as usize] + r[1][c1[i] as usize]) + (r[2][c2[i] as usize] + r[3][c3[i] as usize]);
        }
    }
    let done = n_sub - n_sub % 4;
    for (t, c) in col_groups.remainder().chunks_exact(len).enumerate() {
        let r = &rows[done + t];
        for (a, &j) in acc.iter_mut().zip(c) {
            *a += r[j as usize];
        }
    }
    (len * n_sub) as u64
}

fn sweep_generic(table: &[f64], n_centers: usize, cols: &[u8], n_sub: usize, acc: &mut [f64]) -> u64 {
    let len = acc.len();
    for (r, c) in table.chunks_exact(n_centers).zip(cols.chunks_exact(len)) {
        for (a, &j) in acc.iter_mut().zip(c) {
            *a += r[j as usize];
        }
    }
    (len * n_sub) as u64
}

/// Score every packed code. Equivalent to `score_compressed` per code; for
/// repeated scoring of one code set build [`InterleavedCodes`] once instead.
pub fn score_batch(lut: &ScoreLut, codes: &PackedCodes) -> Result<Vec<f64>> {
    score_batch_observed(lut, codes, &NoObserver)
}

pub fn score_batch_observed(lut: &ScoreLut, codes: &PackedCodes, observer: &dyn LookupObserver) -> Result<Vec<f64>> {
    if codes.bits() <= 8 {
        return InterleavedCodes::from_packed(codes)?.score_observed(lut, observer);
    }
    if codes.n_sub() != lut.n_sub || (1usize << codes.bits()) != lut.n_centers {
        return Err(Error::Shape(format!(
            "codes have S={} m={}, table expects S={} with {} centers",
            codes.n_sub(),
            codes.bits(),
            lut.n_sub,
            lut.n_centers
        )));
    }
    let scores = par::map_range(codes.len(), |i| {
        score_compressed(
            lut,
            &PqCode {
                indices: codes.get(i),
            },
        )
    });
    observer.lookups((codes.len() * lut.n_sub) as u64);
    scores.into_iter().collect()
}
