//! ℓ2 normalization and PCA (optionally whitened) for frame descriptors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde_json::json;

use crate::error::{check_finite, Error, Result};
use crate::io::{DescriptorSet, FloatBlock, ModelFile, ModelKind};
use crate::par;

pub const DEFAULT_WHITEN_EPS: f64 = 1e-8;

/// Scale `v` to unit ℓ2 norm. The zero vector is returned unchanged.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>> {
    check_finite(v)?;
    let mut out = v.to_vec();
    l2_normalize_in_place(&mut out);
    Ok(out)
}

pub(crate) fn l2_normalize_in_place(v: &mut [f32]) {
    let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / n) as f32;
        }
    }
}

/// ℓ2-normalize every row of a set.
pub fn l2_normalize_rows(set: &DescriptorSet) -> DescriptorSet {
    let mut data = set.as_slice().to_vec();
    par::for_each_chunk_mut(&mut data, set.dim() * 256, |_, chunk| {
        for row in chunk.chunks_exact_mut(set.dim()) {
            l2_normalize_in_place(row);
        }
    });
    DescriptorSet::from_raw(set.n_items(), set.dim(), data)
}

/// The standard frame pipeline ahead of encoding: ℓ2-normalize every row,
/// then project with `pca` when given.
pub fn prepare_frames(frames: &DescriptorSet, pca: Option<&PcaModel>) -> Result<DescriptorSet> {
    let normalized = l2_normalize_rows(frames);
    match pca {
        Some(m) => m.transform(&normalized),
        None => Ok(normalized),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    input_dim: usize,
    output_dim: usize,
    mean: Vec<f32>,
    /// `input_dim × output_dim`, row-major; column j is the j-th principal direction.
    projection: Vec<f32>,
    eigenvalues: Vec<f32>,
    whiten: bool,
    eps: f64,
}

impl PcaModel {
    pub fn new(
        mean: Vec<f32>,
        projection: Vec<f32>,
        eigenvalues: Vec<f32>,
        whiten: bool,
        eps: f64,
    ) -> Result<Self> {
        let d = mean.len();
        let d_out = eigenvalues.len();
        if d == 0 || d_out == 0 || d_out > d || projection.len() != d * d_out {
            return Err(Error::Shape(format!(
                "pca mean {d}, eigenvalues {d_out}, projection {}",
                projection.len()
            )));
        }
        check_finite(&mean)?;
        check_finite(&projection)?;
        check_finite(&eigenvalues)?;
        if eigenvalues.iter().any(|&e| e < 0.0) || eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Parameter("eigenvalues must be non-negative and non-increasing".into()));
        }
        if !(eps >= 0.0) {
            return Err(Error::Parameter("whitening eps must be >= 0".into()));
        }
        Ok(PcaModel {
            input_dim: d,
            output_dim: d_out,
            mean,
            projection,
            eigenvalues,
            whiten,
            eps,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    pub fn eigenvalues(&self) -> &[f32] {
        &self.eigenvalues
    }

    pub fn whiten(&self) -> bool {
        self.whiten
    }

    /// Entry (row i, column j) of the projection matrix.
    pub fn component(&self, i: usize, j: usize) -> f32 {
        self.projection[i * self.output_dim + j]
    }

    /// `Pᵀ(x − mean)`, divided by `sqrt(λ + eps)` per output when whitening.
    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "pca input has length {}, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        check_finite(x)?;
        let mut out = vec![0f32; self.output_dim];
        let mut acc = vec![0f64; self.output_dim];
        self.apply_into(x, &mut acc, &mut out);
        Ok(out)
    }

    fn apply_into(&self, x: &[f32], acc: &mut [f64], out: &mut [f32]) {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (i, (&xi, &mi)) in x.iter().zip(&self.mean).enumerate() {
            let c = xi as f64 - mi as f64;
            if c == 0.0 {
                continue;
            }
            let row = &self.projection[i * self.output_dim..(i + 1) * self.output_dim];
            for (a, &p) in acc.iter_mut().zip(row) {
                *a += c * p as f64;
            }
        }
        for (j, (o, &a)) in out.iter_mut().zip(acc.iter()).enumerate() {
            *o = if self.whiten {
                (a / (self.eigenvalues[j] as f64 + self.eps).sqrt()) as f32
            } else {
                a as f32
            };
        }
    }

    /// Apply to every row.
    pub fn transform(&self, set: &DescriptorSet) -> Result<DescriptorSet> {
        if set.dim() != self.input_dim {
            return Err(Error::Shape(format!(
                "descriptor dim {} vs pca input {}",
                set.dim(),
                self.input_dim
            )));
        }
        let d_out = self.output_dim;
        let mut data = vec![0f32; set.n_items() * d_out];
        par::for_each_chunk_mut(&mut data, d_out * 256, |ci, chunk| {
            let mut acc = vec![0f64; d_out];
            for (r, out) in chunk.chunks_exact_mut(d_out).enumerate() {
                self.apply_into(set.row(ci * 256 + r), &mut acc, out);
            }
        });
        Ok(DescriptorSet::from_raw(set.n_items(), d_out, data))
    }

    pub fn to_model_file(&self) -> ModelFile {
        let params = json!({
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "whiten": self.whiten,
            "eps": self.eps,
            "eigenvalues": self.eigenvalues,
        });
        ModelFile::new(
            ModelKind::Pca,
            params.as_object().cloned().unwrap_or_default(),
            vec![
                FloatBlock::new("mean", vec![self.input_dim], self.mean.clone()),
                FloatBlock::new("projection", vec![self.input_dim, self.output_dim], self.projection.clone()),
            ],
        )
    }

    pub fn from_model_file(mut m: ModelFile) -> Result<Self> {
        m.expect_kind(ModelKind::Pca)?;
        m.validate()?;
        let whiten = m.bool_param("whiten")?;
        let eps = m.f64_param("eps")?;
        let eigenvalues = m
            .param("eigenvalues")?
            .as_array()
            .ok_or_else(|| Error::Format("eigenvalues must be an array".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .map(|x| x as f32)
                    .ok_or_else(|| Error::Format("eigenvalue is not a number".into()))
            })
            .collect::<Result<Vec<f32>>>()?;
        let mean = m.take_block("mean")?;
        let projection = m.take_block("projection")?;
        PcaModel::new(mean, projection, eigenvalues, whiten, eps).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Fit PCA on (already ℓ2-normalized) training rows.
///
/// Covariance uses the `n − 1` divisor. Each principal direction's sign is
/// fixed so that its largest-magnitude entry is positive.
pub fn fit_pca(train: &DescriptorSet, d_out: usize, whiten: bool, eps: f64) -> Result<PcaModel> {
    let n = train.n_items();
    let d = train.dim();
    if d_out == 0 || d_out > d {
        return Err(Error::Parameter(format!("output dim {d_out} must be in 1..={d}")));
    }
    if n <= d_out {
        return Err(Error::InsufficientData(format!(
            "pca needs more than {d_out} rows, got {n}"
        )));
    }

    let mut mean = vec![0f64; d];
    for row in train.rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    // XᵀX over row chunks, sequential so the sum order is fixed.
    let mut cov = DMatrix::<f64>::zeros(d, d);
    const CHUNK: usize = 1024;
    for range in par::chunk_ranges(n, CHUNK) {
        let rows = range.len();
        let chunk = DMatrix::<f64>::from_fn(rows, d, |r, c| train.row(range.start + r)[c] as f64 - mean[c]);
        cov.gemm_tr(1.0, &chunk, &chunk, 1.0);
    }
    cov /= (n - 1) as f64;
    // symmetrize away round-off
    let cov = (&cov + cov.transpose()) * 0.5;

    let total_var: f64 = cov.diagonal().iter().sum();
    if !(total_var > 0.0) || !total_var.is_finite() {
        return Err(Error::Degenerate("training data has zero variance".into()));
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut projection = vec![0f32; d * d_out];
    let mut eigenvalues = Vec::with_capacity(d_out);
    for (j, &src) in order.iter().take(d_out).enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..d {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            projection[i * d_out + j] = (sign * col[i]) as f32;
        }
        eigenvalues.push(eig.eigenvalues[src].max(0.0) as f32);
    }
    // f32 rounding can break monotonicity between nearly equal eigenvalues
    for j in 1..eigenvalues.len() {
        if eigenvalues[j] > eigenvalues[j - 1] {
            eigenvalues[j] = eigenvalues[j - 1];
        }
    }

    PcaModel::new(
        mean.iter().map(|&m| m as f32).collect(),
        projection,
        eigenvalues,
        whiten,
        eps,
    )
}
