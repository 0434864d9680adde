//! Exponential kernels `K(x, y) = exp(−Dist(x, y) / (A·σ²))` over χ² or
//! half squared Euclidean distances, and SVMs on precomputed kernels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::signed_labels;
use super::smo::{PrecomputedQ, Smo, Step};
use crate::error::{check_finite, Error, Result};
use crate::io::{DescriptorSet, FloatBlock, ModelFile, ModelKind};
use crate::par;

pub const CHI2_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    ExpChi2,
    Rbf,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::ExpChi2 => "exp_chi2",
            KernelKind::Rbf => "rbf",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp_chi2" | "exp-chi2" | "chi2" => Ok(KernelKind::ExpChi2),
            "rbf" => Ok(KernelKind::Rbf),
            other => Err(Error::Parameter(format!("unknown kernel {other:?}"))),
        }
    }
}

fn same_len(x: &[f32], y: &[f32]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    Ok(())
}

/// `½ Σ (x_d − y_d)² / (x_d + y_d + eps)`, defined for non-negative inputs.
pub fn chi2_distance(x: &[f32], y: &[f32], eps: f64) -> Result<f64> {
    same_len(x, y)?;
    let mut acc = 0.0;
    for (d, (&a, &b)) in x.iter().zip(y).enumerate() {
        if a < 0.0 || b < 0.0 {
            return Err(Error::Domain(format!(
                "chi2 distance needs non-negative features, component {d} is {}",
                a.min(b)
            )));
        }
        let (a, b) = (a as f64, b as f64);
        let diff = a - b;
        if diff != 0.0 {
            acc += diff * diff / (a + b + eps);
        }
    }
    Ok(0.5 * acc)
}

/// `½ Σ (x_d − y_d)²`.
pub fn rbf_distance(x: &[f32], y: &[f32]) -> Result<f64> {
    same_len(x, y)?;
    Ok(0.5 * crate::math::sq_dist(x, y))
}

pub fn distance(kind: KernelKind, x: &[f32], y: &[f32]) -> Result<f64> {
    match kind {
        KernelKind::ExpChi2 => chi2_distance(x, y, CHI2_EPS),
        KernelKind::Rbf => rbf_distance(x, y),
    }
}

/// Distances between every row of `a` and every row of `b`, `[na, nb]`.
pub fn distance_matrix(a: &DescriptorSet, b: &DescriptorSet, kind: KernelKind) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("row dims {} and {}", a.dim(), b.dim())));
    }
    let rows = par::map_range(a.n_items(), |i| {
        (0..b.n_items())
            .map(|j| distance(kind, a.row(i), b.row(j)))
            .collect::<Result<Vec<f64>>>()
    });
    let mut out = Vec::with_capacity(a.n_items() * b.n_items());
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// Symmetric `[n, n]` distance matrix with an exactly mirrored lower half.
pub fn pairwise_distances(x: &DescriptorSet, kind: KernelKind) -> Result<Vec<f64>> {
    let n = x.n_items();
    let upper = par::map_range(n, |i| {
        (i + 1..n)
            .map(|j| distance(kind, x.row(i), x.row(j)))
            .collect::<Result<Vec<f64>>>()
    });
    let mut d = vec![0f64; n * n];
    for (i, r) in upper.into_iter().enumerate() {
        for (off, v) in r?.into_iter().enumerate() {
            let j = i + 1 + off;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(d)
}

/// Mean distance over unordered distinct pairs of `subset` in a pairwise
/// matrix of side `n`.
pub fn mean_distance_subset(d: &[f64], n: usize, subset: &[usize]) -> Result<f64> {
    let m = subset.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!("mean distance needs at least 2 rows, got {m}")));
    }
    let mut acc = 0.0;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            acc += d[i * n + j];
        }
    }
    Ok(acc / (m * (m - 1) / 2) as f64)
}

/// Mean distance over all unordered distinct pairs of rows.
pub fn mean_distance(x: &DescriptorSet, kind: KernelKind) -> Result<f64> {
    let n = x.n_items();
    if n < 2 {
        return Err(Error::InsufficientData(format!("mean distance needs at least 2 rows, got {n}")));
    }
    let d = pairwise_distances(x, kind)?;
    mean_distance_subset(&d, n, &(0..n).collect::<Vec<_>>())
}

fn check_kernel_params(a: f64, sigma: f64) -> Result<()> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::Parameter(format!("mean distance A must be positive, got {a}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Elementwise `exp(−d / (A·σ²))`.
pub fn kernel_from_distances(d: &[f64], a: f64, sigma: f64) -> Result<Vec<f64>> {
    check_kernel_params(a, sigma)?;
    let scale = 1.0 / (a * sigma * sigma);
    Ok(d.iter().map(|&v| (-v * scale).exp()).collect())
}

/// `K[i][j] = exp(−Dist(a_i, b_j) / (A·σ²))`, row-major `[na, nb]`.
pub fn kernel_matrix(xa: &DescriptorSet, xb: &DescriptorSet, kind: KernelKind, sigma: f64, a: f64) -> Result<Vec<f64>> {
    check_kernel_params(a, sigma)?;
    kernel_from_distances(&distance_matrix(xa, xb, kind)?, a, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSvmParams {
    pub c: f64,
    /// Stop once the maximal KKT violation is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl KernelSvmParams {
    pub fn new(c: f64) -> Self {
        KernelSvmParams {
            c,
            tol: 1e-3,
            max_iter: 10_000_000,
        }
    }
}

/// Dual solution on a precomputed kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSvmSolution {
    /// Unsigned multipliers in `[0, C]`.
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// `Σα − ½ Σ α_i α_j y_i y_j K_ij`.
    pub dual_objective: f64,
    pub kkt_violation: f64,
    pub iterations: usize,
}

impl KernelSvmSolution {
    /// `Σ α_i y_i K(x_i, ·) + b` for one row of kernel values.
    pub fn decision(&self, k_row: &[f64], labels: &[bool]) -> f64 {
        self.alpha
            .iter()
            .zip(labels)
            .zip(k_row)
            .map(|((&a, &l), &k)| if l { a * k } else { -a * k })
            .sum::<f64>()
            + self.bias
    }
}

/// Soft-margin SVM on a precomputed symmetric `[n, n]` kernel.
pub fn train_kernel_svm(k: &[f64], labels: &[bool], params: &KernelSvmParams) -> Result<KernelSvmSolution> {
    let n = labels.len();
    if k.len() != n * n {
        return Err(Error::Shape(format!("kernel has {} entries for {n} labels", k.len())));
    }
    if !(params.c.is_finite() && params.c > 0.0) {
        return Err(Error::Parameter(format!("C must be positive, got {}", params.c)));
    }
    if let Some(v) = k.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("kernel entry {v} is not finite")));
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (k[i * n + j], k[j * n + i]);
            if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::Parameter(format!("kernel is not symmetric at ({i}, {j}): {a} vs {b}")));
            }
        }
    }
    let y = signed_labels(labels)?;
    let mut smo = Smo::new(PrecomputedQ { k, y: &y }, y.clone(), params.c);
    let mut iterations = 0;
    while iterations < params.max_iter {
        match smo.step(params.tol) {
            Step::Optimal => break,
            Step::Updated => iterations += 1,
        }
    }
    let kkt_violation = smo.violation();
    if kkt_violation > params.tol {
        log::warn!("kernel svm stopped after {iterations} iterations with KKT violation {kkt_violation:.3e}");
    }
    Ok(KernelSvmSolution {
        bias: smo.bias(),
        dual_objective: smo.dual_objective(),
        alpha: smo.alpha.clone(),
        kkt_violation,
        iterations,
    })
}

/// Kernel SVM with its support vectors, ready for prediction on new rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSvmModel {
    kernel: KernelKind,
    sigma: f64,
    a: f64,
    c: f64,
    bias: f64,
    support_vectors: DescriptorSet,
    /// `α_i y_i` per support vector.
    dual_coefs: Vec<f32>,
}

impl KernelSvmModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel: KernelKind,
        sigma: f64,
        a: f64,
        c: f64,
        bias: f64,
        support_vectors: DescriptorSet,
        dual_coefs: Vec<f32>,
    ) -> Result<Self> {
        check_kernel_params(a, sigma)?;
        if !(c.is_finite() && c > 0.0) || !bias.is_finite() {
            return Err(Error::Parameter(format!("invalid C={c} or bias={bias}")));
        }
        if dual_coefs.len() != support_vectors.n_items() {
            return Err(Error::Shape(format!(
                "{} dual coefficients for {} support vectors",
                dual_coefs.len(),
                support_vectors.n_items()
            )));
        }
        check_finite(&dual_coefs)?;
        if let Some(v) = dual_coefs.iter().find(|v| v.abs() as f64 > c * (1.0 + 1e-6)) {
            return Err(Error::Parameter(format!("dual coefficient {v} exceeds C={c}")));
        }
        Ok(KernelSvmModel {
            kernel,
            sigma,
            a,
            c,
            bias,
            support_vectors,
            dual_coefs,
        })
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean_distance(&self) -> f64 {
        self.a
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn support_vectors(&self) -> &DescriptorSet {
        &self.support_vectors
    }

    pub fn dual_coefs(&self) -> &[f32] {
        &self.dual_coefs
    }

    pub fn dim(&self) -> usize {
        self.support_vectors.dim()
    }

    pub fn predict(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("vector has dim {}, model expects {}", x.len(), self.dim())));
        }
        let scale = 1.0 / (self.a * self.sigma * self.sigma);
        let mut acc = self.bias;
        for (sv, &coef) in self.support_vectors.rows().zip(&self.dual_coefs) {
            acc += coef as f64 * (-distance(self.kernel, sv, x)? * scale).exp();
        }
        Ok(acc)
    }

    pub fn predict_set(&self, set: &DescriptorSet) -> Result<Vec<f64>> {
        par::map_range(set.n_items(), |i| self.predict(set.row(i)))
            .into_iter()
            .collect()
    }

    pub fn to_model_file(&self) -> ModelFile {
        let n = self.support_vectors.n_items();
        let d = self.support_vectors.dim();
        ModelFile::new(
            ModelKind::Ksvm,
            json!({
                "kernel": self.kernel.as_str(),
                "sigma": self.sigma,
                "A": self.a,
                "C": self.c,
                "bias": self.bias,
                "dim": d,
                "n_sv": n,
            })
            .as_object()
            .cloned()
            .unwrap_or_default(),
            vec![
                FloatBlock::new("support_vectors", vec![n, d], self.support_vectors.as_slice().to_vec()),
                FloatBlock::new("dual_coefs", vec![n], self.dual_coefs.clone()),
            ],
        )
    }

    pub fn from_model_file(mut m: ModelFile) -> Result<Self> {
        m.expect_kind(ModelKind::Ksvm)?;
        m.validate()?;
        let kernel: KernelKind = m.str_param("kernel")?.parse()?;
        let sigma = m.f64_param("sigma")?;
        let a = m.f64_param("A")?;
        let c = m.f64_param("C")?;
        let bias = m.f64_param("bias")?;
        let d = m.usize_param("dim")?;
        let n = m.usize_param("n_sv")?;
        let sv = DescriptorSet::new(n, d, m.take_block("support_vectors")?)?;
        KernelSvmModel::new(kernel, sigma, a, c, bias, sv, m.take_block("dual_coefs")?)
    }
}

/// Computes `A` on `x`, builds the kernel, trains, and keeps rows with
/// non-zero multipliers as support vectors.
pub fn fit_kernel_svm(x: &DescriptorSet, labels: &[bool], kind: KernelKind, sigma: f64, c: f64) -> Result<KernelSvmModel> {
    if labels.len() != x.n_items() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), x.n_items())));
    }
    let n = x.n_items();
    let d = pairwise_distances(x, kind)?;
    let a = mean_distance_subset(&d, n, &(0..n).collect::<Vec<_>>())?;
    if a <= 0.0 {
        return Err(Error::Degenerate("all training rows are identical, mean distance is 0".into()));
    }
    let k = kernel_from_distances(&d, a, sigma)?;
    let sol = train_kernel_svm(&k, labels, &KernelSvmParams::new(c))?;
    let keep: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    let coefs = keep
        .iter()
        .map(|&i| (if labels[i] { sol.alpha[i] } else { -sol.alpha[i] }) as f32)
        .collect();
    KernelSvmModel::new(kind, sigma, a, c, sol.bias, x.select(&keep), coefs)
}
