use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::kmeans::{fit_kmeans_traced, KMeansParams};
use crate::error::{check_finite, Error, Result};
use crate::io::{DescriptorSet, FloatBlock, ModelFile, ModelKind};
use crate::math::sq_dist_f64;
use crate::par;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GmmModel {
    k: usize,
    dim: usize,
    means: Vec<f32>,
    variances: Vec<f32>,
    priors: Vec<f32>,
    // derived: log π_k − ½ Σ_d log(2π σ²_kd), and 1/σ²
    log_norm: Vec<f64>,
    inv_var: Vec<f64>,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.dim == other.dim
            && self.means == other.means
            && self.variances == other.variances
            && self.priors == other.priors
    }
}

impl GmmModel {
    pub fn new(k: usize, dim: usize, means: Vec<f32>, variances: Vec<f32>, priors: Vec<f32>) -> Result<Self> {
        if k == 0 || dim == 0 || means.len() != k * dim || variances.len() != k * dim || priors.len() != k {
            return Err(Error::Shape(format!("inconsistent gmm shapes for K={k}, dim={dim}")));
        }
        check_finite(&means)?;
        check_finite(&variances)?;
        check_finite(&priors)?;
        if variances.iter().any(|&v| v <= 0.0) {
            return Err(Error::Parameter("gmm variances must be positive".into()));
        }
        if priors.iter().any(|&p| p <= 0.0) {
            return Err(Error::Parameter("gmm priors must be positive".into()));
        }
        let total: f64 = priors.iter().map(|&p| p as f64).sum();
        if (total - 1.0).abs() > 1e-5 {
            return Err(Error::Parameter(format!("gmm priors sum to {total}")));
        }
        let inv_var: Vec<f64> = variances.iter().map(|&v| 1.0 / v as f64).collect();
        let log_norm = (0..k)
            .map(|j| {
                let log_det: f64 = variances[j * dim..(j + 1) * dim]
                    .iter()
                    .map(|&v| (2.0 * PI * v as f64).ln())
                    .sum();
                (priors[j] as f64).ln() - 0.5 * log_det
            })
            .collect();
        Ok(GmmModel {
            k,
            dim,
            means,
            variances,
            priors,
            log_norm,
            inv_var,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn means(&self) -> &[f32] {
        &self.means
    }

    pub fn variances(&self) -> &[f32] {
        &self.variances
    }

    pub fn priors(&self) -> &[f32] {
        &self.priors
    }

    pub fn mean(&self, j: usize) -> &[f32] {
        &self.means[j * self.dim..(j + 1) * self.dim]
    }

    pub fn variance(&self, j: usize) -> &[f32] {
        &self.variances[j * self.dim..(j + 1) * self.dim]
    }

    /// `log π_k + log N(x; μ_k, σ²_k)` for every component.
    fn joint_log(&self, x: &[f32], out: &mut [f64]) {
        let d = self.dim;
        for (j, o) in out.iter_mut().enumerate() {
            let mu = &self.means[j * d..(j + 1) * d];
            let iv = &self.inv_var[j * d..(j + 1) * d];
            let mut q = 0.0;
            for t in 0..d {
                let z = x[t] as f64 - mu[t] as f64;
                q += z * z * iv[t];
            }
            *o = self.log_norm[j] - 0.5 * q;
        }
    }

    /// Normalize joint log-densities in place into posteriors; returns log p(x).
    fn normalize(log_joint: &mut [f64]) -> f64 {
        let max = log_joint.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in log_joint.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in log_joint.iter_mut() {
            *v /= sum;
        }
        max + sum.ln()
    }

    /// Posterior responsibility of each component for `x`.
    pub fn posteriors(&self, x: &[f32]) -> Result<Vec<f64>> {
        let mut q = vec![0f64; self.k];
        self.posteriors_into(x, &mut q)?;
        Ok(q)
    }

    pub(crate) fn posteriors_into(&self, x: &[f32], q: &mut [f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!("gmm input has length {}, expected {}", x.len(), self.dim)));
        }
        check_finite(x)?;
        self.joint_log(x, q);
        Ok(Self::normalize(q))
    }

    /// Total log-likelihood of a set.
    pub fn log_likelihood(&self, set: &DescriptorSet) -> Result<f64> {
        if set.dim() != self.dim {
            return Err(Error::Shape(format!("set dim {} vs gmm dim {}", set.dim(), self.dim)));
        }
        let mut q = vec![0f64; self.k];
        Ok(set
            .rows()
            .map(|r| {
                self.joint_log(r, &mut q);
                Self::normalize(&mut q)
            })
            .sum())
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile::new(
            ModelKind::Gmm,
            json!({"K": self.k, "dim": self.dim}).as_object().cloned().unwrap_or_default(),
            vec![
                FloatBlock::new("means", vec![self.k, self.dim], self.means.clone()),
                FloatBlock::new("variances", vec![self.k, self.dim], self.variances.clone()),
                FloatBlock::new("priors", vec![self.k], self.priors.clone()),
            ],
        )
    }

    pub fn from_model_file(mut m: ModelFile) -> Result<Self> {
        m.expect_kind(ModelKind::Gmm)?;
        m.validate()?;
        let k = m.usize_param("K")?;
        let dim = m.usize_param("dim")?;
        let means = m.take_block("means")?;
        let variances = m.take_block("variances")?;
        let priors = m.take_block("priors")?;
        GmmModel::new(k, dim, means, variances, priors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Absolute variance floor; `None` uses 1e-4 × mean per-dimension variance.
    pub var_floor: Option<f64>,
    /// Stop when the relative log-likelihood gain falls below this.
    pub tol: f64,
}

impl GmmParams {
    pub fn new(k: usize, seed: u64) -> Self {
        GmmParams {
            k,
            seed,
            max_iter: 100,
            var_floor: None,
            tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmTrace {
    /// Total training log-likelihood under the parameters of each iteration.
    pub log_likelihood: Vec<f64>,
    pub var_floor: f64,
}

pub fn fit_gmm(train: &DescriptorSet, params: &GmmParams) -> Result<GmmModel> {
    fit_gmm_traced(train, params).map(|(m, _)| m)
}

struct Stats {
    n: Vec<f64>,
    sx: Vec<f64>,
    sxx: Vec<f64>,
    ll: f64,
}

impl Stats {
    fn zeros(k: usize, d: usize) -> Self {
        Stats {
            n: vec![0.0; k],
            sx: vec![0.0; k * d],
            sxx: vec![0.0; k * d],
            ll: 0.0,
        }
    }

    fn add(mut self, o: Stats) -> Self {
        self.n.iter_mut().zip(&o.n).for_each(|(a, b)| *a += b);
        self.sx.iter_mut().zip(&o.sx).for_each(|(a, b)| *a += b);
        self.sxx.iter_mut().zip(&o.sxx).for_each(|(a, b)| *a += b);
        self.ll += o.ll;
        self
    }
}

/// Parameters in f64 during EM.
struct Theta {
    means: Vec<f64>,
    vars: Vec<f64>,
    priors: Vec<f64>,
}

impl Theta {
    fn e_step(&self, train: &DescriptorSet, k: usize, chunk: usize) -> Stats {
        let d = train.dim();
        let inv_var: Vec<f64> = self.vars.iter().map(|v| 1.0 / v).collect();
        let log_norm: Vec<f64> = (0..k)
            .map(|j| {
                self.priors[j].ln() - 0.5 * self.vars[j * d..(j + 1) * d].iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>()
            })
            .collect();
        par::chunked_reduce(
            train.n_items(),
            chunk,
            Stats::zeros(k, d),
            |range| {
                let mut s = Stats::zeros(k, d);
                let mut q = vec![0f64; k];
                for i in range {
                    let x = train.row(i);
                    for j in 0..k {
                        let mu = &self.means[j * d..(j + 1) * d];
                        let iv = &inv_var[j * d..(j + 1) * d];
                        let mut acc = 0.0;
                        for t in 0..d {
                            let z = x[t] as f64 - mu[t];
                            acc += z * z * iv[t];
                        }
                        q[j] = log_norm[j] - 0.5 * acc;
                    }
                    s.ll += GmmModel::normalize(&mut q);
                    for j in 0..k {
                        let w = q[j];
                        if w == 0.0 {
                            continue;
                        }
                        s.n[j] += w;
                        let sx = &mut s.sx[j * d..(j + 1) * d];
                        let sxx = &mut s.sxx[j * d..(j + 1) * d];
                        for t in 0..d {
                            let v = x[t] as f64;
                            sx[t] += w * v;
                            sxx[t] += w * v * v;
                        }
                    }
                }
                s
            },
            Stats::add,
        )
    }
}

/// EM for a diagonal GMM, initialized from k-means.
pub fn fit_gmm_traced(train: &DescriptorSet, params: &GmmParams) -> Result<(GmmModel, GmmTrace)> {
    let n = train.n_items();
    let d = train.dim();
    let k = params.k;
    if k == 0 {
        return Err(Error::Parameter("K must be >= 1".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("gmm with K={k} needs at least {k} rows, got {n}")));
    }
    if n < 10 * k {
        log::warn!("fitting a {k}-component gmm on only {n} rows");
    }

    // per-dimension variance, n divisor
    let mut mean = vec![0f64; d];
    for r in train.rows() {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += x as f64 / n as f64;
        }
    }
    let mut var = vec![0f64; d];
    for r in train.rows() {
        for t in 0..d {
            let z = r[t] as f64 - mean[t];
            var[t] += z * z / n as f64;
        }
    }
    let var_floor = match params.var_floor {
        Some(f) if f > 0.0 => f,
        Some(f) => return Err(Error::Parameter(format!("variance floor {f} must be > 0"))),
        None => 1e-4 * var.iter().sum::<f64>() / d as f64,
    };
    if !(var_floor > 0.0) {
        return Err(Error::Degenerate("training data has zero variance".into()));
    }

    let mut theta = init_from_kmeans(train, params, var_floor)?;
    let chunk = super::reduction_chunk(n);
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..params.max_iter.max(1) {
        let stats = theta.e_step(train, k, chunk);
        if !stats.ll.is_finite() {
            return Err(Error::Numeric("gmm log-likelihood is not finite".into()));
        }
        if let Some(&prev) = history.last() {
            let gain = (stats.ll - prev) / prev.abs().max(f64::MIN_POSITIVE);
            history.push(stats.ll);
            if gain < params.tol {
                break;
            }
        } else {
            history.push(stats.ll);
        }
        m_step(&mut theta, &stats, n, d, var_floor);
    }

    let model = GmmModel::new(
        k,
        d,
        theta.means.iter().map(|&v| v as f32).collect(),
        theta.vars.iter().map(|&v| (v as f32).max(var_floor as f32)).collect(),
        f32_priors(&theta.priors),
    )?;
    Ok((
        model,
        GmmTrace {
            log_likelihood: history,
            var_floor,
        },
    ))
}

fn f32_priors(p: &[f64]) -> Vec<f32> {
    let total: f64 = p.iter().sum();
    p.iter().map(|&v| ((v / total) as f32).max(f32::MIN_POSITIVE)).collect()
}

fn m_step(theta: &mut Theta, s: &Stats, n: usize, d: usize, var_floor: f64) {
    let k = theta.priors.len();
    // components with vanishing mass keep their parameters
    let min_mass = 1e-10 * n as f64;
    for j in 0..k {
        theta.priors[j] = (s.n[j] / n as f64).max(1e-12);
        if s.n[j] < min_mass {
            continue;
        }
        for t in 0..d {
            let m = s.sx[j * d + t] / s.n[j];
            let v = s.sxx[j * d + t] / s.n[j] - m * m;
            theta.means[j * d + t] = m;
            theta.vars[j * d + t] = v.max(var_floor);
        }
    }
    let total: f64 = theta.priors.iter().sum();
    theta.priors.iter_mut().for_each(|p| *p /= total);
}

fn init_from_kmeans(train: &DescriptorSet, params: &GmmParams, var_floor: f64) -> Result<Theta> {
    let n = train.n_items();
    let d = train.dim();
    let k = params.k;
    let km = KMeansParams::new(k, params.seed);
    let (cb, _) = fit_kmeans_traced(train, &km)?;
    let mut means: Vec<f64> = cb.centers().iter().map(|&c| c as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x9e37_79b9_7f4a_7c15);

    for attempt in 0..=3 {
        let assign: Vec<usize> = par::map_range(n, |i| {
            let x = train.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..k {
                let dist = sq_dist_f64(x, &means[j * d..(j + 1) * d]);
                if dist < best_d {
                    best_d = dist;
                    best = j;
                }
            }
            best
        });
        let mut counts = vec![0usize; k];
        let mut sum = vec![0f64; k * d];
        let mut sumsq = vec![0f64; k * d];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (t, &x) in train.row(i).iter().enumerate() {
                sum[a * d + t] += x as f64;
                sumsq[a * d + t] += x as f64 * x as f64;
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if empty.is_empty() {
            let mut vars = vec![0f64; k * d];
            for j in 0..k {
                let c = counts[j] as f64;
                for t in 0..d {
                    let m = sum[j * d + t] / c;
                    vars[j * d + t] = (sumsq[j * d + t] / c - m * m).max(var_floor);
                }
            }
            let priors = counts.iter().map(|&c| c as f64 / n as f64).collect();
            return Ok(Theta { means, vars, priors });
        }
        if attempt == 3 {
            break;
        }
        log::warn!("gmm init: {} empty components, re-seeding", empty.len());
        for j in empty {
            let p = rng.random_range(0..n);
            for (t, &x) in train.row(p).iter().enumerate() {
                means[j * d + t] = x as f64;
            }
        }
    }
    Err(Error::Degenerate("gmm initialization left empty components after 3 re-seeds".into()))
}
