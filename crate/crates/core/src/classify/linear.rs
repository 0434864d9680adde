use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::smo::{CachedQ, Smo, Step};
use super::signed_labels;
use crate::error::{check_finite, Error, Result};
use crate::io::{DescriptorSet, FloatBlock, ModelFile, ModelKind};
use crate::math::dot;
use crate::par;

/// `score(x) = w·x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    w: Vec<f32>,
    bias: f64,
    c: f64,
}

impl LinearClassifier {
    pub fn new(w: Vec<f32>, bias: f64, c: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Shape("classifier has no weights".into()));
        }
        check_finite(&w)?;
        if !bias.is_finite() {
            return Err(Error::Parameter(format!("bias {bias} is not finite")));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Parameter(format!("C must be positive, got {c}")));
        }
        Ok(LinearClassifier { w, bias, c })
    }

    pub fn w(&self) -> &[f32] {
        &self.w
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn predict(&self, x: &[f32]) -> Result<f64> {
        predict_linear(self, x)
    }

    pub fn predict_set(&self, set: &DescriptorSet) -> Result<Vec<f64>> {
        if set.dim() != self.dim() {
            return Err(Error::Shape(format!("rows have dim {}, classifier expects {}", set.dim(), self.dim())));
        }
        Ok(par::map_range(set.n_items(), |i| dot(&self.w, set.row(i)) + self.bias))
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile::new(
            ModelKind::Linsvm,
            json!({"dim": self.dim(), "C": self.c, "bias": self.bias})
                .as_object()
                .cloned()
                .unwrap_or_default(),
            vec![FloatBlock::new("w", vec![self.dim()], self.w.clone())],
        )
    }

    pub fn from_model_file(mut m: ModelFile) -> Result<Self> {
        m.expect_kind(ModelKind::Linsvm)?;
        m.validate()?;
        let bias = m.f64_param("bias")?;
        let c = m.f64_param("C")?;
        LinearClassifier::new(m.take_block("w")?, bias, c)
    }
}

pub fn predict_linear(clf: &LinearClassifier, x: &[f32]) -> Result<f64> {
    if x.len() != clf.dim() {
        return Err(Error::Shape(format!("vector has dim {}, classifier expects {}", x.len(), clf.dim())));
    }
    Ok(dot(&clf.w, x) + clf.bias)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSvmParams {
    pub c: f64,
    /// Permutes the row order seen by the solver.
    pub seed: u64,
    /// Stop once `primal − dual ≤ gap_tol · primal`.
    pub gap_tol: f64,
    pub max_epochs: usize,
    /// Budget for cached kernel rows.
    pub cache_bytes: usize,
}

impl LinearSvmParams {
    pub fn new(c: f64, seed: u64) -> Self {
        LinearSvmParams {
            c,
            seed,
            gap_tol: 1e-3,
            max_epochs: 10_000,
            cache_bytes: 256 << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmTrace {
    /// Best primal objective seen so far, after each epoch.
    pub primal: Vec<f64>,
    /// Dual objective after each epoch.
    pub dual: Vec<f64>,
    pub relative_gap: f64,
    pub converged: bool,
}

/// Primal objective at margins `s_i = w·x_i` with the bias that minimizes
/// the hinge sum. Returns `(objective, bias)`.
fn primal_with_best_bias(s: &[f64], y: &[f64], w_sq: f64, c: f64) -> (f64, f64) {
    // Each hinge term is convex in b with breakpoint y_i − s_i, and every
    // breakpoint raises the slope by one starting from −P, so the P-th
    // smallest breakpoint is a minimizer.
    let n_pos = y.iter().filter(|&&v| v > 0.0).count();
    let mut bp: Vec<f64> = s.iter().zip(y).map(|(&si, &yi)| yi - si).collect();
    bp.sort_by(|a, b| a.total_cmp(b));
    let b = bp[n_pos.max(1) - 1];
    let hinge: f64 = s
        .iter()
        .zip(y)
        .map(|(&si, &yi)| (1.0 - yi * (si + b)).max(0.0))
        .sum();
    (0.5 * w_sq + c * hinge, b)
}

pub fn train_linear_svm(x: &DescriptorSet, labels: &[bool], params: &LinearSvmParams) -> Result<LinearClassifier> {
    train_linear_svm_traced(x, labels, params).map(|(c, _)| c)
}

/// Soft-margin linear SVM with an unregularized bias, solved in the dual.
/// The returned model is the best primal point visited.
pub fn train_linear_svm_traced(
    x: &DescriptorSet,
    labels: &[bool],
    params: &LinearSvmParams,
) -> Result<(LinearClassifier, LinearSvmTrace)> {
    let n = x.n_items();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if !(params.c.is_finite() && params.c > 0.0) {
        return Err(Error::Parameter(format!("C must be positive, got {}", params.c)));
    }
    let y_orig = signed_labels(labels)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));
    let xp = x.select(&perm);
    let y: Vec<f64> = perm.iter().map(|&i| y_orig[i]).collect();

    let diag: Vec<f64> = (0..n).map(|i| dot(xp.row(i), xp.row(i))).collect();
    let capacity = (params.cache_bytes / (8 * n.max(1))).max(2);
    let q = CachedQ::new(diag, capacity, |i| {
        let xi = xp.row(i);
        let yi = y[i];
        par::map_range(n, |j| yi * y[j] * dot(xi, xp.row(j)))
    });
    let mut smo = Smo::new(q, y.clone(), params.c);

    let mut trace = LinearSvmTrace {
        primal: Vec::new(),
        dual: Vec::new(),
        relative_gap: f64::INFINITY,
        converged: false,
    };
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for _ in 0..params.max_epochs {
        let mut optimal = false;
        for _ in 0..n {
            if let Step::Optimal = smo.step(1e-12) {
                optimal = true;
                break;
            }
        }
        // G_i = y_i (w·x_i) − 1 and ‖w‖² = Σ α_i (G_i + 1).
        let s: Vec<f64> = smo.grad.iter().zip(&y).map(|(&g, &yi)| yi * (g + 1.0)).collect();
        let w_sq: f64 = smo.alpha.iter().zip(&smo.grad).map(|(&a, &g)| a * (g + 1.0)).sum();
        let (primal, b) = primal_with_best_bias(&s, &y, w_sq, params.c);
        if best.as_ref().is_none_or(|(p, _, _)| primal < *p) {
            best = Some((primal, smo.alpha.clone(), b));
        }
        let best_primal = best.as_ref().map(|(p, _, _)| *p).unwrap_or(primal);
        let dual = smo.dual_objective();
        trace.primal.push(best_primal);
        trace.dual.push(dual);
        trace.relative_gap = (best_primal - dual).max(0.0) / best_primal.abs().max(f64::MIN_POSITIVE);
        if trace.relative_gap <= params.gap_tol || optimal {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!(
            "linear svm stopped after {} epochs with relative gap {:.3e}",
            params.max_epochs,
            trace.relative_gap
        );
    }
    let (_, alpha, bias) = best.ok_or_else(|| Error::Numeric("solver made no progress".into()))?;
    let d = x.dim();
    let mut w = vec![0f64; d];
    for (i, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            let coef = a * y[i];
            for (wk, &xk) in w.iter_mut().zip(xp.row(i)) {
                *wk += coef * xk as f64;
            }
        }
    }
    let w32: Vec<f32> = w.iter().map(|&v| v as f32).collect();
    if w32.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("weights overflowed f32".into()));
    }
    Ok((LinearClassifier::new(w32, bias, params.c)?, trace))
}
