use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::kernel::{kernel_from_distances, mean_distance_subset, pairwise_distances, train_kernel_svm, KernelKind, KernelSvmParams};
use super::linear::{train_linear_svm, LinearSvmParams};
use crate::error::{Error, Result};
use crate::eval::{average_precision_indexed, ApMode};
use crate::io::DescriptorSet;
use crate::par;

pub const DEFAULT_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
pub const DEFAULT_SIGMA_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Fold index of every row. Positives and negatives are shuffled separately
/// and dealt round-robin, so every fold holds at least one of each. The
/// fold count drops to the minority class size when necessary.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Result<(Vec<usize>, usize)> {
    if folds < 2 {
        return Err(Error::Parameter(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let used = folds.min(pos.len()).min(neg.len());
    if used < 2 {
        return Err(Error::InsufficientData(format!(
            "too few exemplars to stratify: {} positives, {} negatives",
            pos.len(),
            neg.len()
        )));
    }
    if used < folds {
        log::warn!("reducing cross-validation from {folds} to {used} folds");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold = vec![0usize; labels.len()];
    for (k, &i) in pos.iter().enumerate() {
        fold[i] = k % used;
    }
    for (k, &i) in neg.iter().enumerate() {
        fold[i] = k % used;
    }
    Ok((fold, used))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvPoint {
    pub c: f64,
    pub sigma: Option<f64>,
    pub mean_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub best: CvPoint,
    /// Every distinct grid point in ascending `(C, σ)` order.
    pub points: Vec<CvPoint>,
    pub folds: usize,
}

fn normalize_grid(grid: &[f64], name: &str) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Parameter(format!("{name} grid is empty")));
    }
    if let Some(v) = grid.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Parameter(format!("{name} grid value {v} must be positive")));
    }
    let mut g = grid.to_vec();
    g.sort_by(|a, b| a.total_cmp(b));
    g.dedup();
    Ok(g)
}

/// First maximum in grid order, so ties go to the smaller `C` then `σ`.
fn select(points: Vec<CvPoint>, folds: usize) -> CvResult {
    let mut best = points[0];
    for p in &points[1..] {
        if p.mean_ap > best.mean_ap {
            best = *p;
        }
    }
    CvResult { best, points, folds }
}

fn split(fold: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    let train = (0..fold.len()).filter(|&i| fold[i] != f).collect();
    let test = (0..fold.len()).filter(|&i| fold[i] == f).collect();
    (train, test)
}

/// Selects `C` for a linear SVM by mean held-out AP.
pub fn cross_validate_linear(
    x: &DescriptorSet,
    labels: &[bool],
    c_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if labels.len() != x.n_items() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), x.n_items())));
    }
    let grid = normalize_grid(c_grid, "C")?;
    let (fold, used) = stratified_folds(labels, folds, seed)?;
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..used).map(move |f| (g, f))).collect();
    let aps = par::map(&jobs, |&(g, f)| {
        let (train, test) = split(&fold, f);
        let xt = x.select(&train);
        let yt: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let clf = train_linear_svm(&xt, &yt, &LinearSvmParams::new(grid[g], seed))?;
        let scores = clf.predict_set(&x.select(&test))?;
        let yv: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        average_precision_indexed(&scores, &yv, ApMode::NonInterpolated)
    });
    let aps = aps.into_iter().collect::<Result<Vec<f64>>>()?;
    let points = grid
        .iter()
        .enumerate()
        .map(|(g, &c)| CvPoint {
            c,
            sigma: None,
            mean_ap: aps[g * used..(g + 1) * used].iter().sum::<f64>() / used as f64,
        })
        .collect();
    Ok(select(points, used))
}

/// Selects `(C, σ)` for a kernel SVM by mean held-out AP. Distances are
/// computed once; each fold uses the mean distance of its training rows.
pub fn cross_validate_kernel(
    x: &DescriptorSet,
    labels: &[bool],
    kind: KernelKind,
    c_grid: &[f64],
    sigma_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    let n = x.n_items();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    let cs = normalize_grid(c_grid, "C")?;
    let sigmas = normalize_grid(sigma_grid, "sigma")?;
    let (fold, used) = stratified_folds(labels, folds, seed)?;
    let d_all = &pairwise_distances(x, kind)?;
    let per_fold = par::map_range(used, |f| -> Result<Vec<f64>> {
        let (train, test) = split(&fold, f);
        let a = mean_distance_subset(d_all, n, &train)?;
        if a <= 0.0 {
            return Err(Error::Degenerate(format!("fold {f} training rows are identical")));
        }
        let d_train: Vec<f64> = train.iter().flat_map(|&i| train.iter().map(move |&j| d_all[i * n + j])).collect();
        let d_test: Vec<f64> = test.iter().flat_map(|&i| train.iter().map(move |&j| d_all[i * n + j])).collect();
        let yt: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let yv: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        let mut out = Vec::with_capacity(cs.len() * sigmas.len());
        for &c in &cs {
            for &sigma in &sigmas {
                let k = kernel_from_distances(&d_train, a, sigma)?;
                let sol = train_kernel_svm(&k, &yt, &KernelSvmParams::new(c))?;
                let kt = kernel_from_distances(&d_test, a, sigma)?;
                let scores: Vec<f64> = kt.chunks_exact(train.len()).map(|row| sol.decision(row, &yt)).collect();
                out.push(average_precision_indexed(&scores, &yv, ApMode::NonInterpolated)?);
            }
        }
        Ok(out)
    });
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(cs.len() * sigmas.len());
    for (ci, &c) in cs.iter().enumerate() {
        for (si, &sigma) in sigmas.iter().enumerate() {
            let g = ci * sigmas.len() + si;
            points.push(CvPoint {
                c,
                sigma: Some(sigma),
                mean_ap: per_fold.iter().map(|v| v[g]).sum::<f64>() / used as f64,
            });
        }
    }
    Ok(select(points, used))
}
