use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{check_finite, Error, Result};
use crate::io::{DescriptorSet, FloatBlock, ModelFile, ModelKind};
use crate::math::sq_dist_f64;
use crate::par;

/// `K` centers in `dim` dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    centers: Vec<f32>,
}

impl Codebook {
    pub fn new(k: usize, dim: usize, centers: Vec<f32>) -> Result<Self> {
        if k == 0 || dim == 0 || centers.len() != k * dim {
            return Err(Error::Shape(format!(
                "{} values for a {k}x{dim} codebook",
                centers.len()
            )));
        }
        check_finite(&centers)?;
        Ok(Codebook { k, dim, centers })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centers(&self) -> &[f32] {
        &self.centers
    }

    pub fn center(&self, i: usize) -> &[f32] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    /// Squared distances from `x` to every center.
    pub fn distances(&self, x: &[f32], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(self.centers.chunks_exact(self.dim)) {
            *o = crate::math::sq_dist(x, c);
        }
    }

    /// Index of the nearest center; ties go to the lowest index.
    pub fn nearest(&self, x: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centers.chunks_exact(self.dim).enumerate() {
            let d = crate::math::sq_dist(x, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile::new(
            ModelKind::Kmeans,
            json!({"K": self.k, "dim": self.dim}).as_object().cloned().unwrap_or_default(),
            vec![FloatBlock::new("centers", vec![self.k, self.dim], self.centers.clone())],
        )
    }

    pub fn from_model_file(mut m: ModelFile) -> Result<Self> {
        m.expect_kind(ModelKind::Kmeans)?;
        m.validate()?;
        let k = m.usize_param("K")?;
        let dim = m.usize_param("dim")?;
        Codebook::new(k, dim, m.take_block("centers")?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop when the summed Euclidean movement of all centers drops below this.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansTrace {
    /// Objective after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    /// Final assignment of every training row.
    pub assignments: Vec<usize>,
}

pub fn fit_kmeans(train: &DescriptorSet, params: &KMeansParams) -> Result<Codebook> {
    fit_kmeans_traced(train, params).map(|(c, _)| c)
}

/// Lloyd's algorithm from k-means++ seeding.
pub fn fit_kmeans_traced(train: &DescriptorSet, params: &KMeansParams) -> Result<(Codebook, KMeansTrace)> {
    let n = train.n_items();
    let d = train.dim();
    let k = params.k;
    if k == 0 {
        return Err(Error::Parameter("K must be >= 1".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("k-means with K={k} needs at least {k} rows, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centers = seed_plus_plus(train, k, &mut rng);

    let mut objective = Vec::new();
    let mut assignments = vec![0usize; n];
    let mut iterations = 0;
    let chunk = super::reduction_chunk(n);
    for _ in 0..params.max_iter.max(1) {
        iterations += 1;
        let (mut assign, mut dist) = assign_all(train, &centers, k);
        fix_empty_clusters(train, &mut centers, &mut assign, &mut dist, k);
        objective.push(dist.iter().sum());

        let (sums, counts) = par::chunked_reduce(
            n,
            chunk,
            (vec![0f64; k * d], vec![0usize; k]),
            |range| {
                let mut s = vec![0f64; k * d];
                let mut c = vec![0usize; k];
                for i in range {
                    let a = assign[i];
                    c[a] += 1;
                    for (acc, &x) in s[a * d..(a + 1) * d].iter_mut().zip(train.row(i)) {
                        *acc += x as f64;
                    }
                }
                (s, c)
            },
            |(mut s, mut c), (s2, c2)| {
                s.iter_mut().zip(&s2).for_each(|(a, b)| *a += b);
                c.iter_mut().zip(&c2).for_each(|(a, b)| *a += b);
                (s, c)
            },
        );
        let mut movement = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let mut shift = 0.0;
            for t in 0..d {
                let v = sums[j * d + t] / counts[j] as f64;
                let delta = v - centers[j * d + t];
                shift += delta * delta;
                centers[j * d + t] = v;
            }
            movement += shift.sqrt();
        }
        assignments = std::mem::take(&mut assign);
        if movement < params.tol {
            break;
        }
    }

    let codebook = Codebook::new(k, d, centers.iter().map(|&c| c as f32).collect())?;
    Ok((
        codebook,
        KMeansTrace {
            objective,
            iterations,
            assignments,
        },
    ))
}

fn seed_plus_plus(train: &DescriptorSet, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = train.n_items();
    let d = train.dim();
    let mut chosen = Vec::with_capacity(k);
    let mut is_chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    is_chosen[first] = true;
    let mut c0: Vec<f64> = train.row(first).iter().map(|&x| x as f64).collect();
    let mut d2 = par::map_range(n, |i| sq_dist_f64(train.row(i), &c0));
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                if acc > r {
                    pick = Some(i);
                    break;
                }
            }
            // r can land past the last positive weight through round-off
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            (0..n).find(|&i| !is_chosen[i]).unwrap_or(0)
        };
        chosen.push(pick);
        is_chosen[pick] = true;
        c0 = train.row(pick).iter().map(|&x| x as f64).collect();
        let nd = par::map_range(n, |i| sq_dist_f64(train.row(i), &c0));
        for (a, b) in d2.iter_mut().zip(nd) {
            if b < *a {
                *a = b;
            }
        }
    }
    let mut centers = Vec::with_capacity(k * d);
    for &i in &chosen {
        centers.extend(train.row(i).iter().map(|&x| x as f64));
    }
    centers
}

fn assign_all(train: &DescriptorSet, centers: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let d = train.dim();
    let ranges = par::chunk_ranges(train.n_items(), 256);
    let parts = par::map(&ranges, |r| {
        r.clone()
            .map(|i| {
                let x = train.row(i);
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for j in 0..k {
                    let dist = sq_dist_f64(x, &centers[j * d..(j + 1) * d]);
                    if dist < best_d {
                        best_d = dist;
                        best = j;
                    }
                }
                (best, best_d)
            })
            .collect::<Vec<_>>()
    });
    parts.into_iter().flatten().unzip()
}

/// Move each empty center onto the point farthest from its own center,
/// taking points only from clusters with at least two members. Ties go to the
/// lowest point index.
fn fix_empty_clusters(train: &DescriptorSet, centers: &mut [f64], assign: &mut [usize], dist: &mut [f64], k: usize) {
    let d = train.dim();
    let mut counts = vec![0usize; k];
    for &a in assign.iter() {
        counts[a] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..assign.len() {
            if counts[assign[i]] < 2 {
                continue;
            }
            if far.is_none_or(|f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let Some(p) = far else { break };
        counts[assign[p]] -= 1;
        counts[j] = 1;
        assign[p] = j;
        dist[p] = 0.0;
        for (c, &x) in centers[j * d..(j + 1) * d].iter_mut().zip(train.row(p)) {
            *c = x as f64;
        }
    }
}
