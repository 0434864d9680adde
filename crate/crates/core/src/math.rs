//! Small dense kernels shared across modules. Accumulation is always f64.

const LANES: usize = 8;

/// Sum of `f(a_i, b_i)` over lanes of independent accumulators, combined in
/// a fixed order so the result depends only on the inputs.
#[inline(always)]
fn lane_sum<F: Fn(f32, f32) -> f64>(a: &[f32], b: &[f32], f: F) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += f(x[l], y[l]);
        }
    }
    let mut tail = 0f64;
    for (&x, &y) in ra.iter().zip(rb) {
        tail += f(x, y);
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    lane_sum(a, b, |x, y| x as f64 * y as f64)
}

#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    lane_sum(a, b, |x, y| {
        let d = x as f64 - y as f64;
        d * d
    })
}

#[inline]
pub fn sq_dist_f64(a: &[f32], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` smallest values, ordered by (value, index).
pub fn k_smallest(values: &[f64], k: usize) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::with_capacity(k + 1);
    for (i, &v) in values.iter().enumerate() {
        if best.len() == k && v >= values[best[k - 1]] {
            continue;
        }
        let pos = best.partition_point(|&j| values[j] <= v);
        best.insert(pos, i);
        best.truncate(k);
    }
    best
}
