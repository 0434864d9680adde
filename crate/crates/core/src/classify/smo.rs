//! Sequential minimal optimization for the soft-margin SVM dual
//!
//! ```text
//! min_α ½ αᵀQα − eᵀα   s.t.  yᵀα = 0,  0 ≤ α ≤ C,   Q_ij = y_i y_j K_ij
//! ```
//!
//! with second-order working-set selection and a maintained gradient
//! `G = Qα − e`.

use std::collections::{HashMap, VecDeque};
use std::rc::Rc;

const TAU: f64 = 1e-12;

/// Access to rows of the signed matrix `Q`.
pub(crate) trait QMatrix {
    fn n(&self) -> usize;
    /// `Q_ii`.
    fn diag(&self, i: usize) -> f64;
    fn row(&mut self, i: usize) -> Rc<[f64]>;
}

/// `Q` from a precomputed symmetric kernel matrix.
pub(crate) struct PrecomputedQ<'a> {
    pub k: &'a [f64],
    pub y: &'a [f64],
}

impl QMatrix for PrecomputedQ<'_> {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.k[i * self.y.len() + i]
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        let n = self.y.len();
        let yi = self.y[i];
        self.k[i * n..(i + 1) * n]
            .iter()
            .zip(self.y)
            .map(|(&k, &yj)| yi * yj * k)
            .collect()
    }
}

/// `Q` computed on demand by `f(i)`, keeping at most `capacity` rows with
/// first-in first-out eviction.
pub(crate) struct CachedQ<F: FnMut(usize) -> Vec<f64>> {
    diag: Vec<f64>,
    compute: F,
    rows: HashMap<usize, Rc<[f64]>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<F: FnMut(usize) -> Vec<f64>> CachedQ<F> {
    pub fn new(diag: Vec<f64>, capacity: usize, compute: F) -> Self {
        CachedQ {
            diag,
            compute,
            rows: HashMap::new(),
            order: VecDeque::new(),
            capacity: capacity.max(2),
        }
    }
}

impl<F: FnMut(usize) -> Vec<f64>> QMatrix for CachedQ<F> {
    fn n(&self) -> usize {
        self.diag.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        if let Some(r) = self.rows.get(&i) {
            return r.clone();
        }
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows.remove(&old);
            }
        }
        let r: Rc<[f64]> = (self.compute)(i).into();
        self.rows.insert(i, r.clone());
        self.order.push_back(i);
        r
    }
}

pub(crate) struct Smo<Q: QMatrix> {
    q: Q,
    y: Vec<f64>,
    c: f64,
    pub alpha: Vec<f64>,
    /// `G = Qα − e`.
    pub grad: Vec<f64>,
}

pub(crate) enum Step {
    Optimal,
    Updated,
}

impl<Q: QMatrix> Smo<Q> {
    pub fn new(q: Q, y: Vec<f64>, c: f64) -> Self {
        let n = q.n();
        Smo {
            q,
            y,
            c,
            alpha: vec![0.0; n],
            grad: vec![-1.0; n],
        }
    }

    fn is_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.c
    }

    fn is_lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    fn in_up(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            !self.is_upper(t)
        } else {
            !self.is_lower(t)
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            !self.is_lower(t)
        } else {
            !self.is_upper(t)
        }
    }

    /// Maximal KKT violation `max_{I_up} −y G − min_{I_low} −y G`.
    pub fn violation(&self) -> f64 {
        let mut up = f64::NEG_INFINITY;
        let mut low = f64::INFINITY;
        for t in 0..self.y.len() {
            let v = -self.y[t] * self.grad[t];
            if self.in_up(t) {
                up = up.max(v);
            }
            if self.in_low(t) {
                low = low.min(v);
            }
        }
        if up == f64::NEG_INFINITY || low == f64::INFINITY {
            0.0
        } else {
            (up - low).max(0.0)
        }
    }

    /// One pair update, or `Optimal` once the violation is below `eps`.
    pub fn step(&mut self, eps: f64) -> Step {
        let n = self.y.len();
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if self.in_up(t) {
                let v = -self.y[t] * self.grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        if i == usize::MAX {
            return Step::Optimal;
        }
        let qi = self.q.row(i);
        let qd_i = self.q.diag(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut best = f64::INFINITY;
        let mut j = usize::MAX;
        for t in 0..n {
            if !self.in_low(t) {
                continue;
            }
            let v = self.y[t] * self.grad[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = qd_i + self.q.diag(t) - 2.0 * self.y[i] * self.y[t] * qi[t];
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < eps || j == usize::MAX {
            return Step::Optimal;
        }
        let qj = self.q.row(j);
        self.update_pair(i, j, &qi, &qj);
        Step::Updated
    }

    fn update_pair(&mut self, i: usize, j: usize, qi: &[f64], qj: &[f64]) {
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (qd_i, qd_j) = (self.q.diag(i), self.q.diag(j));
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let mut quad = qd_i + qd_j + 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qd_i + qd_j - 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for ((g, &a), &b) in self.grad.iter_mut().zip(qi).zip(qj) {
            *g += a * di + b * dj;
        }
    }

    /// `Σα − ½αᵀQα`, the dual in maximization form.
    pub fn dual_objective(&self) -> f64 {
        -0.5 * self
            .alpha
            .iter()
            .zip(&self.grad)
            .map(|(&a, &g)| a * (g - 1.0))
            .sum::<f64>()
    }

    /// Bias from the average over free vectors, or the midpoint of the
    /// feasible interval when none are free.
    pub fn bias(&self) -> f64 {
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut free = 0usize;
        for t in 0..self.y.len() {
            let yg = self.y[t] * self.grad[t];
            if self.is_upper(t) {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.is_lower(t) {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        let rho = if free > 0 {
            sum / free as f64
        } else if ub.is_finite() && lb.is_finite() {
            (ub + lb) / 2.0
        } else if ub.is_finite() {
            ub
        } else {
            lb
        };
        -rho
    }
}
