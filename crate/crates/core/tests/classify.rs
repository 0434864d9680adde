use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vidrep::classify::*;
use vidrep::eval::{average_precision_indexed, ApMode};
use vidrep::pq::{build_lut, pq_decode, score_compressed, PqCode, PqModel};
use vidrep::{DescriptorSet, Error};

/// Optimum of `Σα − ½αᵀQα` subject to `yᵀα = 0, 0 ≤ α ≤ C`, found by
/// enumerating every lower/upper/free assignment and solving the
/// equality-constrained stationarity system on the free set.
fn brute_dual(k: &[f64], y: &[f64], c: f64) -> f64 {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let objective = |a: &[f64]| {
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += a[i] * a[j] * q(i, j);
            }
        }
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let mut best = f64::NEG_INFINITY;
    let total = 3usize.pow(n as u32);
    let mut state = vec![0u8; n];
    for code in 0..total {
        let mut r = code;
        for s in state.iter_mut() {
            *s = (r % 3) as u8;
            r /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        let bound_sum: f64 = (0..n).filter(|&i| state[i] != 2).map(|i| y[i] * alpha[i]).sum();
        if free.is_empty() {
            if bound_sum.abs() > 1e-9 {
                continue;
            }
        } else {
            let m = free.len();
            let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
            let mut rhs = DVector::<f64>::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = q(i, j);
                }
                a[(r, m)] = y[i];
                a[(m, r)] = y[i];
                let fixed: f64 = (0..n).filter(|&j| state[j] != 2).map(|j| q(i, j) * alpha[j]).sum();
                rhs[r] = 1.0 - fixed;
            }
            rhs[m] = -bound_sum;
            let svd = a.clone().svd(true, true);
            let Ok(sol) = svd.solve(&rhs, 1e-10) else { continue };
            if (&a * &sol - &rhs).norm() > 1e-7 * (1.0 + rhs.norm()) {
                continue;
            }
            if free.iter().enumerate().any(|(r, _)| sol[r] < -1e-9 || sol[r] > c + 1e-9) {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r].clamp(0.0, c);
            }
        }
        best = best.max(objective(&alpha));
    }
    best
}

fn linear_kernel(x: &DescriptorSet) -> Vec<f64> {
    let n = x.n_items();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = x.row(i).iter().zip(x.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
        }
    }
    k
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (DescriptorSet, Vec<bool>) {
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    labels[0] = true;
    labels[1] = false;
    let rows: Vec<Vec<f32>> = labels
        .iter()
        .map(|&l| {
            let shift = if l { 0.6 } else { -0.6 };
            (0..d).map(|_| rng.random_range(-1.0..1.0) + shift).collect()
        })
        .collect();
    (DescriptorSet::from_rows(&rows).unwrap(), labels)
}

fn primal(clf: &LinearClassifier, x: &DescriptorSet, labels: &[bool]) -> f64 {
    let w_sq: f64 = clf.w().iter().map(|&v| v as f64 * v as f64).sum();
    let hinge: f64 = x
        .rows()
        .zip(labels)
        .map(|(r, &l)| {
            let s: f64 = r.iter().zip(clf.w()).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() + clf.bias();
            (1.0 - if l { s } else { -s }).max(0.0)
        })
        .sum();
    0.5 * w_sq + clf.c() * hinge
}

fn signs(v: &[f64]) -> Vec<bool> {
    v.iter().map(|&s| s > 0.0).collect()
}

#[test]
fn separable_toy_set_is_fit_exactly() {
    let x = DescriptorSet::from_rows(&[[2.0f32, 2.0], [3.0, 1.0], [2.5, 3.0], [-1.0, -2.0], [-2.0, 0.0], [-3.0, -1.0]]).unwrap();
    let y = [true, true, true, false, false, false];
    let clf = train_linear_svm(&x, &y, &LinearSvmParams::new(10.0, 0)).unwrap();
    assert_eq!(signs(&clf.predict_set(&x).unwrap()), y);
}

#[test]
fn linear_objective_matches_brute_force_dual() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..12 {
        let n = 4 + trial % 9;
        let d = 1 + trial % 3;
        let (x, y) = random_problem(&mut rng, n, d);
        let c = [0.1, 1.0, 10.0][trial % 3];
        let (clf, trace) = train_linear_svm_traced(&x, &y, &LinearSvmParams::new(c, trial as u64)).unwrap();
        assert!(trace.converged);
        let ys: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let opt = brute_dual(&linear_kernel(&x), &ys, c);
        let p = primal(&clf, &x, &y);
        assert!((p - opt).abs() <= 1e-2 * opt.abs(), "trial {trial}: primal {p} vs optimum {opt}");
    }
}

#[test]
fn primal_history_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (x, y) = random_problem(&mut rng, 300, 8);
    let (_, trace) = train_linear_svm_traced(&x, &y, &LinearSvmParams::new(5.0, 3)).unwrap();
    assert!(trace.converged);
    for w in trace.primal.windows(2) {
        assert!(w[1] <= w[0] + 1e-9);
    }
    assert!(trace.relative_gap <= 1e-3);
}

#[test]
fn feature_scaling_with_adjusted_c_keeps_signs() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (x, y) = random_problem(&mut rng, 80, 3);
    let x2 = DescriptorSet::new(x.n_items(), x.dim(), x.as_slice().iter().map(|v| v * 2.0).collect()).unwrap();
    let a = train_linear_svm(&x, &y, &LinearSvmParams::new(1.0, 0)).unwrap();
    let b = train_linear_svm(&x2, &y, &LinearSvmParams::new(0.25, 0)).unwrap();
    let (sa, sb) = (a.predict_set(&x).unwrap(), b.predict_set(&x2).unwrap());
    for (p, q) in sa.iter().zip(&sb) {
        if p.abs() > 1e-2 {
            assert_eq!(p > &0.0, q > &0.0);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (x, y) = random_problem(&mut rng, 120, 5);
    let a = train_linear_svm(&x, &y, &LinearSvmParams::new(1.0, 9)).unwrap();
    let b = train_linear_svm(&x, &y, &LinearSvmParams::new(1.0, 9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_class_is_rejected() {
    let x = DescriptorSet::from_rows(&[[1.0f32], [2.0]]).unwrap();
    assert!(matches!(train_linear_svm(&x, &[true, true], &LinearSvmParams::new(1.0, 0)), Err(Error::InsufficientData(_))));
}

#[test]
fn predict_linear_examples() {
    let clf = LinearClassifier::new(vec![1.0, 2.0], 0.5, 1.0).unwrap();
    assert_eq!(predict_linear(&clf, &[1.0, 1.0]).unwrap(), 3.5);
    let zero = LinearClassifier::new(vec![0.0, 0.0], -0.25, 1.0).unwrap();
    assert_eq!(predict_linear(&zero, &[7.0, -3.0]).unwrap(), -0.25);
    assert!(matches!(predict_linear(&clf, &[1.0]), Err(Error::Shape(_))));
}

#[test]
fn predict_linear_matches_compressed_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let model = PqModel::new(32, 4, 6, (0..32 * 64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let w: Vec<f32> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let clf = LinearClassifier::new(w.clone(), 0.3, 1.0).unwrap();
    let lut = build_lut(&model, &w, 0.3).unwrap();
    for _ in 0..200 {
        let code = PqCode { indices: (0..8).map(|_| rng.random_range(0..64)).collect() };
        let x = pq_decode(&model, &code).unwrap();
        let a = predict_linear(&clf, &x).unwrap();
        let b = score_compressed(&lut, &code).unwrap();
        assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()));
    }
}

#[test]
fn linear_model_file_roundtrip() {
    let clf = LinearClassifier::new(vec![1.5, -2.0, 0.25], 0.125, 10.0).unwrap();
    let bytes = vidrep::io::encode_model(&clf.to_model_file()).unwrap();
    assert_eq!(LinearClassifier::from_model_file(vidrep::io::decode_model(&bytes).unwrap()).unwrap(), clf);
}

#[test]
fn distance_hand_values() {
    assert_eq!(chi2_distance(&[0.3, 0.7], &[0.3, 0.7], CHI2_EPS).unwrap(), 0.0);
    assert!((chi2_distance(&[1.0, 0.0], &[0.0, 1.0], 0.0).unwrap() - 1.0).abs() < 1e-12);
    assert!((chi2_distance(&[1.0, 0.0], &[0.0, 1.0], CHI2_EPS).unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(rbf_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    assert_eq!(rbf_distance(&[2.0, 5.0], &[2.0, 5.0]).unwrap(), 0.0);
    assert!(matches!(chi2_distance(&[-0.1, 0.0], &[0.0, 1.0], CHI2_EPS), Err(Error::Domain(_))));
    assert!(matches!(rbf_distance(&[1.0], &[0.0, 1.0]), Err(Error::Shape(_))));
}

#[test]
fn distances_are_symmetric_and_match_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..500 {
        let a: Vec<f32> = (0..7).map(|_| rng.random_range(0.0..2.0)).collect();
        let b: Vec<f32> = (0..7).map(|_| rng.random_range(0.0..2.0)).collect();
        assert_eq!(chi2_distance(&a, &b, CHI2_EPS).unwrap(), chi2_distance(&b, &a, CHI2_EPS).unwrap());
        let half: f64 = 0.5 * a.iter().zip(&b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>();
        assert!((rbf_distance(&a, &b).unwrap() - half).abs() <= 1e-7);
    }
}

#[test]
fn mean_distance_examples() {
    let two = DescriptorSet::from_rows(&[[0.0f32, 0.0], [2.0, 2.0]]).unwrap();
    assert_eq!(mean_distance(&two, KernelKind::Rbf).unwrap(), 4.0);
    let same = DescriptorSet::from_rows(&[[1.0f32, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
    let a = mean_distance(&same, KernelKind::ExpChi2).unwrap();
    assert_eq!(a, 0.0);
    assert!(matches!(kernel_matrix(&same, &same, KernelKind::ExpChi2, 1.0, a), Err(Error::Parameter(_))));
    assert!(mean_distance(&DescriptorSet::from_rows(&[[1.0f32]]).unwrap(), KernelKind::Rbf).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = DescriptorSet::new(100, 6, (0..600).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    for kind in [KernelKind::ExpChi2, KernelKind::Rbf] {
        let mut acc = 0.0;
        let mut pairs = 0;
        for i in 0..100 {
            for j in 0..100 {
                if i < j {
                    acc += distance(kind, x.row(i), x.row(j)).unwrap();
                    pairs += 1;
                }
            }
        }
        assert!((mean_distance(&x, kind).unwrap() - acc / pairs as f64).abs() <= 1e-7);
    }
}

#[test]
fn kernel_matrix_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for n in [5usize, 20, 50] {
        let x = DescriptorSet::new(n, 10, (0..n * 10).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        for kind in [KernelKind::ExpChi2, KernelKind::Rbf] {
            let a = mean_distance(&x, kind).unwrap();
            let k = kernel_matrix(&x, &x, kind, 1.0, a).unwrap();
            for i in 0..n {
                assert_eq!(k[i * n + i], 1.0);
                for j in 0..n {
                    assert!(k[i * n + j] > 0.0 && k[i * n + j] <= 1.0);
                    assert!((k[i * n + j] - k[j * n + i]).abs() <= 1e-9);
                }
            }
            if kind == KernelKind::ExpChi2 {
                let m = DMatrix::from_row_slice(n, n, &k);
                let min = m.symmetric_eigenvalues().min();
                assert!(min >= -1e-8, "min eigenvalue {min}");
            }
        }
    }
}

#[test]
fn kernel_svm_matches_brute_force_dual() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for trial in 0..10 {
        let n = 3 + trial % 8;
        let (x, y) = random_problem(&mut rng, n, 4);
        let x = DescriptorSet::new(n, 4, x.as_slice().iter().map(|v| v.abs()).collect()).unwrap();
        let kind = if trial % 2 == 0 { KernelKind::ExpChi2 } else { KernelKind::Rbf };
        let a = mean_distance(&x, kind).unwrap();
        let k = kernel_matrix(&x, &x, kind, 1.0, a).unwrap();
        let c = [0.5, 2.0, 20.0][trial % 3];
        let sol = train_kernel_svm(&k, &y, &KernelSvmParams::new(c)).unwrap();
        let ys: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let opt = brute_dual(&k, &ys, c);
        assert!(
            (sol.dual_objective - opt).abs() <= 1e-2 * opt.abs(),
            "trial {trial}: {} vs {opt}",
            sol.dual_objective
        );
        assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        assert!(sol.kkt_violation <= 1e-3);
    }
}

#[test]
fn free_support_vectors_sit_on_the_margin() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (x, y) = random_problem(&mut rng, 60, 5);
    let x = DescriptorSet::new(60, 5, x.as_slice().iter().map(|v| v.abs()).collect()).unwrap();
    let a = mean_distance(&x, KernelKind::Rbf).unwrap();
    let k = kernel_matrix(&x, &x, KernelKind::Rbf, 1.0, a).unwrap();
    let c = 5.0;
    let sol = train_kernel_svm(&k, &y, &KernelSvmParams::new(c)).unwrap();
    let mut free = 0;
    for i in 0..60 {
        if sol.alpha[i] > 1e-8 && sol.alpha[i] < c - 1e-8 {
            free += 1;
            let f = sol.decision(&k[i * 60..(i + 1) * 60], &y);
            let margin = if y[i] { f } else { -f };
            assert!((margin - 1.0).abs() <= 1e-2, "margin {margin}");
        }
    }
    assert!(free > 0);
}

#[test]
fn precomputed_linear_kernel_agrees_with_linear_svm() {
    let x = DescriptorSet::from_rows(&[[2.0f32, 2.0], [3.0, 1.0], [2.5, 3.0], [-1.0, -2.0], [-2.0, 0.0], [-3.0, -1.0]]).unwrap();
    let y = [true, true, true, false, false, false];
    let lin = train_linear_svm(&x, &y, &LinearSvmParams::new(1.0, 0)).unwrap();
    let k = linear_kernel(&x);
    let sol = train_kernel_svm(&k, &y, &KernelSvmParams::new(1.0)).unwrap();
    let kernel_signs: Vec<bool> = (0..6).map(|i| sol.decision(&k[i * 6..(i + 1) * 6], &y) > 0.0).collect();
    assert_eq!(kernel_signs, signs(&lin.predict_set(&x).unwrap()));
}

#[test]
fn asymmetric_kernel_is_rejected() {
    let k = [1.0, 0.5, 0.4, 1.0];
    assert!(train_kernel_svm(&k, &[true, false], &KernelSvmParams::new(1.0)).is_err());
}

#[test]
fn kernel_model_predicts_like_solution_and_roundtrips() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (x, y) = random_problem(&mut rng, 40, 3);
    let x = DescriptorSet::new(40, 3, x.as_slice().iter().map(|v| v.abs()).collect()).unwrap();
    let model = fit_kernel_svm(&x, &y, KernelKind::ExpChi2, 1.0, 2.0).unwrap();
    assert!(model.dual_coefs().iter().all(|c| c.abs() as f64 <= 2.0));
    let a = mean_distance(&x, KernelKind::ExpChi2).unwrap();
    let k = kernel_matrix(&x, &x, KernelKind::ExpChi2, 1.0, a).unwrap();
    let sol = train_kernel_svm(&k, &y, &KernelSvmParams::new(2.0)).unwrap();
    for i in 0..40 {
        let p = model.predict(x.row(i)).unwrap();
        let q = sol.decision(&k[i * 40..(i + 1) * 40], &y);
        assert!((p - q).abs() <= 1e-5 * (1.0 + q.abs()));
    }
    let bytes = vidrep::io::encode_model(&model.to_model_file()).unwrap();
    assert_eq!(KernelSvmModel::from_model_file(vidrep::io::decode_model(&bytes).unwrap()).unwrap(), model);
}

#[test]
fn cv_singleton_and_duplicate_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (x, y) = random_problem(&mut rng, 60, 4);
    let single = cross_validate_linear(&x, &y, &[3.0], 5, 1).unwrap();
    assert_eq!(single.best.c, 3.0);
    let a = cross_validate_linear(&x, &y, &[0.1, 1.0, 10.0], 5, 1).unwrap();
    let b = cross_validate_linear(&x, &y, &[10.0, 0.1, 1.0, 1.0, 0.1], 5, 1).unwrap();
    assert_eq!(a, b);
    let ka = cross_validate_kernel(&x, &y, KernelKind::Rbf, &[1.0, 10.0], &[1.0, 2.0], 3, 1).unwrap();
    let kb = cross_validate_kernel(&x, &y, KernelKind::Rbf, &[10.0, 1.0, 10.0], &[2.0, 1.0, 2.0], 3, 1).unwrap();
    assert_eq!(ka, kb);
    assert_eq!(ka.points.len(), 4);
}

#[test]
fn cv_folds_are_stratified_and_reduced() {
    let mut y = vec![false; 50];
    y[3] = true;
    y[17] = true;
    y[40] = true;
    let (fold, used) = stratified_folds(&y, 5, 0).unwrap();
    assert_eq!(used, 3);
    for f in 0..3 {
        assert!((0..50).any(|i| fold[i] == f && y[i]));
    }
    let mut lone = vec![false; 10];
    lone[0] = true;
    assert!(matches!(stratified_folds(&lone, 5, 0), Err(Error::InsufficientData(_))));
}

/// Many noisy dimensions, few rows, labels driven by one weak dimension:
/// large C memorizes noise.
fn overfitting_set(rng: &mut ChaCha8Rng) -> (DescriptorSet, Vec<bool>) {
    let n = 80;
    let d = 60;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let l = i % 2 == 0;
        let mut r: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        r[0] += if l { 0.5 } else { -0.5 };
        rows.push(r);
        labels.push(l);
    }
    (DescriptorSet::from_rows(&rows).unwrap(), labels)
}

#[test]
fn cv_prefers_small_c_when_large_c_overfits() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (x, y) = overfitting_set(&mut rng);
    let grid = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0];
    let res = cross_validate_linear(&x, &y, &grid, 5, 4).unwrap();
    assert!(res.best.c < 100.0);
    // exhaustive re-evaluation over the same folds
    let (fold, used) = stratified_folds(&y, 5, 4).unwrap();
    let mut means = Vec::new();
    for &c in &grid {
        let mut acc = 0.0;
        for f in 0..used {
            let train: Vec<usize> = (0..80).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..80).filter(|&i| fold[i] == f).collect();
            let yt: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let clf = train_linear_svm(&x.select(&train), &yt, &LinearSvmParams::new(c, 4)).unwrap();
            let s = clf.predict_set(&x.select(&test)).unwrap();
            let yv: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            acc += average_precision_indexed(&s, &yv, ApMode::NonInterpolated).unwrap();
        }
        means.push(acc / used as f64);
    }
    let mut best = 0;
    for g in 1..grid.len() {
        if means[g] > means[best] {
            best = g;
        }
    }
    assert_eq!(res.best.c, grid[best]);
    assert!(means[best] > means[grid.len() - 1]);
}
