//! Throughput of the hot paths. Run once with default features and once with
//! `--no-default-features` to compare the data-parallel and sequential cores.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use vidrep::classify::LinearClassifier;
use vidrep::codebook::{fit_kmeans, Codebook, GmmModel, KMeansParams};
use vidrep::encode::{Encoder, FisherParams, VladParams};
use vidrep::io::PackedCodes;
use vidrep::pq::{build_lut, InterleavedCodes, PqModel};
use vidrep::{par, DescriptorSet};

fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DescriptorSet {
    DescriptorSet::new(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn encoding(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (d, k) = (128, 64);
    let videos: Vec<DescriptorSet> = (0..64).map(|_| random_set(&mut rng, 60, d)).collect();
    let cb = Codebook::new(k, d, random_set(&mut rng, k, d).into_vec()).unwrap();
    let gmm = GmmModel::new(k, d, random_set(&mut rng, k, d).into_vec(), vec![0.5; k * d], vec![1.0 / k as f32; k])
        .unwrap();

    let mut g = c.benchmark_group(format!("encode_batch/{}", if par::is_parallel() { "parallel" } else { "sequential" }));
    g.throughput(Throughput::Elements(videos.len() as u64));
    for knn in [1, 5] {
        let enc = Encoder::Vlad(&cb, VladParams { knn, ..VladParams::default() });
        g.bench_with_input(BenchmarkId::new("vlad", knn), &enc, |b, enc| b.iter(|| enc.encode_batch(black_box(&videos)).unwrap()));
    }
    let enc = Encoder::Fisher(&gmm, FisherParams::default());
    g.bench_function("fisher", |b| b.iter(|| enc.encode_batch(black_box(&videos)).unwrap()));
    g.bench_function("avg", |b| b.iter(|| Encoder::Average.encode_batch(black_box(&videos)).unwrap()));
    g.finish();
}

fn clustering(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let train = random_set(&mut rng, 4000, 64);
    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    g.bench_function("kmeans_k32", |b| {
        b.iter(|| {
            let params = KMeansParams { max_iter: 10, ..KMeansParams::new(32, 0) };
            fit_kmeans(black_box(&train), &params).unwrap()
        })
    });
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d, b) = (4096, 8192, 4);
    let s = d / b;
    let model = PqModel::new(d, b, 8, (0..s * 256 * b).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let w: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let clf = LinearClassifier::new(w.clone(), 0.0, 1.0).unwrap();
    let lut = build_lut(&model, &w, 0.0).unwrap();
    let mut bytes = vec![0u8; n * s];
    rng.fill_bytes(&mut bytes);
    let codes = InterleavedCodes::from_packed(&PackedCodes::from_bytes(s, 8, n, bytes).unwrap()).unwrap();
    let dense = random_set(&mut rng, n, d);

    let mut g = c.benchmark_group("score_4096_videos_d8192");
    g.throughput(Throughput::Elements(n as u64));
    g.bench_function("pq_lut", |bch| bch.iter(|| codes.score(black_box(&lut)).unwrap()));
    g.bench_function("dense_dot", |bch| bch.iter(|| clf.predict_set(black_box(&dense)).unwrap()));
    g.finish();
}

criterion_group!(benches, encoding, clustering, scoring);
criterion_main!(benches);
