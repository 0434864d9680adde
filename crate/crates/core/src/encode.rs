//! Video-level encoders: average pooling, Fisher vectors and VLAD-k.
//!
//! Fisher and VLAD encoders expect frames that have already gone through the
//! same preprocessing (ℓ2 + PCA) used to train their GMM or codebook; see
//! [`crate::preprocess::prepare_frames`].

use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, GmmModel};
use crate::error::{Error, Result};
use crate::io::DescriptorSet;
use crate::math::k_smallest;
use crate::par;

/// Posteriors below this are skipped when accumulating Fisher statistics.
pub const FISHER_POSTERIOR_SKIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Avg,
    Fv,
    Vlad,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Avg => "avg",
            EncoderKind::Fv => "fv",
            EncoderKind::Vlad => "vlad",
        }
    }
}

/// Order of the two per-vector normalizations applied before the final ℓ2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormOrder {
    #[default]
    IntraThenSsr,
    SsrThenIntra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingMeta {
    pub k: Option<usize>,
    pub input_dim: usize,
    pub knn: Option<usize>,
    pub ssr: bool,
    pub intra: bool,
    pub l2: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRepresentation {
    pub encoder: EncoderKind,
    pub vector: Vec<f32>,
    pub meta: EncodingMeta,
}

impl VideoRepresentation {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// One-row descriptor set, the on-disk form.
    pub fn to_descriptor_set(&self) -> Result<DescriptorSet> {
        DescriptorSet::single(self.vector.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherParams {
    pub ssr: bool,
    pub l2: bool,
}

impl Default for FisherParams {
    fn default() -> Self {
        FisherParams { ssr: true, l2: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VladParams {
    pub knn: usize,
    pub intra: bool,
    pub ssr: bool,
    pub l2: bool,
    pub order: NormOrder,
}

impl Default for VladParams {
    fn default() -> Self {
        VladParams {
            knn: 5,
            intra: true,
            ssr: true,
            l2: true,
            order: NormOrder::IntraThenSsr,
        }
    }
}

impl VladParams {
    pub fn raw(knn: usize) -> Self {
        VladParams {
            knn,
            intra: false,
            ssr: false,
            l2: false,
            order: NormOrder::IntraThenSsr,
        }
    }
}

fn require_frames(frames: &DescriptorSet) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("video has no descriptors".into()));
    }
    Ok(())
}

fn l2_in_place(v: &mut [f64]) {
    let n = crate::math::norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn ssr_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.signum() * x.abs().sqrt();
    }
}

fn intra_in_place(v: &mut [f64], block: usize) {
    for b in v.chunks_exact_mut(block) {
        l2_in_place(b);
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Signed square root, elementwise.
pub fn ssr(v: &[f32]) -> Vec<f32> {
    v.iter().map(|&z| z.signum() * z.abs().sqrt()).collect()
}

/// ℓ2-normalize each contiguous block of `block_dim` values; zero blocks stay zero.
pub fn intra_normalize(v: &[f32], k: usize, block_dim: usize) -> Result<Vec<f32>> {
    if block_dim == 0 || v.len() != k * block_dim {
        return Err(Error::Shape(format!(
            "vector of length {} is not {k} blocks of {block_dim}",
            v.len()
        )));
    }
    let mut w: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    intra_in_place(&mut w, block_dim);
    Ok(to_f32(&w))
}

/// ℓ2-normalize each frame, average, then re-normalize.
pub fn average_pool(frames: &DescriptorSet) -> Result<VideoRepresentation> {
    require_frames(frames)?;
    let d = frames.dim();
    let mut acc = vec![0f64; d];
    let mut row = vec![0f64; d];
    for r in frames.rows() {
        row.iter_mut().zip(r).for_each(|(a, &x)| *a = x as f64);
        l2_in_place(&mut row);
        acc.iter_mut().zip(&row).for_each(|(a, x)| *a += x);
    }
    let n = frames.n_items() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    l2_in_place(&mut acc);
    Ok(VideoRepresentation {
        encoder: EncoderKind::Avg,
        vector: to_f32(&acc),
        meta: EncodingMeta {
            k: None,
            input_dim: d,
            knn: None,
            ssr: false,
            intra: false,
            l2: true,
        },
    })
}

/// Fisher vector: first- and second-order deviations for every component,
/// all `u_k` followed by all `v_k` (length `2·D′·K`).
pub fn fisher_encode(gmm: &GmmModel, frames: &DescriptorSet, params: &FisherParams) -> Result<VideoRepresentation> {
    require_frames(frames)?;
    let d = gmm.dim();
    let k = gmm.k();
    if frames.dim() != d {
        return Err(Error::Shape(format!("frames have dim {}, gmm expects {d}", frames.dim())));
    }
    let mut u = vec![0f64; k * d];
    let mut v = vec![0f64; k * d];
    let mut q = vec![0f64; k];
    let inv_sigma: Vec<f64> = gmm.variances().iter().map(|&s| 1.0 / (s as f64).sqrt()).collect();
    for x in frames.rows() {
        gmm.posteriors_into(x, &mut q)?;
        for (j, &w) in q.iter().enumerate() {
            if w < FISHER_POSTERIOR_SKIP {
                continue;
            }
            let mu = gmm.mean(j);
            let is = &inv_sigma[j * d..(j + 1) * d];
            let uj = &mut u[j * d..(j + 1) * d];
            let vj = &mut v[j * d..(j + 1) * d];
            for t in 0..d {
                let z = (x[t] as f64 - mu[t] as f64) * is[t];
                uj[t] += w * z;
                vj[t] += w * (z * z - 1.0);
            }
        }
    }
    let n = frames.n_items() as f64;
    for j in 0..k {
        let pi = gmm.priors()[j] as f64;
        let su = 1.0 / (n * pi.sqrt());
        let sv = 1.0 / (n * (2.0 * pi).sqrt());
        u[j * d..(j + 1) * d].iter_mut().for_each(|x| *x *= su);
        v[j * d..(j + 1) * d].iter_mut().for_each(|x| *x *= sv);
    }
    u.extend_from_slice(&v);
    if params.ssr {
        ssr_in_place(&mut u);
    }
    if params.l2 {
        l2_in_place(&mut u);
    }
    Ok(VideoRepresentation {
        encoder: EncoderKind::Fv,
        vector: to_f32(&u),
        meta: EncodingMeta {
            k: Some(k),
            input_dim: d,
            knn: None,
            ssr: params.ssr,
            intra: false,
            l2: params.l2,
        },
    })
}

/// VLAD-k: each descriptor adds its residual to the blocks of its `knn`
/// nearest centers (ties to the lowest index). Length `D′·K`.
pub fn vlad_encode(codebook: &Codebook, frames: &DescriptorSet, params: &VladParams) -> Result<VideoRepresentation> {
    require_frames(frames)?;
    let d = codebook.dim();
    let k = codebook.k();
    if frames.dim() != d {
        return Err(Error::Shape(format!("frames have dim {}, codebook expects {d}", frames.dim())));
    }
    if params.knn == 0 || params.knn > k {
        return Err(Error::Parameter(format!("knn={} must be in 1..={k}", params.knn)));
    }
    let mut acc = vec![0f64; k * d];
    let mut dist = vec![0f64; k];
    for x in frames.rows() {
        codebook.distances(x, &mut dist);
        let nearest = if params.knn == 1 {
            vec![crate::math::argmin(&dist)]
        } else {
            k_smallest(&dist, params.knn)
        };
        for j in nearest {
            let c = codebook.center(j);
            for (a, (&xv, &cv)) in acc[j * d..(j + 1) * d].iter_mut().zip(x.iter().zip(c)) {
                *a += xv as f64 - cv as f64;
            }
        }
    }
    match params.order {
        NormOrder::IntraThenSsr => {
            if params.intra {
                intra_in_place(&mut acc, d);
            }
            if params.ssr {
                ssr_in_place(&mut acc);
            }
        }
        NormOrder::SsrThenIntra => {
            if params.ssr {
                ssr_in_place(&mut acc);
            }
            if params.intra {
                intra_in_place(&mut acc, d);
            }
        }
    }
    if params.l2 {
        l2_in_place(&mut acc);
    }
    Ok(VideoRepresentation {
        encoder: EncoderKind::Vlad,
        vector: to_f32(&acc),
        meta: EncodingMeta {
            k: Some(k),
            input_dim: d,
            knn: Some(params.knn),
            ssr: params.ssr,
            intra: params.intra,
            l2: params.l2,
        },
    })
}

/// A configured encoder, applied to many videos.
#[derive(Debug, Clone, Copy)]
pub enum Encoder<'a> {
    Average,
    Fisher(&'a GmmModel, FisherParams),
    Vlad(&'a Codebook, VladParams),
}

impl Encoder<'_> {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Average => EncoderKind::Avg,
            Encoder::Fisher(..) => EncoderKind::Fv,
            Encoder::Vlad(..) => EncoderKind::Vlad,
        }
    }

    /// Output length for frames of dimension `input_dim`.
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            Encoder::Average => input_dim,
            Encoder::Fisher(g, _) => 2 * g.dim() * g.k(),
            Encoder::Vlad(c, _) => c.dim() * c.k(),
        }
    }

    pub fn encode(&self, frames: &DescriptorSet) -> Result<VideoRepresentation> {
        match self {
            Encoder::Average => average_pool(frames),
            Encoder::Fisher(g, p) => fisher_encode(g, frames, p),
            Encoder::Vlad(c, p) => vlad_encode(c, frames, p),
        }
    }

    /// Encode videos in parallel; output order matches input order.
    pub fn encode_batch(&self, videos: &[DescriptorSet]) -> Result<Vec<VideoRepresentation>> {
        par::map(videos, |v| self.encode(v)).into_iter().collect()
    }
}

/// Stack representations into an `n × dim` feature matrix.
pub fn stack(reps: &[VideoRepresentation]) -> Result<DescriptorSet> {
    DescriptorSet::from_rows(&reps.iter().map(|r| r.vector.as_slice()).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: &[&[f32]]) -> DescriptorSet {
        DescriptorSet::from_rows(rows).unwrap()
    }

    fn random_frames(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DescriptorSet {
        DescriptorSet::new(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn average_examples() {
        let u = [0.6f32, 0.8];
        assert_eq!(average_pool(&set(&[&u, &u])).unwrap().vector, u.to_vec());
        let v = average_pool(&set(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap().vector;
        assert!((v[0] - 0.70710677).abs() < 1e-6 && (v[1] - 0.70710677).abs() < 1e-6);
        let single = average_pool(&set(&[&[3.0, 4.0]])).unwrap().vector;
        assert_eq!(single, vec![0.6, 0.8]);
        assert!(matches!(average_pool(&DescriptorSet::empty(2).unwrap()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn fisher_frames_at_mean() {
        let g = GmmModel::new(1, 3, vec![1.0, 2.0, 3.0], vec![0.5, 2.0, 1.0], vec![1.0]).unwrap();
        let frames = set(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]);
        let p = FisherParams { ssr: false, l2: false };
        let v = fisher_encode(&g, &frames, &p).unwrap().vector;
        let s = -1.0 / 2f32.sqrt();
        assert_eq!(&v[..3], &[0.0, 0.0, 0.0]);
        for x in &v[3..] {
            assert!((x - s).abs() < 1e-7);
        }
    }

    #[test]
    fn fisher_dimension() {
        let (d, k) = (4, 3);
        let g = GmmModel::new(k, d, vec![0.0; k * d], vec![1.0; k * d], vec![1.0 / 3.0; k]).unwrap();
        let v = fisher_encode(&g, &set(&[&[0.1, 0.2, 0.3, 0.4]]), &FisherParams::default()).unwrap();
        assert_eq!(v.dim(), 2 * d * k);
        assert!((crate::math::norm(&v.vector.iter().map(|&x| x as f64).collect::<Vec<_>>()) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn vlad_hand_example() {
        let cb = Codebook::new(2, 2, vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let frames = set(&[&[0.1, 0.0], &[2.0, 2.2]]);
        let v = vlad_encode(&cb, &frames, &VladParams::raw(1)).unwrap().vector;
        let want = [0.1f32, 0.0, 0.0, 0.2];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-6, "{v:?}");
        }
        let single = vlad_encode(&Codebook::new(1, 2, vec![0.0, 0.0]).unwrap(), &set(&[&[0.3, -0.7]]), &VladParams::raw(1))
            .unwrap()
            .vector;
        assert_eq!(single, vec![0.3, -0.7]);
    }

    #[test]
    fn vlad_knn_validation() {
        let cb = Codebook::new(2, 1, vec![0.0, 1.0]).unwrap();
        let frames = set(&[&[0.5]]);
        assert!(matches!(vlad_encode(&cb, &frames, &VladParams::raw(3)), Err(Error::Parameter(_))));
        assert!(matches!(vlad_encode(&cb, &frames, &VladParams::raw(0)), Err(Error::Parameter(_))));
        // knn = K: the residual goes to every block
        let v = vlad_encode(&cb, &frames, &VladParams::raw(2)).unwrap().vector;
        assert_eq!(v, vec![0.5, -0.5]);
    }

    #[test]
    fn vlad_intra_blocks_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cb = Codebook::new(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let frames = random_frames(&mut rng, 30, 3);
        let p = VladParams { knn: 2, l2: false, ssr: false, ..VladParams::default() };
        let v = vlad_encode(&cb, &frames, &p).unwrap().vector;
        for b in v.chunks(3) {
            let n: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn norm_order_changes_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cb = Codebook::new(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let frames = random_frames(&mut rng, 20, 4);
        let p = VladParams { knn: 2, ..VladParams::default() };
        let a = vlad_encode(&cb, &frames, &p).unwrap().vector;
        let b = vlad_encode(&cb, &frames, &VladParams { order: NormOrder::SsrThenIntra, ..p })
            .unwrap()
            .vector;
        assert_ne!(a, b);
    }

    #[test]
    fn ssr_examples() {
        assert_eq!(ssr(&[4.0, -9.0, 0.0]), vec![2.0, -3.0, 0.0]);
    }

    #[test]
    fn intra_examples() {
        assert_eq!(intra_normalize(&[3.0, 4.0, 0.0, 0.0], 2, 2).unwrap(), vec![0.6, 0.8, 0.0, 0.0]);
        let v = intra_normalize(&[1.0, 1.0, 1.0, 1.0], 2, 2).unwrap();
        for b in v.chunks(2) {
            assert!((b[0] * b[0] + b[1] * b[1] - 1.0).abs() < 1e-6);
        }
        assert!(matches!(intra_normalize(&[1.0; 5], 2, 2), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn ssr_stays_in_unit_interval(v in proptest::collection::vec(-1.0f32..=1.0, 1..50)) {
            for z in ssr(&v) {
                prop_assert!((-1.0..=1.0).contains(&z));
            }
        }

        #[test]
        fn intra_block_norms(v in proptest::collection::vec(-5.0f32..5.0, 12)) {
            let w = intra_normalize(&v, 4, 3).unwrap();
            for b in w.chunks(3) {
                let n: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
                prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn permutation_and_duplication_invariance(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames = random_frames(&mut rng, 12, 3);
            let mut perm: Vec<usize> = (0..12).collect();
            perm.reverse();
            perm.swap(2, 7);
            let shuffled = frames.select(&perm);
            let doubled = DescriptorSet::concat(&[frames.clone(), frames.clone()]).unwrap();
            let cb = Codebook::new(3, 3, (0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let g = GmmModel::new(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(), vec![1.0; 6], vec![0.4, 0.6]).unwrap();
            let encs = [
                Encoder::Average,
                Encoder::Fisher(&g, FisherParams::default()),
                Encoder::Vlad(&cb, VladParams { knn: 2, ..VladParams::default() }),
            ];
            for e in encs {
                let base = e.encode(&frames).unwrap().vector;
                for other in [&shuffled, &doubled] {
                    let v = e.encode(other).unwrap().vector;
                    for (a, b) in base.iter().zip(&v) {
                        prop_assert!((a - b).abs() < 1e-6, "{:?}", e.kind());
                    }
                }
            }
        }
    }
}
