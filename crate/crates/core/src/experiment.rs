//! End-to-end evaluation on a synthetic corpus: codebooks, encoding, per-event
//! linear SVMs, mAP on the test split, optional PQ-compressed scoring and
//! cosine-similarity statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{cross_validate_linear, train_linear_svm, LinearSvmParams};
use crate::codebook::{fit_gmm, fit_kmeans, GmmParams, KMeansParams};
use crate::encode::{stack, Encoder, EncoderKind, FisherParams, NormOrder, VladParams};
use crate::error::{Error, Result};
use crate::eval::{average_precision_indexed, mean_ap, simstats_grouped, ApMode, ExemplarGroup, PairGrouping, DEFAULT_BINS};
use crate::io::DescriptorSet;
use crate::pq::{build_lut, fit_pq, pq_encode_set, score_batch, PqParams};
use crate::preprocess::{fit_pca, prepare_frames, PcaModel, DEFAULT_WHITEN_EPS};
use crate::synth::{generate, Split, SynthConfig, SynthCorpus};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub encoders: Vec<EncoderKind>,
    /// PCA output dimension for FV/VLAD frames; `None` skips PCA.
    pub pca_dim: Option<usize>,
    pub whiten: bool,
    /// Codebook size for VLAD.
    pub k: usize,
    /// Mixture size for FV.
    pub gmm_k: usize,
    pub knn: usize,
    pub intra: bool,
    pub ssr: bool,
    pub norm_order: NormOrder,
    pub c: f64,
    /// Cross-validate `C` over `c_grid` with this many folds; 0 keeps `c`.
    pub cv_folds: usize,
    pub c_grid: Vec<f64>,
    /// Also score through PQ codes with `(B, m)`.
    pub pq: Option<(usize, u32)>,
    /// Frames sampled from training videos to fit PCA and codebooks.
    pub codebook_frames: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            encoders: vec![EncoderKind::Avg, EncoderKind::Vlad],
            pca_dim: Some(32),
            whiten: false,
            k: 32,
            gmm_k: 16,
            knn: 5,
            intra: true,
            ssr: true,
            norm_order: NormOrder::IntraThenSsr,
            c: 1.0,
            cv_folds: 0,
            c_grid: crate::classify::DEFAULT_C_GRID.to_vec(),
            pq: None,
            codebook_frames: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncoderReport {
    pub encoder: EncoderKind,
    pub dim: usize,
    /// Per-event AP on the test split.
    pub ap: Vec<f64>,
    pub map: f64,
    /// `C` used for each event.
    pub c: Vec<f64>,
    pub pq_ap: Option<Vec<f64>>,
    pub pq_map: Option<f64>,
    pub pos_pos_mean: f64,
    pub pos_neg_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub encoders: Vec<EncoderReport>,
}

impl ExperimentReport {
    pub fn get(&self, kind: EncoderKind) -> Option<&EncoderReport> {
        self.encoders.iter().find(|r| r.encoder == kind)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.encoders.is_empty() {
            return Err(Error::Parameter("no encoders selected".into()));
        }
        if let Some(p) = self.pca_dim {
            if p == 0 || p > self.synth.dim {
                return Err(Error::Parameter(format!("pca_dim {p} must be in 1..={}", self.synth.dim)));
            }
        }
        if self.k == 0 || self.gmm_k == 0 || self.knn == 0 || self.knn > self.k {
            return Err(Error::Parameter(format!("need k, gmm_k >= 1 and 1 <= knn <= k, got k={} knn={}", self.k, self.knn)));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Parameter(format!("C must be positive, got {}", self.c)));
        }
        if self.cv_folds == 1 {
            return Err(Error::Parameter("cv_folds must be 0 or at least 2".into()));
        }
        if self.codebook_frames == 0 {
            return Err(Error::Parameter("codebook_frames must be positive".into()));
        }
        Ok(())
    }
}

/// Deterministic sample of training frames.
fn frame_sample(corpus: &SynthCorpus, limit: usize, seed: u64) -> Result<DescriptorSet> {
    let train: Vec<DescriptorSet> = corpus
        .videos
        .iter()
        .filter(|v| v.split == Split::Train)
        .map(|v| v.frames.clone())
        .collect();
    let all = DescriptorSet::concat(&train)?;
    if all.n_items() <= limit {
        return Ok(all);
    }
    let mut idx: Vec<usize> = (0..all.n_items()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(limit);
    idx.sort_unstable();
    Ok(all.select(&idx))
}

fn encode_corpus(cfg: &ExperimentConfig, corpus: &SynthCorpus, kind: EncoderKind, sample: &DescriptorSet, pca: Option<&PcaModel>) -> Result<DescriptorSet> {
    let frames: Vec<&DescriptorSet> = corpus.videos.iter().map(|v| &v.frames).collect();
    if kind == EncoderKind::Avg {
        let reps = par::map(&frames, |f| Encoder::Average.encode(f)).into_iter().collect::<Result<Vec<_>>>()?;
        return stack(&reps);
    }
    let prepared_sample = prepare_frames(sample, pca)?;
    let prepared = par::map(&frames, |f| prepare_frames(f, pca)).into_iter().collect::<Result<Vec<_>>>()?;
    let reps = match kind {
        EncoderKind::Vlad => {
            let cb = fit_kmeans(&prepared_sample, &KMeansParams::new(cfg.k, cfg.seed))?;
            let p = VladParams {
                knn: cfg.knn,
                intra: cfg.intra,
                ssr: cfg.ssr,
                l2: true,
                order: cfg.norm_order,
            };
            Encoder::Vlad(&cb, p).encode_batch(&prepared)?
        }
        EncoderKind::Fv => {
            let gmm = fit_gmm(&prepared_sample, &GmmParams::new(cfg.gmm_k, cfg.seed))?;
            let p = FisherParams { ssr: cfg.ssr, l2: true };
            Encoder::Fisher(&gmm, p).encode_batch(&prepared)?
        }
        EncoderKind::Avg => unreachable!(),
    };
    stack(&reps)
}

fn evaluate_encoder(cfg: &ExperimentConfig, corpus: &SynthCorpus, kind: EncoderKind, x: &DescriptorSet) -> Result<EncoderReport> {
    let events = corpus.events();
    let pq_model = match cfg.pq {
        Some((b, m)) => {
            let train = x.select(&corpus.split_indices(Split::Train));
            Some(fit_pq(&train, &PqParams::new(b, m, cfg.seed))?)
        }
        None => None,
    };
    let test_idx = corpus.split_indices(Split::Test);
    let x_test = x.select(&test_idx);
    let test_codes = match &pq_model {
        Some(model) => Some(pq_encode_set(model, &x_test)?),
        None => None,
    };
    let mut ap = Vec::with_capacity(events);
    let mut pq_ap = Vec::with_capacity(events);
    let mut cs = Vec::with_capacity(events);
    for e in 0..events {
        let (idx, labels) = corpus.train_set(e);
        let xt = x.select(&idx);
        let c = if cfg.cv_folds >= 2 {
            cross_validate_linear(&xt, &labels, &cfg.c_grid, cfg.cv_folds, cfg.seed)?.best.c
        } else {
            cfg.c
        };
        let clf = train_linear_svm(&xt, &labels, &LinearSvmParams::new(c, cfg.seed))?;
        let (_, test_labels) = corpus.test_set(e);
        ap.push(average_precision_indexed(&clf.predict_set(&x_test)?, &test_labels, ApMode::NonInterpolated)?);
        if let (Some(model), Some(codes)) = (&pq_model, &test_codes) {
            let lut = build_lut(model, clf.w(), clf.bias())?;
            pq_ap.push(average_precision_indexed(&score_batch(&lut, codes)?, &test_labels, ApMode::NonInterpolated)?);
        }
        cs.push(c);
    }
    let neg_idx: Vec<usize> = (0..corpus.videos.len())
        .filter(|&i| corpus.videos[i].split == Split::Train && corpus.videos[i].event.is_none())
        .collect();
    let negatives = x.select(&neg_idx);
    let positives: Vec<DescriptorSet> = (0..events)
        .map(|e| {
            let (idx, labels) = corpus.train_set(e);
            let pos: Vec<usize> = idx.iter().zip(&labels).filter(|(_, &l)| l).map(|(&i, _)| i).collect();
            x.select(&pos)
        })
        .collect();
    let groups: Vec<ExemplarGroup<'_>> = positives
        .iter()
        .map(|p| ExemplarGroup { positives: p, negatives: &negatives })
        .collect();
    let hist = simstats_grouped(&groups, PairGrouping::WithinEvent, DEFAULT_BINS)?;
    Ok(EncoderReport {
        encoder: kind,
        dim: x.dim(),
        map: mean_ap(&ap)?,
        ap,
        c: cs,
        pq_map: if pq_model.is_some() { Some(mean_ap(&pq_ap)?) } else { None },
        pq_ap: pq_model.is_some().then_some(pq_ap),
        pos_pos_mean: hist.pos_pos_mean,
        pos_neg_mean: hist.pos_neg_mean,
    })
}

/// Runs the configured pipeline on a freshly generated corpus.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let corpus = generate(&cfg.synth)?;
    run_on(cfg, &corpus)
}

/// Runs the configured pipeline on an existing corpus.
pub fn run_on(cfg: &ExperimentConfig, corpus: &SynthCorpus) -> Result<ExperimentReport> {
    cfg.validate()?;
    let sample = frame_sample(corpus, cfg.codebook_frames, cfg.seed)?;
    let pca = match cfg.pca_dim {
        Some(p) => Some(fit_pca(&prepare_frames(&sample, None)?, p, cfg.whiten, DEFAULT_WHITEN_EPS)?),
        None => None,
    };
    let mut encoders = Vec::with_capacity(cfg.encoders.len());
    for &kind in &cfg.encoders {
        let x = encode_corpus(cfg, corpus, kind, &sample, pca.as_ref())?;
        log::info!("encoded {} videos with {} into {} dims", x.n_items(), kind.as_str(), x.dim());
        encoders.push(evaluate_encoder(cfg, corpus, kind, &x)?);
    }
    Ok(ExperimentReport { config: cfg.clone(), encoders })
}
