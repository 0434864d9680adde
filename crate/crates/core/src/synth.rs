//! Seeded synthetic corpora of frame-descriptor videos.
//!
//! Background frames come from a shared mixture of non-negative Gaussian
//! clusters. Each event owns a pair of locations `g ± δ_e` placed
//! symmetrically around the background mean `g`, and a positive video swaps
//! a fraction of its frames for an equal number of draws from each side of
//! the pair. The event shifts where frames fall but barely moves their
//! average.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_descriptors, write_labels, DescriptorSet, LabelFile};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub events: usize,
    /// Training positives per event.
    pub train_pos: usize,
    /// Training negatives, shared by all events.
    pub train_neg: usize,
    /// Test positives per event.
    pub test_pos: usize,
    /// Test background videos.
    pub test_neg: usize,
    pub dim: usize,
    pub background_clusters: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Fraction of a positive video's frames drawn from its event.
    pub event_fraction: f64,
    /// Per-coordinate offset of the event pair, relative to the background mean.
    pub event_spread: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            events: 5,
            train_pos: 100,
            train_neg: 1000,
            test_pos: 40,
            test_neg: 1800,
            dim: 64,
            background_clusters: 12,
            min_frames: 10,
            max_frames: 50,
            event_fraction: 0.3,
            event_spread: 0.7,
            noise: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if self.events == 0 {
            return bad("synthetic corpus needs at least one event".into());
        }
        if self.train_pos == 0 || self.train_neg == 0 || self.test_pos == 0 {
            return bad("every event needs training positives, training negatives and test positives".into());
        }
        if self.dim == 0 || self.background_clusters == 0 {
            return bad("dim and background_clusters must be positive".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!("frame range {}..={} is empty", self.min_frames, self.max_frames));
        }
        if !(self.event_fraction > 0.0 && self.event_fraction <= 1.0) {
            return bad(format!("event_fraction {} must be in (0, 1]", self.event_fraction));
        }
        if !(self.event_spread > 0.0 && self.event_spread < 1.0) {
            return bad(format!("event_spread {} must be in (0, 1)", self.event_spread));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise {} must be non-negative", self.noise));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub id: String,
    pub split: Split,
    /// Event shown in the video; `None` for background.
    pub event: Option<usize>,
    pub frames: DescriptorSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub videos: Vec<SynthVideo>,
}

/// Generative parameters drawn from the seed.
struct World {
    clusters: Vec<Vec<f64>>,
    events: Vec<(Vec<f64>, Vec<f64>)>,
}

fn mix(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl World {
    fn new(cfg: &SynthConfig) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, u64::MAX));
        let clusters: Vec<Vec<f64>> = (0..cfg.background_clusters)
            .map(|_| {
                (0..cfg.dim)
                    .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.2..1.0) })
                    .collect()
            })
            .collect();
        let mut g = vec![0.0; cfg.dim];
        for c in &clusters {
            g.iter_mut().zip(c).for_each(|(a, &v)| *a += v / clusters.len() as f64);
        }
        let events = (0..cfg.events)
            .map(|_| {
                let delta: Vec<f64> = g
                    .iter()
                    .map(|&m| m * cfg.event_spread * rng.random_range(-1.0..1.0))
                    .collect();
                let plus = g.iter().zip(&delta).map(|(m, d)| m + d).collect();
                let minus = g.iter().zip(&delta).map(|(m, d)| m - d).collect();
                (plus, minus)
            })
            .collect();
        World { clusters, events }
    }

    fn frame(&self, center: &[f64], noise: &Normal<f64>, rng: &mut ChaCha8Rng, out: &mut Vec<f32>) {
        out.extend(center.iter().map(|&c| (c + noise.sample(rng)).max(0.0) as f32));
    }

    fn video(&self, cfg: &SynthConfig, event: Option<usize>, stream: u64) -> DescriptorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, stream));
        let noise = Normal::new(0.0, cfg.noise).expect("noise validated non-negative");
        let n = rng.random_range(cfg.min_frames..=cfg.max_frames);
        let n_event = match event {
            Some(_) => ((cfg.event_fraction * n as f64).round() as usize).clamp(1, n),
            None => 0,
        };
        let mut data = Vec::with_capacity(n * cfg.dim);
        for t in 0..n {
            match event {
                Some(e) if t < n_event => {
                    let (plus, minus) = &self.events[e];
                    let side = if t % 2 == 0 { plus } else { minus };
                    self.frame(side, &noise, &mut rng, &mut data);
                }
                _ => {
                    let c = rng.random_range(0..self.clusters.len());
                    self.frame(&self.clusters[c], &noise, &mut rng, &mut data);
                }
            }
        }
        // event frames are interleaved with background ones
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let rows: Vec<&[f32]> = order.iter().map(|&i| &data[i * cfg.dim..(i + 1) * cfg.dim]).collect();
        DescriptorSet::from_rows(&rows).expect("generated frames are finite and rectangular")
    }
}

/// Builds the corpus. Video `i` depends only on `(seed, i)`, so the result
/// is independent of the thread count.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let world = World::new(cfg);
    let mut plan: Vec<(String, Split, Option<usize>)> = Vec::new();
    for e in 0..cfg.events {
        for i in 0..cfg.train_pos {
            plan.push((format!("train_e{e}_{i:05}"), Split::Train, Some(e)));
        }
    }
    for i in 0..cfg.train_neg {
        plan.push((format!("train_bg_{i:05}"), Split::Train, None));
    }
    for e in 0..cfg.events {
        for i in 0..cfg.test_pos {
            plan.push((format!("test_e{e}_{i:05}"), Split::Test, Some(e)));
        }
    }
    for i in 0..cfg.test_neg {
        plan.push((format!("test_bg_{i:05}"), Split::Test, None));
    }
    let frames = par::map_range(plan.len(), |i| world.video(cfg, plan[i].2, i as u64));
    let videos = plan
        .into_iter()
        .zip(frames)
        .map(|((id, split, event), frames)| SynthVideo { id, split, event, frames })
        .collect();
    Ok(SynthCorpus { config: cfg.clone(), videos })
}

impl SynthCorpus {
    pub fn events(&self) -> usize {
        self.config.events
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.videos.len()).filter(|&i| self.videos[i].split == split).collect()
    }

    /// Training set of event `e`: its own positives plus the shared
    /// background. Other events' training positives are left out.
    pub fn train_set(&self, e: usize) -> (Vec<usize>, Vec<bool>) {
        let idx: Vec<usize> = (0..self.videos.len())
            .filter(|&i| {
                let v = &self.videos[i];
                v.split == Split::Train && (v.event.is_none() || v.event == Some(e))
            })
            .collect();
        let labels = idx.iter().map(|&i| self.videos[i].event == Some(e)).collect();
        (idx, labels)
    }

    /// Every test video, positive iff it shows event `e`.
    pub fn test_set(&self, e: usize) -> (Vec<usize>, Vec<bool>) {
        let idx = self.split_indices(Split::Test);
        let labels = idx.iter().map(|&i| self.videos[i].event == Some(e)).collect();
        (idx, labels)
    }

    fn label_file(&self, idx: &[usize], labels: &[bool]) -> Result<LabelFile> {
        LabelFile::new(idx.iter().zip(labels).map(|(&i, &l)| (self.videos[i].id.clone(), l)).collect())
    }

    /// Writes `videos/<id>.vdsc`, `labels/event<e>_{train,test}.csv` and
    /// `corpus.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let vdir = dir.join("videos");
        let ldir = dir.join("labels");
        for d in [&vdir, &ldir] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        par::map(&self.videos, |v| write_descriptors(vdir.join(format!("{}.vdsc", v.id)), &v.frames))
            .into_iter()
            .collect::<Result<Vec<()>>>()?;
        for e in 0..self.events() {
            let (idx, labels) = self.train_set(e);
            write_labels(ldir.join(format!("event{e}_train.csv")), &self.label_file(&idx, &labels)?)?;
            let (idx, labels) = self.test_set(e);
            write_labels(ldir.join(format!("event{e}_test.csv")), &self.label_file(&idx, &labels)?)?;
        }
        let manifest = serde_json::to_vec_pretty(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        crate::io::atomic_write(&dir.join("corpus.json"), |w| w.write_all(&manifest))
    }
}
