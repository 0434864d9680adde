//! Ranked retrieval metrics, score fusion, and cosine-similarity statistics
//! between exemplar groups.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, DescriptorSet, LabelFile, ScoreFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Mean precision at the rank of each positive.
    #[default]
    NonInterpolated,
    /// Mean of the maximal precision at recall ≥ 0, 0.1, …, 1.
    Interpolated11,
}

/// AP of a ranked list of labels where `n_relevant` positives exist in
/// total (positives absent from the list count as never retrieved).
pub fn ap_of_ranking(ranked: &[bool], n_relevant: usize, mode: ApMode) -> Result<f64> {
    if n_relevant == 0 {
        return Err(Error::InsufficientData("average precision needs at least one positive".into()));
    }
    let hits_in_list = ranked.iter().filter(|&&l| l).count();
    if hits_in_list > n_relevant {
        return Err(Error::Parameter(format!(
            "{hits_in_list} positives ranked but only {n_relevant} relevant"
        )));
    }
    match mode {
        ApMode::NonInterpolated => {
            let mut hits = 0usize;
            let mut acc = 0.0;
            for (r, &l) in ranked.iter().enumerate() {
                if l {
                    hits += 1;
                    acc += hits as f64 / (r + 1) as f64;
                }
            }
            Ok(acc / n_relevant as f64)
        }
        ApMode::Interpolated11 => {
            let mut points = Vec::with_capacity(ranked.len());
            let mut hits = 0usize;
            for (r, &l) in ranked.iter().enumerate() {
                if l {
                    hits += 1;
                }
                points.push((hits as f64 / n_relevant as f64, hits as f64 / (r + 1) as f64));
            }
            let mut acc = 0.0;
            for t in 0..=10 {
                let level = t as f64 / 10.0;
                let best = points
                    .iter()
                    .filter(|(rec, _)| *rec >= level - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                acc += best;
            }
            Ok(acc / 11.0)
        }
    }
}

/// Rank order: score descending, ties by `tie_key` ascending.
fn ranking<K: Ord>(scores: &[f64], tie_key: impl Fn(usize) -> K) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| tie_key(a).cmp(&tie_key(b))));
    order
}

/// AP over parallel score and label arrays; ties broken by lower index.
pub fn average_precision_indexed(scores: &[f64], labels: &[bool], mode: ApMode) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("score {s} is not finite")));
    }
    let order = ranking(scores, |i| i);
    let ranked: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
    ap_of_ranking(&ranked, labels.iter().filter(|&&l| l).count(), mode)
}

/// AP of a score file against a label file. Ties are broken by video id;
/// labelled positives that were not scored count as misses.
pub fn average_precision(scores: &ScoreFile, labels: &LabelFile, mode: ApMode) -> Result<f64> {
    let lookup: HashMap<&str, bool> = labels.entries.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let mut ranked_labels = Vec::with_capacity(scores.entries.len());
    for (id, _) in &scores.entries {
        match lookup.get(id.as_str()) {
            Some(&l) => ranked_labels.push(l),
            None => return Err(Error::Parameter(format!("no label for scored video {id:?}"))),
        }
    }
    let values: Vec<f64> = scores.entries.iter().map(|(_, s)| *s as f64).collect();
    let order = ranking(&values, |i| scores.entries[i].0.as_str());
    let ranked: Vec<bool> = order.iter().map(|&i| ranked_labels[i]).collect();
    ap_of_ranking(&ranked, labels.n_positive(), mode)
}

pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::EmptyInput("mean AP of no events".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionNorm {
    /// Zero mean, unit variance per input before averaging.
    #[default]
    ZScore,
    Raw,
}

/// Per-video mean of (optionally z-normalized) scores. Output follows the
/// id order of the first input.
pub fn late_fuse(inputs: &[ScoreFile], norm: FusionNorm) -> Result<ScoreFile> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::EmptyInput("late fusion needs at least one score file".into()))?;
    let ids: BTreeSet<&str> = first.entries.iter().map(|(id, _)| id.as_str()).collect();
    let mut maps = Vec::with_capacity(inputs.len());
    for (k, f) in inputs.iter().enumerate() {
        let these: BTreeSet<&str> = f.entries.iter().map(|(id, _)| id.as_str()).collect();
        if these != ids {
            let diff: Vec<&str> = ids.symmetric_difference(&these).copied().collect();
            return Err(Error::Parameter(format!(
                "score file {k} has a different video set; symmetric difference: {diff:?}"
            )));
        }
        let values: Vec<f64> = f.entries.iter().map(|(_, s)| *s as f64).collect();
        let (shift, scale) = match norm {
            FusionNorm::Raw => (0.0, 1.0),
            FusionNorm::ZScore => {
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let sd = var.sqrt();
                (mean, if sd > 0.0 { 1.0 / sd } else { 1.0 })
            }
        };
        let map: HashMap<&str, f64> = f
            .entries
            .iter()
            .zip(&values)
            .map(|((id, _), &v)| (id.as_str(), (v - shift) * scale))
            .collect();
        maps.push(map);
    }
    let k = inputs.len() as f64;
    let entries = first
        .entries
        .iter()
        .map(|(id, _)| {
            let sum: f64 = maps.iter().map(|m| m[id.as_str()]).sum();
            (id.clone(), (sum / k) as f32)
        })
        .collect();
    ScoreFile::new(entries)
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = crate::math::dot(a, a).sqrt();
    let nb = crate::math::dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (crate::math::dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Normalized histograms of pos–pos and pos–neg cosine similarities on
/// `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityHistogram {
    pub bins: usize,
    pub pos_pos: Vec<f64>,
    pub pos_neg: Vec<f64>,
    pub pos_pos_mean: f64,
    pub pos_neg_mean: f64,
    pub pos_pos_pairs: usize,
    pub pos_neg_pairs: usize,
}

impl SimilarityHistogram {
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = 2.0 / self.bins as f64;
        (-1.0 + i as f64 * w, -1.0 + (i + 1) as f64 * w)
    }
}

pub const DEFAULT_BINS: usize = 100;

/// Bin of `s ∈ [−1, 1]`; 1.0 falls in the last bin.
pub fn bin_index(s: f64, bins: usize) -> usize {
    let t = ((s + 1.0) / 2.0 * bins as f64).floor();
    (t.max(0.0) as usize).min(bins - 1)
}

/// Similarity sums over pair groups, accumulated then normalized.
#[derive(Debug, Clone)]
struct PairHist {
    counts: Vec<u64>,
    sum: f64,
    n: usize,
}

impl PairHist {
    fn new(bins: usize) -> Self {
        PairHist {
            counts: vec![0; bins],
            sum: 0.0,
            n: 0,
        }
    }

    fn add(&mut self, s: f64) {
        let bins = self.counts.len();
        self.counts[bin_index(s, bins)] += 1;
        self.sum += s;
        self.n += 1;
    }

    fn density(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }
}

/// One event's exemplars for [`simstats_grouped`].
pub struct ExemplarGroup<'a> {
    pub positives: &'a DescriptorSet,
    pub negatives: &'a DescriptorSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairGrouping {
    /// Positive pairs only within the same event.
    #[default]
    WithinEvent,
    /// Positive pairs across the union of all events' positives.
    Pooled,
}

pub fn simstats(pos: &DescriptorSet, neg: &DescriptorSet, bins: usize) -> Result<SimilarityHistogram> {
    simstats_grouped(&[ExemplarGroup { positives: pos, negatives: neg }], PairGrouping::WithinEvent, bins)
}

/// Pos–pos similarities over unordered distinct pairs (per event or pooled),
/// pos–neg similarities over each event's positives against its negatives.
pub fn simstats_grouped(groups: &[ExemplarGroup<'_>], grouping: PairGrouping, bins: usize) -> Result<SimilarityHistogram> {
    if bins == 0 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("no exemplar groups".into()));
    }
    let dim = groups[0].positives.dim();
    for g in groups {
        if g.positives.n_items() < 2 || g.negatives.n_items() < 1 {
            return Err(Error::InsufficientData(format!(
                "similarity statistics need >= 2 positives and >= 1 negative, got {} and {}",
                g.positives.n_items(),
                g.negatives.n_items()
            )));
        }
        if g.positives.dim() != dim || g.negatives.dim() != dim {
            return Err(Error::Shape("exemplar groups have different dimensions".into()));
        }
    }
    let mut pp = PairHist::new(bins);
    let mut pn = PairHist::new(bins);
    let add_pairs = |hist: &mut PairHist, rows: &[&[f32]]| {
        for (i, a) in rows.iter().enumerate() {
            for b in &rows[i + 1..] {
                hist.add(cosine(a, b));
            }
        }
    };
    match grouping {
        PairGrouping::WithinEvent => {
            for g in groups {
                let rows: Vec<&[f32]> = g.positives.rows().collect();
                add_pairs(&mut pp, &rows);
            }
        }
        PairGrouping::Pooled => {
            let rows: Vec<&[f32]> = groups.iter().flat_map(|g| g.positives.rows()).collect();
            add_pairs(&mut pp, &rows);
        }
    }
    for g in groups {
        for p in g.positives.rows() {
            for q in g.negatives.rows() {
                pn.add(cosine(p, q));
            }
        }
    }
    Ok(SimilarityHistogram {
        bins,
        pos_pos: pp.density(),
        pos_neg: pn.density(),
        pos_pos_mean: pp.sum / pp.n as f64,
        pos_neg_mean: pn.sum / pn.n as f64,
        pos_pos_pairs: pp.n,
        pos_neg_pairs: pn.n,
    })
}

/// CSV with columns `bin_low,bin_high,pos_pos,pos_neg`.
pub fn write_histogram(path: impl AsRef<Path>, h: &SimilarityHistogram) -> Result<()> {
    atomic_write(path.as_ref(), |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_low", "bin_high", "pos_pos", "pos_neg"])?;
        for i in 0..h.bins {
            let (lo, hi) = h.edges(i);
            out.write_record([
                lo.to_string(),
                hi.to_string(),
                h.pos_pos[i].to_string(),
                h.pos_neg[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn files(scores: &[(&str, f32)], labels: &[(&str, bool)]) -> (ScoreFile, LabelFile) {
        (
            ScoreFile::new(scores.iter().map(|(i, s)| (i.to_string(), *s)).collect()).unwrap(),
            LabelFile::new(labels.iter().map(|(i, l)| (i.to_string(), *l)).collect()).unwrap(),
        )
    }

    /// Counts positives ranked at or above each positive, by explicit scan.
    fn brute_ap(scores: &[f64], labels: &[bool]) -> f64 {
        let n = scores.len();
        let p = labels.iter().filter(|&&l| l).count();
        let mut acc = 0.0;
        for i in 0..n {
            if !labels[i] {
                continue;
            }
            let ahead = |j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
            let rank = (0..n).filter(|&j| ahead(j)).count();
            let pos_ahead = (0..n).filter(|&j| labels[j] && ahead(j)).count();
            acc += pos_ahead as f64 / rank as f64;
        }
        acc / p as f64
    }

    #[test]
    fn hand_cases() {
        let (s, l) = files(&[("a", 3.0), ("b", 2.0), ("c", 1.0)], &[("a", true), ("b", false), ("c", true)]);
        assert!((average_precision(&s, &l, ApMode::NonInterpolated).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        let (s, l) = files(&[("a", 3.0), ("b", 2.0), ("c", 1.0)], &[("a", true), ("b", true), ("c", false)]);
        assert_eq!(average_precision(&s, &l, ApMode::NonInterpolated).unwrap(), 1.0);
    }

    #[test]
    fn ties_resolve_by_id() {
        let (s, l) = files(&[("b", 1.0), ("a", 1.0)], &[("a", false), ("b", true)]);
        assert_eq!(average_precision(&s, &l, ApMode::NonInterpolated).unwrap(), 0.5);
    }

    #[test]
    fn errors() {
        let (s, l) = files(&[("a", 1.0)], &[("a", false)]);
        assert!(matches!(average_precision(&s, &l, ApMode::NonInterpolated), Err(Error::InsufficientData(_))));
        let (s, l) = files(&[("zz", 1.0)], &[("a", true)]);
        let err = average_precision(&s, &l, ApMode::NonInterpolated).unwrap_err();
        assert!(err.to_string().contains("zz"));
        assert!(mean_ap(&[]).is_err());
    }

    #[test]
    fn unscored_positive_is_a_miss() {
        let (s, l) = files(&[("a", 1.0)], &[("a", true), ("b", true)]);
        assert_eq!(average_precision(&s, &l, ApMode::NonInterpolated).unwrap(), 0.5);
    }

    #[test]
    fn interpolated_examples() {
        assert!((ap_of_ranking(&[true, false, true], 2, ApMode::Interpolated11).unwrap() - (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
        assert_eq!(ap_of_ranking(&[true, true], 2, ApMode::Interpolated11).unwrap(), 1.0);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let n = rng.random_range(1..60);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) / 2.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            labels[rng.random_range(0..n)] = true;
            let got = average_precision_indexed(&scores, &labels, ApMode::NonInterpolated).unwrap();
            assert!((got - brute_ap(&scores, &labels)).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_ap_examples() {
        assert_eq!(mean_ap(&[1.0]).unwrap(), 1.0);
        assert!((mean_ap(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn fusion_preserves_shared_ranking() {
        let a = ScoreFile::new(vec![("x".into(), 1.0), ("y".into(), 3.0), ("z".into(), 2.0)]).unwrap();
        let b = ScoreFile::new(vec![("z".into(), 102.0), ("x".into(), 101.0), ("y".into(), 103.0)]).unwrap();
        for norm in [FusionNorm::ZScore, FusionNorm::Raw] {
            let f = late_fuse(&[a.clone(), b.clone()], norm).unwrap();
            let mut ids: Vec<(String, f32)> = f.entries.clone();
            ids.sort_by(|p, q| q.1.total_cmp(&p.1));
            assert_eq!(ids.iter().map(|p| p.0.as_str()).collect::<Vec<_>>(), ["y", "z", "x"]);
        }
        let single = late_fuse(std::slice::from_ref(&a), FusionNorm::Raw).unwrap();
        assert_eq!(single, a);
    }

    #[test]
    fn fusion_reports_mismatch() {
        let a = ScoreFile::new(vec![("x".into(), 1.0), ("y".into(), 3.0)]).unwrap();
        let b = ScoreFile::new(vec![("x".into(), 1.0), ("w".into(), 3.0)]).unwrap();
        let err = late_fuse(&[a, b], FusionNorm::ZScore).unwrap_err().to_string();
        assert!(err.contains("\"w\"") && err.contains("\"y\""));
    }

    #[test]
    fn simstats_extremes() {
        let pos = DescriptorSet::from_rows(&[[1.0f32, 0.0], [2.0, 0.0], [3.0, 0.0]]).unwrap();
        let neg = DescriptorSet::from_rows(&[[0.0f32, 1.0]]).unwrap();
        let h = simstats(&pos, &neg, 10).unwrap();
        assert_eq!(h.pos_pos[9], 1.0);
        assert_eq!(h.pos_neg[bin_index(0.0, 10)], 1.0);
        assert_eq!(h.pos_pos_pairs, 3);
        assert_eq!(h.pos_neg_pairs, 3);
        let zero = DescriptorSet::from_rows(&[[0.0f32, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(simstats(&zero, &neg, 4).unwrap().pos_pos_mean, 0.0);
        assert!(simstats(&neg, &neg, 4).is_err());
    }

    #[test]
    fn simstats_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mk = |rng: &mut ChaCha8Rng, n: usize| {
            DescriptorSet::new(n, 5, (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let pos = mk(&mut rng, 60);
        let neg = mk(&mut rng, 140);
        let h = simstats(&pos, &neg, 20).unwrap();
        let mut pp = vec![0f64; 20];
        let mut pn = vec![0f64; 20];
        for i in 0..60 {
            for j in 0..60 {
                if i < j {
                    let (a, b) = (pos.row(i), pos.row(j));
                    let c = a.iter().zip(b).map(|(x, y)| (x * y) as f64).sum::<f64>()
                        / (a.iter().map(|x| (x * x) as f64).sum::<f64>().sqrt() * b.iter().map(|x| (x * x) as f64).sum::<f64>().sqrt());
                    pp[bin_index(c, 20)] += 1.0 / 1770.0;
                }
            }
            for j in 0..140 {
                let (a, b) = (pos.row(i), neg.row(j));
                let c = a.iter().zip(b).map(|(x, y)| (x * y) as f64).sum::<f64>()
                    / (a.iter().map(|x| (x * x) as f64).sum::<f64>().sqrt() * b.iter().map(|x| (x * x) as f64).sum::<f64>().sqrt());
                pn[bin_index(c, 20)] += 1.0 / 8400.0;
            }
        }
        for b in 0..20 {
            assert!((h.pos_pos[b] - pp[b]).abs() < 1e-9);
            assert!((h.pos_neg[b] - pn[b]).abs() < 1e-9);
        }
        assert!((h.pos_pos.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pooled_grouping_counts_cross_event_pairs() {
        let p1 = DescriptorSet::from_rows(&[[1.0f32, 0.0], [1.0, 0.1]]).unwrap();
        let p2 = DescriptorSet::from_rows(&[[0.0f32, 1.0], [0.1, 1.0]]).unwrap();
        let n = DescriptorSet::from_rows(&[[1.0f32, 1.0]]).unwrap();
        let groups = [
            ExemplarGroup { positives: &p1, negatives: &n },
            ExemplarGroup { positives: &p2, negatives: &n },
        ];
        assert_eq!(simstats_grouped(&groups, PairGrouping::WithinEvent, 10).unwrap().pos_pos_pairs, 2);
        assert_eq!(simstats_grouped(&groups, PairGrouping::Pooled, 10).unwrap().pos_pos_pairs, 6);
    }

    proptest! {
        #[test]
        fn ap_monotone_invariant(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            labels[0] = true;
            let a = average_precision_indexed(&scores, &labels, ApMode::NonInterpolated).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (s * 2.0).exp() + 1.0).collect();
            let b = average_precision_indexed(&t, &labels, ApMode::NonInterpolated).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn mean_ap_order_invariant(mut v in proptest::collection::vec(0.0f64..1.0, 1..20)) {
            let a = mean_ap(&v).unwrap();
            v.reverse();
            prop_assert!((a - mean_ap(&v).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn simstats_swap_invariant(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f32>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let pos = DescriptorSet::from_rows(&rows).unwrap();
            let mut swapped = rows.clone();
            swapped.swap(0, 4);
            let pos2 = DescriptorSet::from_rows(&swapped).unwrap();
            let neg = DescriptorSet::from_rows(&[[0.3f32, 0.2, -0.1]]).unwrap();
            let a = simstats(&pos, &neg, 16).unwrap();
            let b = simstats(&pos2, &neg, 16).unwrap();
            prop_assert_eq!(a.pos_pos, b.pos_pos);
            prop_assert_eq!(a.pos_neg, b.pos_neg);
        }
    }
}
