//! Pixel-level F1, IoU and ROC-AUC.
//!
//! Counts and ROC accumulators merge associatively, so shards of a test set
//! can be scored independently and combined.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 4096;

/// Rejects thresholds outside the open unit interval.
pub fn check_threshold(threshold: f64) -> Result<f64> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(threshold)
    } else {
        Err(Error::InvalidThreshold(threshold))
    }
}

fn check_lengths(scores: &[f64], gt: &[f64]) -> Result<()> {
    if scores.len() != gt.len() {
        return Err(Error::Tensor(dualtrace_tensor::TensorError::shape(
            "metrics",
            format!("{} scores for {} labels", scores.len(), gt.len()),
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    /// A pixel is predicted positive when its score is at least `threshold`;
    /// ground truth is positive above 0.5.
    pub fn from_scores(scores: &[f64], gt: &[f64], threshold: f64) -> Result<Self> {
        check_lengths(scores, gt)?;
        let mut c = Self::default();
        for (&s, &g) in scores.iter().zip(gt) {
            c.add(s >= threshold, g > 0.5);
        }
        Ok(c)
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `2TP / (2TP + FP + FN)`.
    pub fn f1(&self) -> Result<f64> {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            return Err(Error::NoPositives);
        }
        Ok(2.0 * self.tp as f64 / den as f64)
    }

    /// `TP / (TP + FP + FN)`.
    pub fn iou(&self) -> Result<f64> {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            return Err(Error::NoPositives);
        }
        Ok(self.tp as f64 / den as f64)
    }
}

pub fn pixel_f1(scores: &[f64], gt: &[f64], threshold: f64) -> Result<f64> {
    ConfusionCounts::from_scores(scores, gt, check_threshold(threshold)?)?.f1()
}

pub fn iou(scores: &[f64], gt: &[f64], threshold: f64) -> Result<f64> {
    ConfusionCounts::from_scores(scores, gt, check_threshold(threshold)?)?.iou()
}

/// Exact AUC: the Mann–Whitney statistic over average ranks, normalized by
/// `P·N`; tied positive/negative pairs count one half.
pub fn pixel_auc(scores: &[f64], gt: &[f64]) -> Result<f64> {
    check_lengths(scores, gt)?;
    let mut pairs: Vec<(f64, bool)> = scores.iter().zip(gt).map(|(&s, &g)| (s, g > 0.5)).collect();
    auc_of_pairs(&mut pairs)
}

fn auc_of_pairs(pairs: &mut [(f64, bool)]) -> Result<f64> {
    let pos = pairs.iter().filter(|p| p.1).count() as f64;
    let neg = pairs.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::DegenerateLabels);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * pairs[i..j].iter().filter(|p| p.1).count() as f64;
        i = j;
    }
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// ROC accumulator: raw `(score, label)` pairs in exact mode, per-bin
/// counts over `[0, 1]` in streaming mode.
#[derive(Clone, Debug, PartialEq)]
pub enum RocAccumulator {
    Exact(Vec<(f64, bool)>),
    Streaming { pos: Vec<u64>, neg: Vec<u64> },
}

impl RocAccumulator {
    pub fn exact() -> Self {
        Self::Exact(Vec::new())
    }

    pub fn streaming(bins: usize) -> Self {
        let bins = bins.max(1);
        Self::Streaming { pos: vec![0; bins], neg: vec![0; bins] }
    }

    fn bin(score: f64, bins: usize) -> usize {
        let s = if score.is_nan() { 0.0 } else { score.clamp(0.0, 1.0) };
        ((s * bins as f64) as usize).min(bins - 1)
    }

    pub fn add(&mut self, score: f64, positive: bool) {
        match self {
            Self::Exact(pairs) => pairs.push((score, positive)),
            Self::Streaming { pos, neg } => {
                let b = Self::bin(score, pos.len());
                if positive {
                    pos[b] += 1;
                } else {
                    neg[b] += 1;
                }
            }
        }
    }

    pub fn extend(&mut self, scores: &[f64], gt: &[f64]) -> Result<()> {
        check_lengths(scores, gt)?;
        for (&s, &g) in scores.iter().zip(gt) {
            self.add(s, g > 0.5);
        }
        Ok(())
    }

    /// Combines two accumulators of the same mode and bin count.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        match (self, other) {
            (Self::Exact(a), Self::Exact(b)) => a.extend_from_slice(b),
            (Self::Streaming { pos, neg }, Self::Streaming { pos: p2, neg: n2 }) if pos.len() == p2.len() => {
                pos.iter_mut().zip(p2).for_each(|(a, b)| *a += b);
                neg.iter_mut().zip(n2).for_each(|(a, b)| *a += b);
            }
            _ => return Err(Error::Config("cannot merge ROC accumulators of different modes".into())),
        }
        Ok(())
    }

    pub fn counts(&self) -> (u64, u64) {
        match self {
            Self::Exact(p) => {
                let pos = p.iter().filter(|x| x.1).count() as u64;
                (pos, p.len() as u64 - pos)
            }
            Self::Streaming { pos, neg } => (pos.iter().sum(), neg.iter().sum()),
        }
    }

    /// Exact mode ranks the stored pairs; streaming mode credits pairs in the
    /// same bin with one half.
    pub fn auc(&self) -> Result<f64> {
        match self {
            Self::Exact(pairs) => auc_of_pairs(&mut pairs.clone()),
            Self::Streaming { pos, neg } => {
                let (p, n) = self.counts();
                if p == 0 || n == 0 {
                    return Err(Error::DegenerateLabels);
                }
                let mut below = 0u64;
                let mut credit = 0.0;
                for (&pb, &nb) in pos.iter().zip(neg) {
                    credit += pb as f64 * (below as f64 + 0.5 * nb as f64);
                    below += nb;
                }
                Ok(credit / (p as f64 * n as f64))
            }
        }
    }

    /// Threshold maximizing F1 over the bin edges (streaming) or the distinct
    /// scores (exact), with that F1.
    pub fn best_f1(&self) -> Result<(f64, f64)> {
        let hist = match self {
            Self::Exact(pairs) => {
                let mut h = Self::streaming(DEFAULT_BINS);
                pairs.iter().for_each(|&(s, l)| h.add(s, l));
                h
            }
            s => s.clone(),
        };
        let Self::Streaming { pos, neg } = &hist else { unreachable!() };
        let bins = pos.len();
        let (total_pos, _) = hist.counts();
        let (mut tp, mut fp) = (0u64, 0u64);
        let mut best: Option<(f64, f64)> = None;
        for b in (0..bins).rev() {
            tp += pos[b];
            fp += neg[b];
            let den = 2 * tp + fp + (total_pos - tp);
            if den == 0 {
                continue;
            }
            let f1 = 2.0 * tp as f64 / den as f64;
            if best.is_none_or(|(_, f)| f1 > f) {
                best = Some((b as f64 / bins as f64, f1));
            }
        }
        best.ok_or(Error::NoPositives)
    }
}

/// Running pixel statistics for one dataset: pooled counts, an ROC
/// accumulator and per-image F1/IoU for macro averages.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub roc: RocAccumulator,
    per_image: Vec<(Option<f64>, Option<f64>)>,
}

impl MetricsAccumulator {
    pub fn new(threshold: f64, roc: RocAccumulator) -> Result<Self> {
        Ok(Self { threshold: check_threshold(threshold)?, counts: ConfusionCounts::default(), roc, per_image: Vec::new() })
    }

    pub fn add_image(&mut self, scores: &[f64], gt: &[f64]) -> Result<()> {
        let c = ConfusionCounts::from_scores(scores, gt, self.threshold)?;
        self.roc.extend(scores, gt)?;
        self.counts.merge(&c);
        self.per_image.push((c.f1().ok(), c.iou().ok()));
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.counts.merge(&other.counts);
        self.roc.merge(&other.roc)?;
        self.per_image.extend_from_slice(&other.per_image);
        Ok(())
    }

    pub fn images(&self) -> usize {
        self.per_image.len()
    }

    pub fn finish(&self, name: &str) -> DatasetMetrics {
        let mean = |f: fn(&(Option<f64>, Option<f64>)) -> Option<f64>| {
            let v: Vec<f64> = self.per_image.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let (pos, neg) = self.roc.counts();
        DatasetMetrics {
            name: name.to_string(),
            images: self.per_image.len(),
            pixels: self.counts.total(),
            positive_pixels: pos,
            negative_pixels: neg,
            threshold: self.threshold,
            counts: self.counts,
            f1: self.counts.f1().ok(),
            iou: self.counts.iou().ok(),
            auc: self.roc.auc().ok(),
            macro_f1: mean(|p| p.0),
            macro_iou: mean(|p| p.1),
        }
    }
}

/// Metrics of one dataset tag. Undefined values (no positives, single-class
/// ground truth) are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub name: String,
    pub images: usize,
    pub pixels: u64,
    pub positive_pixels: u64,
    pub negative_pixels: u64,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub iou: Option<f64>,
    pub macro_f1: Option<f64>,
    pub macro_iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub datasets: Vec<DatasetMetrics>,
    pub pooled: DatasetMetrics,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "threshold {}", self.threshold)?;
        writeln!(f, "{:<16} {:>7} {:>12} {:>9} {:>9} {:>9}", "dataset", "images", "pixels", "F1", "AUC", "IoU")?;
        for d in self.datasets.iter().chain(std::iter::once(&self.pooled)) {
            writeln!(
                f,
                "{:<16} {:>7} {:>12} {:>9} {:>9} {:>9}",
                d.name,
                d.images,
                d.pixels,
                opt(d.f1),
                opt(d.auc),
                opt(d.iou)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(scores: &[f64], gt: &[f64]) -> f64 {
        let (mut credit, mut pairs) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            if gt[i] < 0.5 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if gt[j] > 0.5 {
                    continue;
                }
                pairs += 1.0;
                credit += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
        credit / pairs
    }

    #[test]
    fn f1_and_iou_reference_values() {
        let gt = [1.0, 1.0, 0.0, 0.0];
        let pred = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(pixel_f1(&pred, &gt, 0.5).unwrap(), 0.5);
        assert!((iou(&pred, &gt, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(pixel_f1(&gt, &gt, 0.5).unwrap(), 1.0);
        assert_eq!(iou(&gt, &gt, 0.5).unwrap(), 1.0);
        let inv = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(pixel_f1(&inv, &gt, 0.5).unwrap(), 0.0);
        assert_eq!(iou(&inv, &gt, 0.5).unwrap(), 0.0);
        assert!(matches!(pixel_f1(&[0.1; 4], &[0.0; 4], 0.5), Err(Error::NoPositives)));
        assert!(matches!(iou(&[0.1; 4], &[0.0; 4], 0.0), Err(Error::InvalidThreshold(_))));
    }

    #[test]
    fn auc_reference_values() {
        assert_eq!(pixel_auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.75);
        assert_eq!(pixel_auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(pixel_auc(&[0.8, 0.9, 0.1, 0.2], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(pixel_auc(&[0.5; 4], &[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.5);
        assert!(matches!(pixel_auc(&[0.5, 0.2], &[1.0, 1.0]), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn streaming_auc_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let gt: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let scores: Vec<f64> = gt.iter().map(|&g| (0.35 * g + rng.random_range(0.0..0.65f64)).clamp(0.0, 1.0)).collect();
        let exact = pixel_auc(&scores, &gt).unwrap();
        let mut last = f64::INFINITY;
        for bins in [16, 256, 4096] {
            let mut acc = RocAccumulator::streaming(bins);
            acc.extend(&scores, &gt).unwrap();
            let err = (acc.auc().unwrap() - exact).abs();
            assert!(err <= last, "bins {bins}: {err} > {last}");
            last = err;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn accumulators_merge_like_a_single_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt: Vec<f64> = (0..600).map(|i| (i % 4 == 0) as u8 as f64).collect();
        let scores: Vec<f64> = (0..600).map(|_| rng.random_range(0.0..1.0)).collect();
        for mode in [RocAccumulator::exact(), RocAccumulator::streaming(64)] {
            let mut whole = MetricsAccumulator::new(0.5, mode.clone()).unwrap();
            for c in 0..3 {
                whole.add_image(&scores[c * 200..(c + 1) * 200], &gt[c * 200..(c + 1) * 200]).unwrap();
            }
            let mut parts: Vec<MetricsAccumulator> = (0..3)
                .map(|c| {
                    let mut a = MetricsAccumulator::new(0.5, mode.clone()).unwrap();
                    a.add_image(&scores[c * 200..(c + 1) * 200], &gt[c * 200..(c + 1) * 200]).unwrap();
                    a
                })
                .collect();
            let (c2, rest) = parts.split_last_mut().unwrap();
            let (a, b) = rest.split_at_mut(1);
            b[0].merge(c2).unwrap();
            a[0].merge(&b[0]).unwrap();
            let (x, y) = (whole.finish("d"), a[0].finish("d"));
            assert_eq!(x.counts, y.counts);
            assert!((x.auc.unwrap() - y.auc.unwrap()).abs() < 1e-12);
        }
        let mut a = RocAccumulator::exact();
        assert!(a.merge(&RocAccumulator::streaming(4)).is_err());
    }

    #[test]
    fn best_threshold_sweep_finds_separating_edge() {
        let mut acc = RocAccumulator::streaming(10);
        acc.extend(&[0.05, 0.15, 0.75, 0.85], &[0.0, 0.0, 1.0, 1.0]).unwrap();
        let (t, f1) = acc.best_f1().unwrap();
        assert_eq!(f1, 1.0);
        assert!(t > 0.15 && t <= 0.75);
    }

    #[test]
    fn report_marks_undefined_metrics() {
        let mut acc = MetricsAccumulator::new(0.5, RocAccumulator::exact()).unwrap();
        acc.add_image(&[0.1, 0.2], &[0.0, 0.0]).unwrap();
        let d = acc.finish("authentic");
        assert_eq!((d.f1, d.iou, d.auc), (None, None, None));
        let report = MetricsReport { threshold: 0.5, datasets: vec![d.clone()], pooled: d };
        assert!(report.to_string().contains("undefined"));
        let back: MetricsReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    proptest! {
        #[test]
        fn exact_auc_matches_pair_counting(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 19.0).collect();
            let gt: Vec<f64> = data.iter().map(|d| d.1 as u8 as f64).collect();
            let pos = gt.iter().filter(|&&g| g > 0.5).count();
            prop_assume!(pos > 0 && pos < gt.len());
            let exact = pixel_auc(&scores, &gt).unwrap();
            prop_assert!((exact - brute_auc(&scores, &gt)).abs() < 1e-12);
        }

        #[test]
        fn f1_iou_identity_and_permutation_invariance(
            data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..300),
            rot in 0usize..300,
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
            let gt: Vec<f64> = data.iter().map(|d| d.1 as u8 as f64).collect();
            let c = ConfusionCounts::from_scores(&scores, &gt, 0.5).unwrap();
            prop_assert_eq!(c.total() as usize, scores.len());
            if let (Ok(f1), Ok(j)) = (c.f1(), c.iou()) {
                prop_assert!((f1 - 2.0 * j / (1.0 + j)).abs() < 1e-9);
            }
            let k = rot % scores.len();
            let (mut s2, mut g2) = (scores.clone(), gt.clone());
            s2.rotate_left(k);
            g2.rotate_left(k);
            prop_assert_eq!(ConfusionCounts::from_scores(&s2, &g2, 0.5).unwrap(), c);
            if let Ok(a) = pixel_auc(&scores, &gt) {
                prop_assert!((a - pixel_auc(&s2, &g2).unwrap()).abs() < 1e-12);
            }
        }
    }
}
