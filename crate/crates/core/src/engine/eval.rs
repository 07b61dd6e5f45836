use std::collections::BTreeMap;

use dualtrace_tensor::{ParamStore, Tensor};

use super::train::Dataset;
use crate::data::{load_sample, Manifest, Sample, Split};
use crate::error::{Error, Result};
use crate::metrics::{DatasetMetrics, MetricsAccumulator, MetricsReport, RocAccumulator};
use crate::model::Model;

/// Anything producing per-pixel manipulation probabilities.
pub trait MaskScorer {
    /// Row-major `H × W` probabilities for one sample.
    fn score(&self, sample: &Sample) -> Result<Vec<f64>>;
}

pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub store: &'a ParamStore<f32>,
}

impl MaskScorer for ModelScorer<'_> {
    fn score(&self, sample: &Sample) -> Result<Vec<f64>> {
        let s = sample.image.shape();
        let x = Tensor::from_vec(&[1, s[0], s[1], s[2]], sample.image.data().to_vec())?;
        let p = self.model.predict_proba(self.store, &x)?;
        Ok(p.data().iter().map(|&v| v as f64).collect())
    }
}

/// Returns the ground truth itself: the upper bound of every metric.
pub struct OracleScorer;

impl MaskScorer for OracleScorer {
    fn score(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(sample.mask.data().iter().map(|&b| b as f64).collect())
    }
}

fn gt(sample: &Sample) -> Vec<f64> {
    sample.mask.data().iter().map(|&b| b as f64).collect()
}

/// Pooled metrics over an in-memory dataset.
pub fn evaluate_samples(scorer: &dyn MaskScorer, data: &Dataset, name: &str, threshold: f64) -> Result<DatasetMetrics> {
    let mut acc = MetricsAccumulator::new(threshold, RocAccumulator::exact())?;
    for s in &data.samples {
        acc.add_image(&scorer.score(s)?, &gt(s))?;
    }
    Ok(acc.finish(name))
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Restricts evaluation to one split; all records otherwise.
    pub split: Option<Split>,
    pub thresholds: Vec<f64>,
    pub input_size: u32,
    /// Prototype accumulator cloned per dataset tag.
    pub roc: RocAccumulator,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { split: None, thresholds: vec![0.5], input_size: 256, roc: RocAccumulator::exact() }
    }
}

/// One report per threshold, with a row per source tag and pooled totals.
pub fn evaluate(scorer: &dyn MaskScorer, manifest: &Manifest, opts: &EvalOptions) -> Result<Vec<MetricsReport>> {
    if opts.thresholds.is_empty() {
        return Err(Error::Config("no evaluation thresholds".into()));
    }
    let new_acc = |t: f64| MetricsAccumulator::new(t, opts.roc.clone());
    let mut pooled = opts.thresholds.iter().map(|&t| new_acc(t)).collect::<Result<Vec<_>>>()?;
    let mut per_tag: BTreeMap<String, Vec<MetricsAccumulator>> = BTreeMap::new();
    let records = manifest.records.iter().filter(|r| opts.split.is_none_or(|s| r.split == s));
    let mut seen = 0;
    for r in records {
        let sample = load_sample(&manifest.image_path(r), &manifest.mask_path(r), opts.input_size)?;
        let (scores, truth) = (scorer.score(&sample)?, gt(&sample));
        if !per_tag.contains_key(&r.source) {
            let accs = opts.thresholds.iter().map(|&t| new_acc(t)).collect::<Result<Vec<_>>>()?;
            per_tag.insert(r.source.clone(), accs);
        }
        for acc in per_tag.get_mut(&r.source).expect("inserted").iter_mut().chain(pooled.iter_mut()) {
            acc.add_image(&scores, &truth)?;
        }
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::Data("no records to evaluate".into()));
    }
    Ok(opts
        .thresholds
        .iter()
        .enumerate()
        .map(|(i, &threshold)| MetricsReport {
            threshold,
            datasets: per_tag.iter().map(|(tag, accs)| accs[i].finish(tag)).collect(),
            pooled: pooled[i].finish("pooled"),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, SynthConfig, SynthCounts};
    use crate::engine::train::tests::{tiny_dataset, tiny_model};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn synth_dir() -> (tempfile::TempDir, Manifest) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { image_size: 32, counts: SynthCounts { splice: 3, copy_move: 3, removal: 2, authentic: 0 }, ..Default::default() };
        let m = generate_synthetic(&cfg, dir.path()).unwrap();
        (dir, m)
    }

    #[test]
    fn oracle_scores_perfectly() {
        let (_d, m) = synth_dir();
        let opts = EvalOptions { split: Some(Split::Test), input_size: 32, ..Default::default() };
        let r = &evaluate(&OracleScorer, &m, &opts).unwrap()[0];
        assert_eq!((r.pooled.f1, r.pooled.auc, r.pooled.iou), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!(r.pooled.images, 2);
    }

    #[test]
    fn untrained_model_reports_are_valid_and_deterministic() {
        let (_d, m) = synth_dir();
        let mut store = ParamStore::new();
        let model = Model::new(&tiny_model(), &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let scorer = ModelScorer { model: &model, store: &store };
        let opts = EvalOptions { thresholds: vec![0.3, 0.5], input_size: 32, ..Default::default() };
        let a = evaluate(&scorer, &m, &opts).unwrap();
        assert_eq!(a, evaluate(&scorer, &m, &opts).unwrap());
        assert_eq!(a.len(), 2);
        let auc = a[0].pooled.auc.unwrap();
        assert!((0.0..=1.0).contains(&auc));
        assert_eq!(a[0].datasets.len(), 3);
    }

    #[test]
    fn sample_evaluation_matches_oracle_bound() {
        let d = tiny_dataset(3, 32);
        let m = evaluate_samples(&OracleScorer, &d, "x", 0.5).unwrap();
        assert_eq!(m.f1, Some(1.0));
    }
}
