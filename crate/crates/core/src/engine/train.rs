use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dualtrace_tensor::nn::{apply_buffer_updates, Forward};
use dualtrace_tensor::optim::Adam;
use dualtrace_tensor::{Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, SCHEMA_VERSION};
use super::config::{RunConfig, TrainMode};
use super::eval::{evaluate_samples, ModelScorer};
use crate::data::{crop, load_manifest, load_sample, Dihedral, Manifest, Sample, Split};
use crate::error::{Error, Result};
use crate::filters::CONSTRAINT_TOL;
use crate::losses::combined_loss;
use crate::metrics::DatasetMetrics;
use crate::model::Model;

/// Samples decoded into memory, with their source tags.
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub sources: Vec<String>,
}

impl Dataset {
    pub fn load(manifest: &Manifest, split: Split, size: u32) -> Result<Self> {
        let mut samples = Vec::new();
        let mut sources = Vec::new();
        for r in manifest.split(split) {
            samples.push(load_sample(&manifest.image_path(r), &manifest.mask_path(r), size)?);
            sources.push(r.source.clone());
        }
        if samples.is_empty() {
            return Err(Error::Data(format!("manifest has no `{split}` records")));
        }
        Ok(Self { samples, sources })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub struct Batch {
    pub images: Tensor<f32>,
    pub masks: Tensor<f32>,
    pub edges: Tensor<f32>,
}

pub fn make_batch(samples: &[&Sample]) -> Result<Batch> {
    let first = samples.first().ok_or(Error::EmptyInput("batch"))?;
    let s = first.image.shape();
    let (h, w) = (s[1], s[2]);
    let (mut img, mut mask, mut edge) = (Vec::new(), Vec::new(), Vec::new());
    for sm in samples {
        if sm.image.shape() != s {
            return Err(Error::Data("batch mixes image sizes".into()));
        }
        img.extend_from_slice(sm.image.data());
        mask.extend(sm.mask.to_f32());
        edge.extend(sm.edge.to_f32());
    }
    let n = samples.len();
    Ok(Batch {
        images: Tensor::from_vec(&[n, 3, h, w], img)?,
        masks: Tensor::from_vec(&[n, 1, h, w], mask)?,
        edges: Tensor::from_vec(&[n, 1, h, w], edge)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub total: f64,
    pub bce: f64,
    pub focal: f64,
    pub edge: f64,
    /// Worst constraint violation after the update, when verified.
    pub constraint_residual: Option<f64>,
    pub reinitialized: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub mean_loss: f64,
    pub val: Option<DatasetMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogEntry {
    Step(StepRecord),
    Epoch(EpochRecord),
}

/// Every step and epoch record of a run, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.entries.iter().filter_map(|e| match e {
            LogEntry::Epoch(s) => Some(s),
            _ => None,
        })
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::ManifestSyntax { line: i + 1, detail: e.to_string() })
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }
}

/// Model, weights and optimizer state for one run.
pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub step: u64,
    reinit_rng: ChaCha8Rng,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let o = &config.optimizer;
        let adam = Adam::new(o.betas[0], o.betas[1], o.eps);
        let (model, store) = match (&config.mode, &config.init_checkpoint) {
            (TrainMode::Finetune, Some(p)) => {
                let ck = load_checkpoint(p)?;
                // the run's ablation switches may only remove parts
                let model = ck.model.with_ablation(config.model.ablation)?;
                (model, ck.store)
            }
            _ => {
                let mut store = ParamStore::new();
                let model = Model::new(&config.model, &mut store, &mut rng(config.seed, 0))?;
                (model, store)
            }
        };
        Ok(Self { config: config.clone(), model, store, adam, step: 0, reinit_rng: rng(config.seed, 2) })
    }

    /// Forward, backward, Adam update, buffer update, then re-projection.
    pub fn train_step(&mut self, batch: &Batch, epoch: u64) -> Result<StepRecord> {
        let step = self.step + 1;
        let lr = self.config.lr(epoch, self.step);
        let (terms, grads, buffers) = {
            let g = Graph::new();
            let f = Forward::new(&g, &self.store, true);
            let x = g.constant(batch.images.clone());
            let out = self.model.forward(&f, x)?;
            let use_edge = self.config.model.ablation.use_edge_loss;
            let (loss, terms) =
                combined_loss(&g, out.mask_logit, out.edge_logit, &batch.masks, &batch.edges, &self.config.loss, use_edge)?;
            let total = terms.total(&self.config.loss.weights);
            if !total.is_finite() {
                return Err(Error::NumericalDivergence { step, loss: total });
            }
            let grads = g.backward(loss)?.params();
            if grads.iter().any(|(_, t)| !t.is_finite()) {
                return Err(Error::NumericalDivergence { step, loss: total });
            }
            (terms, grads, f.take_buffer_updates())
        };
        self.adam.step(&mut self.store, &grads, lr)?;
        apply_buffer_updates(&mut self.store, buffers);
        let reinitialized = self.model.project_constraints(&mut self.store, &mut self.reinit_rng)?;
        self.step = step;
        let constraint_residual = if step % self.config.verify_every == 0 {
            let r = self.model.constraint_residual(&self.store)?;
            if !(r <= CONSTRAINT_TOL) {
                return Err(Error::ConstraintViolation { step, residual: r });
            }
            Some(r)
        } else {
            None
        };
        Ok(StepRecord {
            step,
            epoch,
            lr,
            total: terms.total(&self.config.loss.weights),
            bce: terms.bce,
            focal: terms.focal,
            edge: terms.edge,
            constraint_residual,
            reinitialized,
        })
    }

    pub fn header(&self, epoch: u64) -> CheckpointHeader {
        let o = &self.config.optimizer;
        CheckpointHeader {
            schema_version: SCHEMA_VERSION,
            step: self.step,
            epoch,
            seed: self.config.seed,
            adam_steps: self.adam.steps(),
            betas: o.betas,
            eps: o.eps,
            model: self.model.config().clone(),
        }
    }

    pub fn save(&self, path: &Path, epoch: u64) -> Result<()> {
        save_checkpoint(path, &self.header(epoch), &self.store, &self.adam)
    }

    pub fn scorer(&self) -> ModelScorer<'_> {
        ModelScorer { model: &self.model, store: &self.store }
    }
}

/// Exclusive claim on a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { out: BufWriter::new(f), path })
    }

    fn write(&mut self, entry: &LogEntry) -> Result<()> {
        let line = serde_json::to_string(entry).expect("log entry serializes");
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(|e| Error::io(&self.path, e))
    }
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub final_checkpoint: PathBuf,
}

/// Full training run into `config.out_dir`. Progress goes to `progress`
/// (one line per epoch); the structured log goes to `train_log.jsonl`.
pub fn train(config: &RunConfig, progress: &mut dyn Write) -> Result<TrainOutcome> {
    config.validate()?;
    let manifest = load_manifest(&config.data.manifest)?;
    let train_set = Dataset::load(&manifest, config.data.train_split, config.data.input_size)?;
    let val_set = match config.data.val_split {
        Some(s) => Some(Dataset::load(&manifest, s, config.data.input_size)?),
        None => None,
    };
    train_on(config, &train_set, val_set.as_ref(), progress)
}

/// As [`train`], with datasets already in memory.
pub fn train_on(config: &RunConfig, train_set: &Dataset, val_set: Option<&Dataset>, progress: &mut dyn Write) -> Result<TrainOutcome> {
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let _lock = RunLock::acquire(out)?;
    fs::write(out.join("config.toml"), config.to_toml()).map_err(|e| Error::io(out, e))?;
    let mut trainer = Trainer::new(config)?;
    let mut writer = LogWriter::create(out.join(LOG_FILE))?;
    let mut log = TrainLog::default();
    let mut shuffle = rng(config.seed, 1);
    let mut augment = rng(config.seed, 3);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let budget = config.max_steps.unwrap_or(u64::MAX);

    for epoch in 0..config.epochs {
        if trainer.step >= budget {
            break;
        }
        order.shuffle(&mut shuffle);
        let (mut sum, mut n) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if trainer.step >= budget {
                break;
            }
            let picked: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let s = &train_set.samples[i];
                    let window = config.data.train_crop.map(|c| {
                        let (c, h, w) = (c as usize, s.image.shape()[1], s.image.shape()[2]);
                        crop(s, augment.random_range(0..=w.saturating_sub(c)), augment.random_range(0..=h.saturating_sub(c)), c)
                    });
                    let s = window.as_ref().unwrap_or(s);
                    let d = if config.data.augment { Dihedral(augment.random_range(0..8)) } else { Dihedral::IDENTITY };
                    d.apply(s)
                })
                .collect();
            let batch = make_batch(&picked.iter().collect::<Vec<_>>())?;
            let rec = match trainer.train_step(&batch, epoch) {
                Ok(r) => r,
                Err(e @ Error::NumericalDivergence { .. }) => {
                    // weights are still those of the last finite step
                    trainer.save(&out.join(LAST_GOOD_CHECKPOINT), epoch)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            sum += rec.total;
            n += 1;
            let entry = LogEntry::Step(rec);
            writer.write(&entry)?;
            log.entries.push(entry);
        }
        let val = match val_set {
            Some(v) if config.val_every > 0 && ((epoch + 1) % config.val_every == 0 || epoch + 1 == config.epochs) => {
                Some(evaluate_samples(&trainer.scorer(), v, "val", config.threshold)?)
            }
            _ => None,
        };
        let rec = EpochRecord { epoch, mean_loss: sum / n.max(1) as f64, val };
        let _ = writeln!(
            progress,
            "epoch {epoch:>3}  step {:>6}  loss {:.5}  lr {:.3e}{}",
            trainer.step,
            rec.mean_loss,
            config.lr(epoch, trainer.step),
            rec.val.as_ref().map_or(String::new(), |m| format!(
                "  val auc {}  f1 {}",
                m.auc.map_or("undefined".into(), |v| format!("{v:.4}")),
                m.f1.map_or("undefined".into(), |v| format!("{v:.4}"))
            ))
        );
        let entry = LogEntry::Epoch(rec);
        writer.write(&entry)?;
        log.entries.push(entry);
        if (epoch + 1) % config.checkpoint_every == 0 {
            trainer.save(&out.join(LAST_CHECKPOINT), epoch)?;
        }
    }
    let epoch = log.epochs().last().map_or(0, |e| e.epoch);
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    trainer.save(&final_checkpoint, epoch)?;
    Ok(TrainOutcome { log, final_checkpoint })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::data::synth::{generate_sample, SynthConfig};
    use crate::data::ForgeryKind;
    use crate::model::ModelConfig;

    pub(crate) fn tiny_model() -> ModelConfig {
        let bb = BackboneConfig { stage_dims: [8, 12, 16, 20], stage_depths: [1, 1, 1, 1], ..Default::default() };
        ModelConfig {
            rgb_backbone: bb.clone(),
            noise_backbone: BackboneConfig { in_channels: 6, ..bb },
            decoder_dims: [16, 12, 8],
            ..Default::default()
        }
    }

    pub(crate) fn tiny_dataset(n: usize, size: u32) -> Dataset {
        let cfg = SynthConfig { image_size: size, ..Default::default() };
        let kinds = [ForgeryKind::Splice, ForgeryKind::CopyMove, ForgeryKind::Removal];
        let samples: Vec<ForgerySampleSource> =
            (0..n).map(|i| (kinds[i % 3], generate_sample(&cfg, kinds[i % 3], i).unwrap())).collect();
        Dataset {
            sources: samples.iter().map(|(k, _)| k.to_string()).collect(),
            samples: samples.into_iter().map(|(_, s)| s.into()).collect(),
        }
    }

    type ForgerySampleSource = (ForgeryKind, crate::data::ForgerySample);

    pub(crate) fn tiny_run(dir: &Path) -> RunConfig {
        RunConfig {
            out_dir: dir.to_path_buf(),
            batch_size: 2,
            epochs: 2,
            data: DataConfig { input_size: 32, ..Default::default() },
            model: tiny_model(),
            optimizer: crate::engine::OptimizerConfig { lr0: 1e-3, ..Default::default() },
            ..Default::default()
        }
    }

    use crate::engine::DataConfig;

    #[test]
    fn runs_are_reproducible() {
        let data = tiny_dataset(6, 32);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = train_on(&tiny_run(a.path()), &data, Some(&data), &mut std::io::sink()).unwrap();
        let rb = train_on(&tiny_run(b.path()), &data, Some(&data), &mut std::io::sink()).unwrap();
        assert_eq!(ra.log, rb.log);
        assert_eq!(ra.log.steps().count(), 6);
        let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
        assert_eq!(read(a.path(), FINAL_CHECKPOINT), read(b.path(), FINAL_CHECKPOINT));
        assert_eq!(read(a.path(), LOG_FILE), read(b.path(), LOG_FILE));
        let parsed = TrainLog::parse_jsonl(&String::from_utf8(read(a.path(), LOG_FILE)).unwrap()).unwrap();
        assert_eq!(parsed, ra.log);
        assert!(!a.path().join(".lock").exists());
    }

    #[test]
    fn log_matches_schedule_and_terms() {
        let data = tiny_dataset(4, 32);
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { epochs: 3, schedule: crate::engine::ScheduleConfig { period: 1, ..Default::default() }, ..tiny_run(dir.path()) };
        let out = train_on(&cfg, &data, None, &mut std::io::sink()).unwrap();
        for s in out.log.steps() {
            assert_eq!(s.lr, lr_schedule_for(&cfg, s.epoch));
            assert!((s.bce + s.focal + s.edge - s.total).abs() <= 1e-9);
            assert!(s.constraint_residual.unwrap() <= CONSTRAINT_TOL);
        }
    }

    fn lr_schedule_for(cfg: &RunConfig, epoch: u64) -> f64 {
        crate::engine::lr_schedule(cfg.optimizer.lr0, &cfg.schedule, epoch)
    }

    #[test]
    fn locked_directory_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let _held = RunLock::acquire(dir.path()).unwrap();
        let data = tiny_dataset(2, 32);
        let err = train_on(&tiny_run(dir.path()), &data, None, &mut std::io::sink()).unwrap_err();
        assert!(matches!(err, Error::Locked(_)));
    }

    #[test]
    fn non_finite_loss_aborts_and_keeps_last_good() {
        let mut data = tiny_dataset(2, 32);
        data.samples[1].image.data_mut()[0] = f32::NAN;
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { batch_size: 1, epochs: 1, ..tiny_run(dir.path()) };
        let err = train_on(&cfg, &data, None, &mut std::io::sink()).unwrap_err();
        assert!(matches!(err, Error::NumericalDivergence { .. }), "{err}");
        assert_eq!(err.exit_code(), 4);
        assert!(dir.path().join(LAST_GOOD_CHECKPOINT).exists());
        // the preserved weights are finite
        let ck = load_checkpoint(&dir.path().join(LAST_GOOD_CHECKPOINT)).unwrap();
        assert!(ck.store.iter().all(|(_, p)| p.value.is_finite()));
    }

    #[test]
    fn finetune_restarts_from_checkpoint() {
        let data = tiny_dataset(4, 32);
        let dir = tempfile::tempdir().unwrap();
        let first = train_on(&tiny_run(&dir.path().join("a")), &data, None, &mut std::io::sink()).unwrap();
        let ck = load_checkpoint(&first.final_checkpoint).unwrap();
        let cfg = RunConfig {
            mode: TrainMode::Finetune,
            init_checkpoint: Some(first.final_checkpoint.clone()),
            ..tiny_run(&dir.path().join("b"))
        };
        let t = Trainer::new(&cfg).unwrap();
        assert_eq!(t.step, 0);
        assert_eq!(t.adam.steps(), 0);
        for (id, p) in ck.store.iter() {
            assert_eq!(t.store.value(id).data(), p.value.data());
        }
    }

    #[test]
    fn crops_train_on_windows_and_validate_full_frames() {
        let data = tiny_dataset(4, 64);
        let dir = tempfile::tempdir().unwrap();
        let base = tiny_run(dir.path());
        let cfg = RunConfig {
            val_every: 1,
            data: DataConfig { input_size: 64, train_crop: Some(32), ..base.data.clone() },
            ..base
        };
        let out = train_on(&cfg, &data, Some(&data), &mut std::io::sink()).unwrap();
        assert_eq!(out.log.steps().count(), 4);
        assert!(out.log.steps().all(|s| s.total.is_finite()));
    }
}
