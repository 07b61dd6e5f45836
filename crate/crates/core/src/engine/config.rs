use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr0: f64,
    pub betas: [f64; 2],
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, lr0: 1e-4, betas: [0.9, 0.999], eps: 1e-8 }
    }
}

/// What the decay period counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayUnit {
    Epoch,
    Step,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub factor: f64,
    pub period: u64,
    pub unit: DecayUnit,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { factor: 0.8, period: 10, unit: DecayUnit::Epoch }
    }
}

/// Step decay: `lr0 * factor^floor(t / period)`.
pub fn lr_schedule(lr0: f64, schedule: &ScheduleConfig, t: u64) -> f64 {
    lr0 * schedule.factor.powi((t / schedule.period) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Pretrain,
    /// Starts from `init_checkpoint` with fresh optimizer state and the
    /// schedule restarted.
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub manifest: PathBuf,
    pub train_split: Split,
    /// Evaluated every `val_every` epochs when set.
    pub val_split: Option<Split>,
    pub input_size: u32,
    /// Random flips and quarter turns of training samples.
    pub augment: bool,
    /// Trains on random square windows of this side instead of whole images.
    pub train_crop: Option<u32>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { manifest: PathBuf::from("data/manifest.jsonl"), train_split: Split::Train, val_split: None, input_size: 256, augment: true, train_crop: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: TrainMode,
    pub init_checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub batch_size: usize,
    pub epochs: u64,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<u64>,
    /// Epochs between `last.ckpt` writes.
    pub checkpoint_every: u64,
    /// Steps between constraint verifications.
    pub verify_every: u64,
    pub val_every: u64,
    pub threshold: f64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            mode: TrainMode::Pretrain,
            init_checkpoint: None,
            out_dir: PathBuf::from("runs/default"),
            batch_size: 16,
            epochs: 150,
            max_steps: None,
            checkpoint_every: 10,
            verify_every: 1,
            val_every: 10,
            threshold: 0.5,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr0 > 0.0 && o.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", o.lr0)));
        }
        if !o.betas.iter().all(|b| (0.0..1.0).contains(b)) || !(o.eps > 0.0) {
            return Err(Error::Config("betas must lie in [0, 1) and eps be positive".into()));
        }
        let s = &self.schedule;
        if !(s.factor > 0.0 && s.factor < 1.0) {
            return Err(Error::Config(format!("schedule factor must lie in (0, 1), got {}", s.factor)));
        }
        if s.period < 1 {
            return Err(Error::Config("schedule period must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.checkpoint_every < 1 || self.verify_every < 1 {
            return Err(Error::Config("checkpoint_every and verify_every must be at least 1".into()));
        }
        if self.mode == TrainMode::Finetune && self.init_checkpoint.is_none() {
            return Err(Error::Config("finetune mode needs init_checkpoint".into()));
        }
        crate::metrics::check_threshold(self.threshold).map_err(|_| {
            Error::Config(format!("threshold {} outside (0, 1)", self.threshold))
        })?;
        let stride = self.model.total_stride() as u32;
        if self.data.input_size == 0 || self.data.input_size % stride != 0 {
            return Err(Error::Config(format!("input_size {} is not a multiple of {stride}", self.data.input_size)));
        }
        if let Some(c) = self.data.train_crop {
            if c == 0 || c % stride != 0 || c > self.data.input_size {
                return Err(Error::Config(format!(
                    "train_crop {c} must be a multiple of {stride} no larger than input_size {}",
                    self.data.input_size
                )));
            }
        }
        self.model.validate()?;
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Learning rate for a given epoch and global step.
    pub fn lr(&self, epoch: u64, step: u64) -> f64 {
        let t = match self.schedule.unit {
            DecayUnit::Epoch => epoch,
            DecayUnit::Step => step,
        };
        lr_schedule(self.optimizer.lr0, &self.schedule, t)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            fix(&mut cfg.out_dir);
            fix(&mut cfg.data.manifest);
            if let Some(p) = cfg.init_checkpoint.as_mut() {
                fix(p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
