use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{ClipPolicy, OptimizerKind};
use crate::tasks::{SplitSizes, TaskSpec};

use super::model::{CellKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Constant,
    /// Halve after three epochs without validation improvement.
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSettings {
    #[serde(default = "default_optimizer")]
    pub kind: OptimizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<ClipPolicy>,
    #[serde(default)]
    pub schedule: ScheduleKind,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::RmsProp
}
fn default_lr() -> f64 {
    1e-3
}

impl Default for OptimSettings {
    fn default() -> Self {
        OptimSettings {
            kind: default_optimizer(),
            lr: default_lr(),
            clip: Some(ClipPolicy::Component { c: 1.0 }),
            schedule: ScheduleKind::Constant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_updates: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<u64>,
    /// Evaluate every this many updates; 0 evaluates at epoch ends only.
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u64,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    /// Seed for initialization, shuffling and dropout.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads per minibatch; 1 is bit-reproducible.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_batch() -> usize {
    20
}
fn default_eval_interval() -> u64 {
    1000
}
fn default_eval_batch() -> usize {
    500
}
fn default_threads() -> usize {
    1
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            batch: default_batch(),
            max_updates: None,
            max_epochs: None,
            eval_interval: default_eval_interval(),
            eval_batch: default_eval_batch(),
            seed: 0,
            threads: default_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    #[serde(default)]
    pub sizes: SplitSizes,
    /// Seed of the generated datasets.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
    /// Directory for `best.ckpt` and `final.ckpt`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    /// Record wall-clock seconds in the metrics file. Disable for
    /// byte-identical metrics across runs.
    #[serde(default = "default_wall_clock")]
    pub wall_clock: bool,
}

fn default_wall_clock() -> bool {
    true
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings {
            metrics: None,
            checkpoint_dir: None,
            wall_clock: true,
        }
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub optim: OptimSettings,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub data: DataSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

impl TrainConfig {
    pub fn new(task: TaskSpec, model: ModelSpec) -> Self {
        TrainConfig {
            task,
            model,
            optim: OptimSettings::default(),
            run: RunSettings::default(),
            data: DataSettings::default(),
            output: OutputSettings::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        match (self.model.cell, &self.task) {
            (CellKind::Highway, TaskSpec::Mnist) => {}
            (CellKind::Highway, _) => {
                return Err(Error::Config("the highway model runs on the mnist task only".into()))
            }
            (_, TaskSpec::Mnist) => {
                return Err(Error::Config("the mnist task needs the highway model".into()))
            }
            _ => {}
        }
        let r = &self.run;
        if r.batch == 0 || r.eval_batch == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if r.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if r.max_updates.is_none() && r.max_epochs.is_none() {
            return Err(Error::Config("set max_updates and/or max_epochs".into()));
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.optim.lr)));
        }
        if let Some(c) = &self.optim.clip {
            c.validate()?;
        }
        let s = self.data.sizes;
        if s.train == 0 || s.valid == 0 {
            return Err(Error::Config("train and validation sets must be non-empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamKind;

    fn sample() -> TrainConfig {
        let mut model = ModelSpec::new(CellKind::Gru, 64, ParamKind::LowRankDiag, Some(24));
        model.carry_bias = 4.0;
        let mut c = TrainConfig::new(TaskSpec::Copy { lag: 50, variant: Default::default() }, model);
        c.optim.clip = Some(ClipPolicy::NormWithNanRecovery { c: 1.0 });
        c.run.max_updates = Some(100);
        c.output.metrics = Some("runs/m.csv".into());
        c
    }

    #[test]
    fn toml_round_trip() {
        let c = sample();
        let text = c.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = sample().to_toml().unwrap().replace("[run]", "[run]\nbogus = 3");
        assert!(TrainConfig::from_toml(&text).is_err());
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let c = TrainConfig::from_toml(
            "[task]\nname = \"addition\"\nlength = 100\n[model]\ncell = \"gru\"\nn = 64\nd = 24\nparam = \"lr\"\n[run]\nmax_updates = 10\n",
        )
        .unwrap();
        assert_eq!(c.run.batch, 20);
        assert_eq!(c.optim.clip, Some(ClipPolicy::Component { c: 1.0 }));
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let mut c = sample();
        c.run.max_updates = None;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.optim.lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = sample();
        c.model.cell = CellKind::Highway;
        assert!(c.validate().is_err());
    }
}
