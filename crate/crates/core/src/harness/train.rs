use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::optim::{clip, ClipOutcome, ClipPolicy, Optimizer, PlateauSchedule};
use crate::tasks::{load_mnist_dir, make_split, mnist_split, Split};

use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::config::{ScheduleKind, TrainConfig};
use super::metrics::{MetricsRow, MetricsWriter};
use super::model::{build_model, Evaluation, Model};

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Parameters with the lowest validation loss seen at any evaluation.
    pub best_model: Model,
    pub best_valid: f64,
    pub best_update: u64,
    pub rows: Vec<MetricsRow>,
    pub updates: u64,
    pub epochs: u64,
    pub skipped: u64,
    pub final_lr: f64,
    /// Set when an observer ended the run early.
    pub stopped_early: bool,
}

/// Builds the train/validation/test split a config asks for. MNIST tasks
/// read `data.mnist_dir`.
pub fn load_split(config: &TrainConfig) -> Result<Split> {
    if config.task.needs_mnist() {
        let dir = config
            .data
            .mnist_dir
            .as_ref()
            .ok_or_else(|| Error::Usage("MNIST tasks need an MNIST directory".into()))?;
        let data = load_mnist_dir(dir)?;
        mnist_split(&config.task, &data, config.data.sizes)
    } else {
        make_split(&config.task, config.data.sizes, config.data.seed)
    }
}

/// Loads data and trains as configured.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let split = load_split(config)?;
    train_on(config, &split, &mut |_| true)
}

/// Trains a freshly built model on a prepared split. `observer` sees every
/// metrics row and may return `false` to stop.
pub fn train_on(
    config: &TrainConfig,
    split: &Split,
    observer: &mut dyn FnMut(&MetricsRow) -> bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut init = Rng::new(config.run.seed).fork("init");
    let model = build_model(&config.model, &config.task, &mut init)?;
    fit(model, config, split, observer)
}

struct Run<'a> {
    config: &'a TrainConfig,
    split: &'a Split,
    started: Instant,
    writer: Option<MetricsWriter>,
    rows: Vec<MetricsRow>,
    best: Option<(f64, u64, Model)>,
    loss_sum: f64,
    loss_count: u64,
    grad_norm: Option<f64>,
}

impl Run<'_> {
    fn evaluate(&self, model: &Model) -> Result<Evaluation> {
        model.evaluate(&self.split.valid, self.config.run.eval_batch)
    }

    fn record(
        &mut self,
        model: &Model,
        update: u64,
        epoch: u64,
        lr: f64,
        skipped: u64,
        eval: Evaluation,
    ) -> Result<MetricsRow> {
        let row = MetricsRow {
            update,
            epoch,
            train_loss: (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64),
            valid_loss: eval.loss,
            valid_accuracy: eval.accuracy,
            lr,
            grad_norm: self.grad_norm,
            skipped,
            wall_seconds: self
                .config
                .output
                .wall_clock
                .then(|| self.started.elapsed().as_secs_f64()),
        };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        if let Some(w) = &mut self.writer {
            w.write(&row)?;
        }
        self.rows.push(row.clone());
        let improved = match &self.best {
            None => true,
            Some((best, _, _)) => eval.loss < *best,
        };
        if improved {
            self.best = Some((eval.loss, update, model.clone()));
        }
        Ok(row)
    }
}

fn checkpoint_path(config: &TrainConfig, file: &str) -> Option<PathBuf> {
    config.output.checkpoint_dir.as_ref().map(|d| d.join(file))
}

struct Snapshot<'a> {
    update: u64,
    epoch: u64,
    optimizer: &'a Optimizer,
    shuffle: &'a Rng,
    dropout: &'a Rng,
    schedule: &'a Option<PlateauSchedule>,
    best_valid: Option<f64>,
    skipped: u64,
}

fn save(path: &Path, config: &TrainConfig, model: &Model, s: &Snapshot) -> Result<()> {
    let meta = CheckpointMeta {
        config: config.clone(),
        update: s.update,
        epoch: s.epoch,
        lr: s.optimizer.lr(),
        optimizer_steps: s.optimizer.step_count(),
        shuffle_rng: Some(s.shuffle.state()),
        dropout_rng: Some(s.dropout.state()),
        schedule: s.schedule.clone(),
        best_valid: s.best_valid,
        skipped: s.skipped,
    };
    save_checkpoint(path, &meta, model, Some(s.optimizer))
}

/// Trains `model` with the optimization, run and output settings of
/// `config` on `split`. The task and model sections of `config` are only
/// recorded in checkpoints.
pub fn fit(
    mut model: Model,
    config: &TrainConfig,
    split: &Split,
    observer: &mut dyn FnMut(&MetricsRow) -> bool,
) -> Result<TrainOutcome> {
    let run = &config.run;
    if run.batch == 0 || run.eval_batch == 0 || run.threads == 0 {
        return Err(Error::Config("batch sizes and threads must be at least 1".into()));
    }
    if run.max_updates.is_none() && run.max_epochs.is_none() {
        return Err(Error::Config("set max_updates and/or max_epochs".into()));
    }
    let train_len = split.train.len();
    if train_len < run.batch {
        return Err(Error::Config(format!(
            "training set has {train_len} examples, fewer than one batch of {}",
            run.batch
        )));
    }
    let root = Rng::new(run.seed);
    let mut shuffle = root.fork("shuffle");
    let mut dropout = root.fork("dropout");
    let params: Vec<Matrix> = model.params().into_iter().map(|(_, m)| m).collect();
    let mut optimizer = Optimizer::new(config.optim.kind, &params, config.optim.lr);
    drop(params);
    let mut schedule = match config.optim.schedule {
        ScheduleKind::Constant => None,
        ScheduleKind::Plateau => Some(PlateauSchedule::default()),
    };
    let policy: Option<ClipPolicy> = config.optim.clip;

    let mut state = Run {
        config,
        split,
        started: Instant::now(),
        writer: match &config.output.metrics {
            Some(p) => Some(MetricsWriter::create(p)?),
            None => None,
        },
        rows: Vec::new(),
        best: None,
        loss_sum: 0.0,
        loss_count: 0,
        grad_norm: None,
    };

    let max_updates = run.max_updates.unwrap_or(u64::MAX);
    let max_epochs = run.max_epochs.unwrap_or(u64::MAX);
    let batches_per_epoch = (train_len / run.batch) as u64;
    let mut order: Vec<usize> = (0..train_len).collect();
    shuffle.shuffle(&mut order);
    let mut cursor = 0usize;
    let mut update = 0u64;
    let mut epoch = 0u64;
    let mut skipped = 0u64;
    let mut last_row_update;
    let mut stopped_early = false;

    let eval = state.evaluate(&model)?;
    let row = state.record(&model, 0, 0, optimizer.lr(), 0, eval)?;
    last_row_update = 0;
    if !observer(&row) {
        stopped_early = true;
    }

    while !stopped_early && update < max_updates && epoch < max_epochs {
        let batch = &order[cursor..cursor + run.batch];
        cursor += run.batch;
        let mut bg = model.batch_gradients(&split.train, batch, &mut dropout, run.threads)?;
        let finite = bg.loss.is_finite();
        let outcome = match policy {
            Some(ClipPolicy::NormWithNanRecovery { .. }) if !finite => ClipOutcome::Skip,
            _ if !finite => {
                return Err(Error::NonFinite(format!(
                    "training loss is {} at update {}",
                    bg.loss,
                    update + 1
                )))
            }
            _ => clip(policy, &mut bg.grads)?,
        };
        match outcome {
            ClipOutcome::Apply { norm } => {
                state.grad_norm = Some(norm);
                state.loss_sum += bg.loss;
                state.loss_count += 1;
                optimizer.step_visit(|f| model.visit_mut(f), &bg.grads)?;
            }
            ClipOutcome::Skip => {
                state.grad_norm = None;
                skipped += 1;
            }
        }
        update += 1;

        let epoch_end = update.is_multiple_of(batches_per_epoch);
        if epoch_end {
            epoch += 1;
            shuffle.shuffle(&mut order);
            cursor = 0;
        }
        let interval = run.eval_interval > 0 && update.is_multiple_of(run.eval_interval);
        if epoch_end || interval {
            let eval = state.evaluate(&model)?;
            let row = state.record(&model, update, epoch, optimizer.lr(), skipped, eval)?;
            last_row_update = update;
            if epoch_end {
                if let Some(s) = &mut schedule {
                    let lr = s.step(eval.loss, optimizer.lr());
                    optimizer.set_lr(lr);
                }
            }
            if let (Some(path), Some((best, at, _))) = (checkpoint_path(config, "best.ckpt"), &state.best) {
                if *at == update {
                    let snap = Snapshot {
                        update,
                        epoch,
                        optimizer: &optimizer,
                        shuffle: &shuffle,
                        dropout: &dropout,
                        schedule: &schedule,
                        best_valid: Some(*best),
                        skipped,
                    };
                    save(&path, config, &model, &snap)?;
                }
            }
            if !observer(&row) {
                stopped_early = true;
            }
        }
    }

    if last_row_update != update {
        let eval = state.evaluate(&model)?;
        let row = state.record(&model, update, epoch, optimizer.lr(), skipped, eval)?;
        observer(&row);
    }
    let (best_valid, best_update, best_model) = state.best.take().expect("at least one evaluation");
    if let Some(path) = checkpoint_path(config, "final.ckpt") {
        let snap = Snapshot {
            update,
            epoch,
            optimizer: &optimizer,
            shuffle: &shuffle,
            dropout: &dropout,
            schedule: &schedule,
            best_valid: Some(best_valid),
            skipped,
        };
        save(&path, config, &model, &snap)?;
        if best_update == 0 {
            // The untrained model was never beaten.
            save(&checkpoint_path(config, "best.ckpt").expect("dir set"), config, &best_model, &snap)?;
        }
    }
    Ok(TrainOutcome {
        model,
        best_model,
        best_valid,
        best_update,
        rows: state.rows,
        updates: update,
        epochs: epoch,
        skipped,
        final_lr: optimizer.lr(),
        stopped_early,
    })
}
