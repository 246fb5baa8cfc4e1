//! Model assemblies, training loop, evaluation, metrics and checkpoints.

mod checkpoint;
mod config;
mod gradcheck;
mod metrics;
mod model;
mod train;

pub use checkpoint::{
    collect_tensors, decode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointMeta, FORMAT_VERSION, MAGIC,
};
pub use config::{DataSettings, OptimSettings, OutputSettings, RunSettings, ScheduleKind, TrainConfig};
pub use gradcheck::{run_grad_check, GradCheckCase};
pub use metrics::{MetricsRow, MetricsWriter, METRICS_HEADER};
pub use model::{
    build_model, build_model_dims, param_blocks, task_loss, BatchGradients, CellKind, DropoutSpec,
    Evaluation, HighwayClassifier, HighwayClassifierVars, Model, ModelSpec, RecurrentCell,
    RecurrentModel, RecurrentVars,
};
pub use train::{fit, load_split, train, train_on, TrainOutcome};
