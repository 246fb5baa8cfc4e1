//! Low-rank Highway classifier on MNIST.
//!
//! Reads IDX files from the directory given as the first argument or from
//! `$MNIST_DIR` (`scripts/fetch_mnist.sh` downloads them).

use std::path::PathBuf;

use lrpn::harness::{train_on, CellKind, ModelSpec, ScheduleKind, TrainConfig};
use lrpn::optim::OptimizerKind;
use lrpn::param::ParamKind;
use lrpn::tasks::{load_mnist_dir, mnist_split, TaskSpec};

fn main() -> lrpn::Result<()> {
    let dir = std::env::args_os()
        .nth(1)
        .or_else(|| std::env::var_os(lrpn::cli::MNIST_ENV))
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"));
    let data = load_mnist_dir(&dir)?;

    let mut model = ModelSpec::new(CellKind::Highway, 256, ParamKind::LowRank, Some(64));
    model.layers = 5;
    let mut config = TrainConfig::new(TaskSpec::Mnist, model);
    config.optim.kind = OptimizerKind::Adam;
    config.optim.lr = 3e-3;
    config.optim.clip = None;
    config.optim.schedule = ScheduleKind::Plateau;
    config.run.batch = 100;
    config.run.max_epochs = Some(3);
    config.run.eval_interval = 0;

    let split = mnist_split(&config.task, &data, config.data.sizes)?;
    let outcome = train_on(&config, &split, &mut |row| {
        let acc = row.valid_accuracy.unwrap_or(0.0);
        println!("epoch {:>2}  valid loss {:.4}  accuracy {:.4}", row.epoch, row.valid_loss, acc);
        true
    })?;
    let test = outcome.best_model.evaluate(&split.test, 1000)?;
    println!("test accuracy {:.4}", test.accuracy.unwrap_or(0.0));
    Ok(())
}
