//! A short run of the copy task with a low-rank plus diagonal GRU.
//!
//! `cargo run --release --example copy_task -- 20000` trains for longer.

use lrpn::harness::{train_on, load_split, CellKind, ModelSpec, TrainConfig};
use lrpn::optim::ClipPolicy;
use lrpn::param::ParamKind;
use lrpn::tasks::{copy_baseline_ce, CopySpec, SplitSizes, TaskSpec};

fn main() -> lrpn::Result<()> {
    let updates = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1500);
    let lag = 50;
    let mut model = ModelSpec::new(CellKind::Gru, 64, ParamKind::LowRankDiag, Some(24));
    model.carry_bias = 4.0;
    let mut config = TrainConfig::new(TaskSpec::Copy { lag, variant: Default::default() }, model);
    config.optim.clip = Some(ClipPolicy::NormWithNanRecovery { c: 1.0 });
    config.run.max_updates = Some(updates);
    config.run.eval_interval = 250;
    config.data.sizes = SplitSizes { train: 20_000, valid: 500, test: 500 };

    println!("memoryless baseline {:.4} nats", copy_baseline_ce(&CopySpec::fixed(lag))?);
    let split = load_split(&config)?;
    let outcome = train_on(&config, &split, &mut |row| {
        println!("update {:>6}  valid CE {:.4}", row.update, row.valid_loss);
        true
    })?;
    let test = outcome.best_model.evaluate(&split.test, 500)?;
    println!("test CE {:.4}, accuracy {:.3}", test.loss, test.accuracy.unwrap_or(0.0));
    Ok(())
}
