//! Addition problem with a low-rank GRU, T = 100.

use lrpn::harness::{load_split, train_on, CellKind, ModelSpec, TrainConfig};
use lrpn::optim::ClipPolicy;
use lrpn::param::ParamKind;
use lrpn::tasks::{addition_baseline_mse, SplitSizes, TaskSpec};

fn main() -> lrpn::Result<()> {
    let updates = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3000);
    let mut model = ModelSpec::new(CellKind::Gru, 64, ParamKind::LowRank, Some(24));
    model.carry_bias = 4.0;
    let mut config = TrainConfig::new(TaskSpec::Addition { length: 100 }, model);
    config.optim.clip = Some(ClipPolicy::Component { c: 1.0 });
    config.run.max_updates = Some(updates);
    config.run.eval_interval = 500;
    config.data.sizes = SplitSizes { train: 50_000, valid: 1_000, test: 1_000 };

    println!("constant-prediction baseline {:.4}", addition_baseline_mse());
    let split = load_split(&config)?;
    let outcome = train_on(&config, &split, &mut |row| {
        println!("update {:>6}  valid MSE {:.4}", row.update, row.valid_loss);
        true
    })?;
    println!("test MSE {:.4}", outcome.best_model.evaluate(&split.test, 500)?.loss);
    Ok(())
}
