//! Train briefly, write a checkpoint, reload it and evaluate both models.

use lrpn::harness::{load_checkpoint, load_split, train_on, CellKind, ModelSpec, TrainConfig};
use lrpn::param::ParamKind;
use lrpn::tasks::{SplitSizes, TaskSpec};

fn main() -> lrpn::Result<()> {
    let dir = std::env::temp_dir().join("lrpn-checkpoint-example");
    let mut model = ModelSpec::new(CellKind::Gru, 32, ParamKind::LowRankDiag, Some(8));
    model.carry_bias = 2.0;
    let mut config = TrainConfig::new(TaskSpec::Copy { lag: 10, variant: Default::default() }, model);
    config.run.max_updates = Some(200);
    config.data.sizes = SplitSizes { train: 2_000, valid: 200, test: 200 };
    config.output.checkpoint_dir = Some(dir.clone());

    let split = load_split(&config)?;
    let outcome = train_on(&config, &split, &mut |_| true)?;
    let ckpt = load_checkpoint(&dir.join("final.ckpt"))?;
    let restored = ckpt.restore_model()?;
    let a = outcome.model.evaluate(&split.test, 100)?;
    let b = restored.evaluate(&split.test, 100)?;
    println!("checkpoint at update {}: {} tensors", ckpt.meta.update, ckpt.tensors.len());
    println!("in memory CE {:.6}, reloaded CE {:.6}, identical: {}", a.loss, b.loss, a == b);
    Ok(())
}
