//! Analytic baselines next to a quick Monte-Carlo estimate.

use lrpn::linalg::Rng;
use lrpn::tasks::{addition_baseline_mse, copy_baseline_ce, gen_addition, AdditionSpec, CopySpec, StepTargets};

fn main() -> lrpn::Result<()> {
    let mut rng = Rng::new(1);
    let spec = AdditionSpec { length: 100 };
    let mut sums = Vec::new();
    for _ in 0..20_000 {
        if let StepTargets::Values(v) = gen_addition(&spec, &mut rng)?.targets {
            sums.push(v[v.len() - 1]);
        }
    }
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sums.len() as f64;
    println!("addition: analytic MSE {:.5}, sampled target variance {var:.5}", addition_baseline_mse());
    for lag in [50, 100, 500] {
        println!("copy N={lag}: memoryless CE {:.6} nats", copy_baseline_ce(&CopySpec::fixed(lag))?);
    }
    Ok(())
}
