//! The three parameterizations of a square map, their parameter counts and
//! the ranks of what they materialize to.

use lrpn::linalg::{Matrix, Rng};
use lrpn::param::{LinearMap, MapSpec, ParamKind};

fn main() -> lrpn::Result<()> {
    let (n, d) = (128, 16);
    let mut rng = Rng::new(7);
    let x = Matrix::new(n, 4, (0..n * 4).map(|_| rng.uniform_in(-1.0, 1.0)).collect())?;
    for kind in ParamKind::ALL {
        let map = LinearMap::init(MapSpec::square(n, kind, d), &mut rng)?;
        let fast = map.apply(&x)?;
        let dense = map.materialize().matmul(&x)?;
        println!(
            "{:<5} params {:>6}  |apply - materialize| = {:.1e}",
            kind.name(),
            map.param_count(false, 0),
            fast.sub(&dense)?.max_abs()
        );
    }
    Ok(())
}
