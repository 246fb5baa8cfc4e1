//! Finite-difference check of every cell and parameterization.

use lrpn::autodiff::{DEFAULT_STEP, DEFAULT_TOLERANCE};
use lrpn::harness::{run_grad_check, GradCheckCase};

fn main() -> lrpn::Result<()> {
    for case in GradCheckCase::default_suite() {
        let r = run_grad_check(&case, DEFAULT_STEP, DEFAULT_TOLERANCE)?;
        println!("{:<14} {:>5} entries  max rel err {:.2e}", case.label(), r.checked, r.max_rel_err);
    }
    Ok(())
}
