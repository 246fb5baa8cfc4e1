//! State-transition units built on the passthrough combinator
//! `x_t = proposal ⊙ τ + x_{t-1} ⊙ γ`, plus dropout, batch normalization
//! and loss heads.

mod batchnorm;
mod gru;
mod highway;
mod loss;
mod vanilla;

pub use batchnorm::{batchnorm_forward, BatchNormState, BatchNormVars};
pub use gru::{gru_step, GruCell, GruVars, GATE_CARRY, GATE_PROPOSAL, GATE_RESET};
pub use highway::{highway_forward, HighwayLayer, HighwayMasks, HighwayVars};
pub use loss::{loss, LossKind, Targets};
pub use vanilla::{vanilla_rnn_step, VanillaRnnCell, VanillaVars};

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PassthroughForm {
    /// τ = γ = 1.
    Additive,
    /// γ = 1 - τ.
    Convex,
    /// τ and γ supplied separately.
    IndependentGates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// `proposal ⊙ τ + x_prev ⊙ γ` with τ, γ chosen by `form`. `gamma` is
/// read only for [`PassthroughForm::IndependentGates`]; `tau` is ignored
/// under [`PassthroughForm::Additive`].
pub fn passthrough_combine(
    x_prev: &Matrix,
    proposal: &Matrix,
    tau: &Matrix,
    gamma: &Matrix,
    form: PassthroughForm,
) -> Result<Matrix> {
    let shape = x_prev.shape();
    for m in [proposal, tau, gamma] {
        if m.shape() != shape {
            return Err(Error::dim("passthrough_combine", shape, m.shape()));
        }
    }
    match form {
        PassthroughForm::Additive => proposal.add(x_prev),
        PassthroughForm::Convex => {
            let carry = tau.map(|t| 1.0 - t);
            proposal.hadamard(tau)?.add(&x_prev.hadamard(&carry)?)
        }
        PassthroughForm::IndependentGates => proposal.hadamard(tau)?.add(&x_prev.hadamard(gamma)?),
    }
}

/// Tape version of [`passthrough_combine`]. For `Convex`, `gamma` may be
/// `None` and is derived as `1 - tau`.
pub fn combine_on_tape(
    tape: &mut Tape,
    form: PassthroughForm,
    x_prev: NodeId,
    proposal: NodeId,
    tau: NodeId,
    gamma: Option<NodeId>,
) -> Result<NodeId> {
    match form {
        PassthroughForm::Additive => tape.add(proposal, x_prev),
        PassthroughForm::Convex => {
            let carry = match gamma {
                Some(g) => g,
                None => tape.one_minus(tau),
            };
            let a = tape.mul(proposal, tau)?;
            let b = tape.mul(x_prev, carry)?;
            tape.add(a, b)
        }
        PassthroughForm::IndependentGates => {
            let gamma = gamma.ok_or_else(|| {
                Error::Config("independent passthrough needs a carry gate".into())
            })?;
            let a = tape.mul(proposal, tau)?;
            let b = tape.mul(x_prev, gamma)?;
            tape.add(a, b)
        }
    }
}

/// Inverted-dropout mask: entries are 0 with probability `p`, otherwise
/// `1/(1-p)`.
pub fn dropout_mask(rng: &mut Rng, p: f64, rows: usize, cols: usize) -> Result<Matrix> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
    }
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if p > 0.0 && rng.bernoulli(p) { 0.0 } else { keep })
        .collect();
    Matrix::new(rows, cols, data)
}

pub fn apply_dropout(x: &Matrix, mask: &Matrix) -> Result<Matrix> {
    x.hadamard(mask)
}
