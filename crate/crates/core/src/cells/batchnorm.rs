use crate::autodiff::{BatchStats, NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::Mode;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Per-feature batch normalization: trainable `gamma`/`beta` plus running
/// statistics used at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Matrix,
    pub running_var: Matrix,
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNormVars {
    pub gamma: NodeId,
    pub beta: NodeId,
}

impl BatchNormState {
    pub fn new(n: usize) -> Self {
        BatchNormState {
            gamma: Matrix::ones(n, 1),
            beta: Matrix::zeros(n, 1),
            running_mean: Matrix::zeros(n, 1),
            running_var: Matrix::ones(n, 1),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn len(&self) -> usize {
        self.gamma.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bind(&self, tape: &mut Tape, leaves: &mut Vec<NodeId>) -> BatchNormVars {
        let gamma = tape.leaf(self.gamma.clone());
        let beta = tape.leaf(self.beta.clone());
        leaves.push(gamma);
        leaves.push(beta);
        BatchNormVars { gamma, beta }
    }

    fn running_stats(&self) -> BatchStats {
        BatchStats {
            mean: self.running_mean.data().to_vec(),
            var: self.running_var.data().to_vec(),
        }
    }

    /// Records normalization of `x` on the tape. In train mode the batch
    /// statistics are returned for [`BatchNormState::update_running`].
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: BatchNormVars,
        x: NodeId,
        mode: Mode,
    ) -> Result<(NodeId, Option<BatchStats>)> {
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm(x, vars.gamma, vars.beta, self.epsilon, None)?;
                Ok((y, Some(stats)))
            }
            Mode::Infer => {
                let stats = self.running_stats();
                let (y, _) = tape.batch_norm(x, vars.gamma, vars.beta, self.epsilon, Some(&stats))?;
                Ok((y, None))
            }
        }
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, v) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * v;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * v;
        }
    }
}

/// Normalizes the columns of `x` (`n x batch`). Train mode uses batch
/// statistics and updates the running averages; infer mode uses the
/// running averages.
pub fn batchnorm_forward(state: &mut BatchNormState, x: &Matrix, mode: Mode) -> Result<Matrix> {
    if x.rows() != state.len() {
        return Err(Error::dim("batchnorm_forward", (state.len(), 1), x.shape()));
    }
    let mut tape = Tape::new();
    let xi = tape.constant(x.clone());
    let vars = BatchNormVars {
        gamma: tape.constant(state.gamma.clone()),
        beta: tape.constant(state.beta.clone()),
    };
    let (y, stats) = state.forward_tape(&mut tape, vars, xi, mode)?;
    if let Some(stats) = stats {
        state.update_running(&stats);
    }
    Ok(tape.value(y).clone())
}
