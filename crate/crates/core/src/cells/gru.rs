use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::{sigmoid, uniform_init, Matrix, Rng};
use crate::param::{LinearMap, MapSpec, MapVars, ParamKind};

pub const GATE_RESET: usize = 0;
pub const GATE_CARRY: usize = 1;
pub const GATE_PROPOSAL: usize = 2;

const GATE_NAMES: [&str; 3] = ["reset", "carry", "proposal"];

/// GRU written as a convex passthrough:
///
/// ```text
/// ω = σ(Uω·u + Wω·x + bω)
/// γ = σ(Uγ·u + Wγ·x + bγ)
/// π = tanh(Uπ·u + Wπ·(x ⊙ ω) + bπ)
/// x' = π ⊙ (1 - γ) + x ⊙ γ
/// ```
///
/// Arrays are indexed by [`GATE_RESET`], [`GATE_CARRY`], [`GATE_PROPOSAL`].
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input: [Matrix; 3],
    pub recurrent: [LinearMap; 3],
    pub bias: [Matrix; 3],
    /// Learned initial state, `n x 1`.
    pub x0: Matrix,
}

#[derive(Debug, Clone)]
pub struct GruVars {
    pub input: [NodeId; 3],
    pub recurrent: [MapVars; 3],
    pub bias: [NodeId; 3],
    pub x0: NodeId,
}

impl GruCell {
    /// Uniform `sqrt(6/fan_in)` weights, zero biases except the carry gate
    /// bias, zero initial state.
    pub fn init(
        n: usize,
        m: usize,
        kind: ParamKind,
        rank: usize,
        carry_bias: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Config("GRU dimensions must be positive".into()));
        }
        let input = [0, 1, 2].map(|_| uniform_init(rng, n, m, m));
        let mut recurrent = Vec::with_capacity(3);
        for _ in 0..3 {
            recurrent.push(LinearMap::init(MapSpec::square(n, kind, rank), rng)?);
        }
        let mut bias = [0, 1, 2].map(|_| Matrix::zeros(n, 1));
        bias[GATE_CARRY] = Matrix::filled(n, 1, carry_bias);
        Ok(GruCell {
            input,
            recurrent: recurrent.try_into().expect("three maps"),
            bias,
            x0: Matrix::zeros(n, 1),
        })
    }

    pub fn state_size(&self) -> usize {
        self.x0.rows()
    }

    pub fn input_size(&self) -> usize {
        self.input[0].cols()
    }

    /// Parameters of the recurrent block: the three state maps and their
    /// biases.
    pub fn recurrent_param_count(&self) -> usize {
        let n = self.state_size();
        self.recurrent.iter().map(|w| w.param_count(true, n)).sum()
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        for (g, u) in self.input.iter().enumerate() {
            f(format!("{prefix}.u_{}", GATE_NAMES[g]), u);
        }
        for (g, w) in self.recurrent.iter().enumerate() {
            for (name, m) in w.factors() {
                f(format!("{prefix}.w_{}.{name}", GATE_NAMES[g]), m);
            }
        }
        for (g, b) in self.bias.iter().enumerate() {
            f(format!("{prefix}.b_{}", GATE_NAMES[g]), b);
        }
        f(format!("{prefix}.x0"), &self.x0);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        for (g, u) in self.input.iter_mut().enumerate() {
            f(format!("{prefix}.u_{}", GATE_NAMES[g]), u);
        }
        for (g, w) in self.recurrent.iter_mut().enumerate() {
            for (name, m) in w.factors_mut() {
                f(format!("{prefix}.w_{}.{name}", GATE_NAMES[g]), m);
            }
        }
        for (g, b) in self.bias.iter_mut().enumerate() {
            f(format!("{prefix}.b_{}", GATE_NAMES[g]), b);
        }
        f(format!("{prefix}.x0"), &mut self.x0);
    }

    /// Binds parameters as tape leaves in [`GruCell::visit`] order.
    pub fn bind(&self, tape: &mut Tape, leaves: &mut Vec<NodeId>) -> GruVars {
        fn leaf(tape: &mut Tape, leaves: &mut Vec<NodeId>, m: &Matrix) -> NodeId {
            let id = tape.leaf(m.clone());
            leaves.push(id);
            id
        }
        let input = [0, 1, 2].map(|g| leaf(tape, leaves, &self.input[g]));
        let mut recurrent = Vec::with_capacity(3);
        for w in &self.recurrent {
            recurrent.push(w.bind(tape, leaves));
        }
        let bias = [0, 1, 2].map(|g| leaf(tape, leaves, &self.bias[g]));
        let x0 = leaf(tape, leaves, &self.x0);
        GruVars {
            input,
            recurrent: recurrent.try_into().expect("three maps"),
            bias,
            x0,
        }
    }

    /// One step on the tape; `x_prev` is `n x batch`, `u` is `m x batch`.
    pub fn step_tape(vars: &GruVars, tape: &mut Tape, x_prev: NodeId, u: NodeId) -> Result<NodeId> {
        let pre = |tape: &mut Tape, g: usize, state_in: NodeId| -> Result<NodeId> {
            let a = tape.matmul(vars.input[g], u)?;
            let b = vars.recurrent[g].apply(tape, state_in)?;
            let s = tape.add(a, b)?;
            tape.add_col(s, vars.bias[g])
        };
        let reset = pre(tape, GATE_RESET, x_prev)?;
        let reset = tape.sigmoid(reset);
        let carry = pre(tape, GATE_CARRY, x_prev)?;
        let carry = tape.sigmoid(carry);
        let gated = tape.mul(x_prev, reset)?;
        let proposal = pre(tape, GATE_PROPOSAL, gated)?;
        let proposal = tape.tanh(proposal);
        let transform = tape.one_minus(carry);
        super::combine_on_tape(
            tape,
            super::PassthroughForm::IndependentGates,
            x_prev,
            proposal,
            transform,
            Some(carry),
        )
    }
}

/// Plain-matrix GRU step, independent of the tape.
pub fn gru_step(cell: &GruCell, x_prev: &Matrix, u: &Matrix) -> Result<Matrix> {
    let n = cell.state_size();
    if x_prev.rows() != n {
        return Err(Error::dim("gru_step state", (n, x_prev.cols()), x_prev.shape()));
    }
    if u.rows() != cell.input_size() || u.cols() != x_prev.cols() {
        return Err(Error::dim("gru_step input", (cell.input_size(), x_prev.cols()), u.shape()));
    }
    let pre = |g: usize, state_in: &Matrix| -> Result<Matrix> {
        cell.input[g]
            .matmul(u)?
            .add(&cell.recurrent[g].apply(state_in)?)?
            .add_col(&cell.bias[g])
    };
    let reset = pre(GATE_RESET, x_prev)?.map(sigmoid);
    let carry = pre(GATE_CARRY, x_prev)?.map(sigmoid);
    let proposal = pre(GATE_PROPOSAL, &x_prev.hadamard(&reset)?)?.map(f64::tanh);
    let transform = carry.map(|c| 1.0 - c);
    proposal.hadamard(&transform)?.add(&x_prev.hadamard(&carry)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cell_from_zero_state_stays_zero() {
        let mut cell = GruCell::init(3, 2, ParamKind::Full, 0, 0.0, &mut Rng::new(0)).unwrap();
        cell.visit_mut("", &mut |_, m| *m = Matrix::zeros(m.rows(), m.cols()));
        let u = Matrix::column(&[0.4, -0.7]);
        let x = gru_step(&cell, &Matrix::zeros(3, 1), &u).unwrap();
        assert_eq!(x, Matrix::zeros(3, 1));
    }

    #[test]
    fn saturated_carry_copies_state() {
        let mut rng = Rng::new(1);
        let cell = GruCell::init(4, 2, ParamKind::LowRankDiag, 2, 40.0, &mut rng).unwrap();
        let x = uniform_init(&mut rng, 4, 3, 1);
        let u = uniform_init(&mut rng, 2, 3, 1);
        let y = gru_step(&cell, &x, &u).unwrap();
        assert!(y.sub(&x).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn tape_step_matches_plain_step() {
        let mut rng = Rng::new(2);
        for kind in ParamKind::ALL {
            let cell = GruCell::init(5, 3, kind, 2, 1.0, &mut rng).unwrap();
            let x = uniform_init(&mut rng, 5, 4, 1);
            let u = uniform_init(&mut rng, 3, 4, 1);
            let mut tape = Tape::new();
            let mut leaves = Vec::new();
            let vars = cell.bind(&mut tape, &mut leaves);
            let xi = tape.constant(x.clone());
            let ui = tape.constant(u.clone());
            let y = GruCell::step_tape(&vars, &mut tape, xi, ui).unwrap();
            let plain = gru_step(&cell, &x, &u).unwrap();
            assert!(tape.value(y).sub(&plain).unwrap().max_abs() < 1e-14);
        }
    }

    #[test]
    fn bind_order_matches_visit_order() {
        let cell = GruCell::init(4, 2, ParamKind::LowRankDiag, 2, 4.0, &mut Rng::new(3)).unwrap();
        let mut tape = Tape::new();
        let mut leaves = Vec::new();
        cell.bind(&mut tape, &mut leaves);
        let mut visited = Vec::new();
        cell.visit("gru", &mut |_, m| visited.push(m.clone()));
        assert_eq!(leaves.len(), visited.len());
        for (id, m) in leaves.iter().zip(&visited) {
            assert_eq!(tape.value(*id), m);
        }
    }

    #[test]
    fn shape_errors() {
        let cell = GruCell::init(3, 2, ParamKind::Full, 0, 0.0, &mut Rng::new(0)).unwrap();
        assert!(gru_step(&cell, &Matrix::zeros(2, 1), &Matrix::zeros(2, 1)).is_err());
        assert!(gru_step(&cell, &Matrix::zeros(3, 1), &Matrix::zeros(3, 1)).is_err());
    }
}
