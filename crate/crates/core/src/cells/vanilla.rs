use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::{uniform_init, Matrix, Rng};
use crate::param::{LinearMap, MapSpec, MapVars, ParamKind};

/// Non-passthrough baseline: `x' = tanh(U·u + W·x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaRnnCell {
    pub input: Matrix,
    pub recurrent: LinearMap,
    pub bias: Matrix,
    pub x0: Matrix,
}

#[derive(Debug, Clone)]
pub struct VanillaVars {
    pub input: NodeId,
    pub recurrent: MapVars,
    pub bias: NodeId,
    pub x0: NodeId,
}

impl VanillaRnnCell {
    pub fn init(n: usize, m: usize, kind: ParamKind, rank: usize, rng: &mut Rng) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Config("RNN dimensions must be positive".into()));
        }
        Ok(VanillaRnnCell {
            input: uniform_init(rng, n, m, m),
            recurrent: LinearMap::init(MapSpec::square(n, kind, rank), rng)?,
            bias: Matrix::zeros(n, 1),
            x0: Matrix::zeros(n, 1),
        })
    }

    pub fn state_size(&self) -> usize {
        self.x0.rows()
    }

    pub fn input_size(&self) -> usize {
        self.input.cols()
    }

    pub fn recurrent_param_count(&self) -> usize {
        self.recurrent.param_count(true, self.state_size())
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(format!("{prefix}.u"), &self.input);
        for (name, m) in self.recurrent.factors() {
            f(format!("{prefix}.w.{name}"), m);
        }
        f(format!("{prefix}.b"), &self.bias);
        f(format!("{prefix}.x0"), &self.x0);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(format!("{prefix}.u"), &mut self.input);
        for (name, m) in self.recurrent.factors_mut() {
            f(format!("{prefix}.w.{name}"), m);
        }
        f(format!("{prefix}.b"), &mut self.bias);
        f(format!("{prefix}.x0"), &mut self.x0);
    }

    pub fn bind(&self, tape: &mut Tape, leaves: &mut Vec<NodeId>) -> VanillaVars {
        let input = tape.leaf(self.input.clone());
        leaves.push(input);
        let recurrent = self.recurrent.bind(tape, leaves);
        let bias = tape.leaf(self.bias.clone());
        let x0 = tape.leaf(self.x0.clone());
        leaves.push(bias);
        leaves.push(x0);
        VanillaVars {
            input,
            recurrent,
            bias,
            x0,
        }
    }

    pub fn step_tape(vars: &VanillaVars, tape: &mut Tape, x_prev: NodeId, u: NodeId) -> Result<NodeId> {
        let a = tape.matmul(vars.input, u)?;
        let b = vars.recurrent.apply(tape, x_prev)?;
        let s = tape.add(a, b)?;
        let s = tape.add_col(s, vars.bias)?;
        Ok(tape.tanh(s))
    }
}

pub fn vanilla_rnn_step(cell: &VanillaRnnCell, x_prev: &Matrix, u: &Matrix) -> Result<Matrix> {
    if x_prev.rows() != cell.state_size() {
        return Err(Error::dim("vanilla_rnn_step state", (cell.state_size(), x_prev.cols()), x_prev.shape()));
    }
    if u.rows() != cell.input_size() || u.cols() != x_prev.cols() {
        return Err(Error::dim("vanilla_rnn_step input", (cell.input_size(), x_prev.cols()), u.shape()));
    }
    Ok(cell
        .input
        .matmul(u)?
        .add(&cell.recurrent.apply(x_prev)?)?
        .add_col(&cell.bias)?
        .map(f64::tanh))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_zero_state() {
        let mut cell = VanillaRnnCell::init(3, 2, ParamKind::Full, 0, &mut Rng::new(0)).unwrap();
        cell.visit_mut("", &mut |_, m| *m = Matrix::zeros(m.rows(), m.cols()));
        let x = vanilla_rnn_step(&cell, &Matrix::column(&[0.5, 0.1, -0.2]), &Matrix::column(&[1.0, 2.0])).unwrap();
        assert_eq!(x, Matrix::zeros(3, 1));
    }

    #[test]
    fn identity_input_path() {
        let cell = VanillaRnnCell {
            input: Matrix::identity(1),
            recurrent: LinearMap::full(Matrix::zeros(1, 1)),
            bias: Matrix::zeros(1, 1),
            x0: Matrix::zeros(1, 1),
        };
        let x = vanilla_rnn_step(&cell, &Matrix::zeros(1, 1), &Matrix::column(&[0.5])).unwrap();
        assert_eq!(x.get(0, 0), 0.5f64.tanh());
    }

    #[test]
    fn tape_matches_plain_and_bind_order() {
        let mut rng = Rng::new(1);
        for kind in ParamKind::ALL {
            let cell = VanillaRnnCell::init(4, 3, kind, 2, &mut rng).unwrap();
            let x = uniform_init(&mut rng, 4, 2, 1);
            let u = uniform_init(&mut rng, 3, 2, 1);
            let mut tape = Tape::new();
            let mut leaves = Vec::new();
            let vars = cell.bind(&mut tape, &mut leaves);
            let xi = tape.constant(x.clone());
            let ui = tape.constant(u.clone());
            let y = VanillaRnnCell::step_tape(&vars, &mut tape, xi, ui).unwrap();
            let plain = vanilla_rnn_step(&cell, &x, &u).unwrap();
            assert!(tape.value(y).sub(&plain).unwrap().max_abs() < 1e-14);
            let mut visited = Vec::new();
            cell.visit("rnn", &mut |_, m| visited.push(m.clone()));
            let bound: Vec<Matrix> = leaves.iter().map(|id| tape.value(*id).clone()).collect();
            assert_eq!(bound, visited);
        }
    }
}
