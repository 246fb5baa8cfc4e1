use crate::autodiff::{grad_check, GradCheckReport, NodeId, Tape};
use crate::cells::LossKind;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::param::ParamKind;
use crate::tasks::{Inputs, Sample, StepTargets};

use super::model::{build_model_dims, CellKind, Model, ModelSpec};

/// One cell/parameterization combination to differentiate numerically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckCase {
    pub cell: CellKind,
    pub param: ParamKind,
    pub n: usize,
    /// Rank for factored kinds; ignored for full maps.
    pub d: usize,
    /// Sequence length for recurrent cells, depth for Highway.
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl GradCheckCase {
    pub fn new(cell: CellKind, param: ParamKind, n: usize, d: usize, steps: usize) -> Self {
        GradCheckCase { cell, param, n, d, steps, batch: 3, seed: 0 }
    }

    /// Every cell with every parameterization at `n = 8, d = 3, T = 5`.
    pub fn default_suite() -> Vec<Self> {
        let mut out = Vec::new();
        for cell in CellKind::ALL {
            for param in ParamKind::ALL {
                out.push(GradCheckCase::new(cell, param, 8, 3, 5));
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.cell.name(), self.param.name())
    }

    fn spec(&self) -> ModelSpec {
        let d = (self.param != ParamKind::Full).then_some(self.d);
        let mut spec = ModelSpec::new(self.cell, self.n, self.param, d);
        spec.carry_bias = 1.0;
        spec.layers = self.steps;
        spec
    }
}

const INPUTS: usize = 3;
const OUTPUTS: usize = 4;

fn objective(model: &Model, data: &Fixture) -> Result<(Tape, NodeId, Vec<NodeId>)> {
    let mut tape = Tape::new();
    let mut leaves = Vec::new();
    let node = match (model, data) {
        (Model::Recurrent(m), Fixture::Sequences(samples)) => {
            let vars = m.bind(&mut tape, &mut leaves);
            let refs: Vec<&Sample> = samples.iter().collect();
            m.loss_tape(&vars, &mut tape, &refs)?.0
        }
        (Model::Highway(m), Fixture::Images { x, labels, dropout_seed }) => {
            let vars = m.bind(&mut tape, &mut leaves);
            let mut rng = Rng::new(*dropout_seed);
            m.objective_tape(&vars, &mut tape, x.clone(), labels.clone(), &mut rng)?.0
        }
        _ => return Err(Error::Config("fixture does not match the model".into())),
    };
    Ok((tape, node, leaves))
}

enum Fixture {
    Sequences(Vec<Sample>),
    Images { x: Matrix, labels: Vec<usize>, dropout_seed: u64 },
}

fn fixture(case: &GradCheckCase, rng: &mut Rng) -> Result<Fixture> {
    Ok(match case.cell {
        CellKind::Highway => {
            let data = (0..INPUTS * case.batch).map(|_| rng.uniform_in(0.0, 1.0)).collect();
            Fixture::Images {
                x: Matrix::new(INPUTS, case.batch, data)?,
                labels: (0..case.batch).map(|_| rng.below(OUTPUTS)).collect(),
                dropout_seed: rng.fork("dropout").seed(),
            }
        }
        _ => {
            let mut samples = Vec::with_capacity(case.batch);
            for _ in 0..case.batch {
                let data = (0..INPUTS * case.steps).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                samples.push(Sample::new(
                    Inputs::Dense(Matrix::new(INPUTS, case.steps, data)?),
                    StepTargets::Classes((0..case.steps).map(|_| rng.below(OUTPUTS) as u8).collect()),
                    vec![true; case.steps],
                )?);
            }
            Fixture::Sequences(samples)
        }
    })
}

/// Moves every parameter off its initial value so zero biases and unit
/// batch-norm scales do not place ReLU inputs exactly on the kink.
fn jitter(model: &mut Model, rng: &mut Rng) {
    model.visit_mut(&mut |_, m| {
        for v in m.data_mut() {
            *v += rng.uniform_in(-0.1, 0.1);
        }
    });
}

/// Compares tape gradients with central differences for one case. The
/// recurrent objective is the mean cross-entropy over every step; the
/// Highway objective is the hinge loss plus the output-matrix L2 term in
/// train mode (dropout with a fixed mask stream, batch statistics).
pub fn run_grad_check(case: &GradCheckCase, h: f64, tol: f64) -> Result<GradCheckReport> {
    if case.n > 64 || case.steps == 0 || case.batch == 0 {
        return Err(Error::Config("gradient checks need 1 <= T, batch and n <= 64".into()));
    }
    let mut rng = Rng::new(case.seed);
    let kind = if case.cell == CellKind::Highway { LossKind::L2Hinge } else { LossKind::CrossEntropy };
    let mut model = build_model_dims(&case.spec(), INPUTS, OUTPUTS, kind, &mut rng.fork("init"))?;
    jitter(&mut model, &mut rng.fork("jitter"));
    let data = fixture(case, &mut rng)?;
    let (tape, node, leaves) = objective(&model, &data)?;
    let g = tape.backward(node)?;
    let analytic: Vec<Matrix> = leaves.iter().map(|id| g.get_or_zeros(*id, tape.value(*id))).collect();
    let params: Vec<Matrix> = model.params().into_iter().map(|(_, m)| m).collect();
    let mut probe = model.clone();
    grad_check(
        |ps: &[Matrix]| {
            let mut i = 0;
            probe.visit_mut(&mut |_, m| {
                m.data_mut().copy_from_slice(ps[i].data());
                i += 1;
            });
            let (tape, node, _) = objective(&probe, &data)?;
            Ok(tape.value(node).get(0, 0))
        },
        &params,
        &analytic,
        h,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{DEFAULT_STEP, DEFAULT_TOLERANCE};

    #[test]
    fn suite_covers_every_combination() {
        assert_eq!(GradCheckCase::default_suite().len(), 9);
    }

    #[test]
    fn small_cases_pass() {
        for cell in CellKind::ALL {
            let case = GradCheckCase::new(cell, ParamKind::LowRankDiag, 4, 2, 2);
            let r = run_grad_check(&case, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
            assert!(r.passed(), "{}: {r:?}", case.label());
            assert!(r.checked > 0);
        }
    }

    #[test]
    fn default_suite_passes() {
        for case in GradCheckCase::default_suite() {
            let r = run_grad_check(&case, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
            assert!(r.passed(), "{}: {r:?}", case.label());
        }
    }

    #[test]
    fn unreachable_tolerance_fails() {
        let case = GradCheckCase::new(CellKind::Gru, ParamKind::Full, 4, 2, 3);
        let r = run_grad_check(&case, DEFAULT_STEP, 1e-14).unwrap();
        assert!(!r.passed());
    }
}
