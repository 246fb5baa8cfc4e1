use crate::autodiff::{BatchStats, NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::{Activation, Matrix, Rng};
use crate::param::{LinearMap, MapSpec, MapVars, ParamKind};

use super::{combine_on_tape, dropout_mask, BatchNormState, BatchNormVars, Mode, PassthroughForm};

/// Highway layer: `x' = g(Wπ·x + bπ) ⊙ τ + x ⊙ (1 - τ)` with
/// `τ = σ(Wτ·x + bτ)`. Optional batch normalization follows each map.
#[derive(Debug, Clone, PartialEq)]
pub struct HighwayLayer {
    pub proposal: LinearMap,
    pub transform: LinearMap,
    pub bias_proposal: Matrix,
    pub bias_transform: Matrix,
    pub activation: Activation,
    /// `[proposal, transform]` normalization, when enabled.
    pub norm: Option<[BatchNormState; 2]>,
}

/// Dropout masks for one layer invocation. Both masks are shared by the
/// proposal and transform branches: `input` (`n x batch`) multiplies the
/// layer input before `W` (or `R`), `mid` (`d x batch`) multiplies `R·x`
/// before `L` in factored kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct HighwayMasks {
    pub input: Matrix,
    pub mid: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct HighwayVars {
    pub proposal: MapVars,
    pub transform: MapVars,
    pub bias_proposal: NodeId,
    pub bias_transform: NodeId,
    pub norm: Option<[BatchNormVars; 2]>,
}

impl HighwayLayer {
    pub fn init(
        n: usize,
        kind: ParamKind,
        rank: usize,
        activation: Activation,
        transform_bias: f64,
        batch_norm: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let spec = MapSpec::square(n, kind, rank);
        Ok(HighwayLayer {
            proposal: LinearMap::init(spec, rng)?,
            transform: LinearMap::init(spec, rng)?,
            bias_proposal: Matrix::zeros(n, 1),
            bias_transform: Matrix::filled(n, 1, transform_bias),
            activation,
            norm: batch_norm.then(|| [BatchNormState::new(n), BatchNormState::new(n)]),
        })
    }

    pub fn width(&self) -> usize {
        self.bias_proposal.rows()
    }

    pub fn sample_masks(&self, rng: &mut Rng, p: f64, batch: usize) -> Result<HighwayMasks> {
        let input = dropout_mask(rng, p, self.width(), batch)?;
        let mid = match self.proposal.rank() {
            Some(d) => Some(dropout_mask(rng, p, d, batch)?),
            None => None,
        };
        Ok(HighwayMasks { input, mid })
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        for (name, m) in self.proposal.factors() {
            f(format!("{prefix}.proposal.{name}"), m);
        }
        for (name, m) in self.transform.factors() {
            f(format!("{prefix}.transform.{name}"), m);
        }
        f(format!("{prefix}.b_proposal"), &self.bias_proposal);
        f(format!("{prefix}.b_transform"), &self.bias_transform);
        if let Some([p, t]) = &self.norm {
            f(format!("{prefix}.bn_proposal.gamma"), &p.gamma);
            f(format!("{prefix}.bn_proposal.beta"), &p.beta);
            f(format!("{prefix}.bn_transform.gamma"), &t.gamma);
            f(format!("{prefix}.bn_transform.beta"), &t.beta);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        for (name, m) in self.proposal.factors_mut() {
            f(format!("{prefix}.proposal.{name}"), m);
        }
        for (name, m) in self.transform.factors_mut() {
            f(format!("{prefix}.transform.{name}"), m);
        }
        f(format!("{prefix}.b_proposal"), &mut self.bias_proposal);
        f(format!("{prefix}.b_transform"), &mut self.bias_transform);
        if let Some([p, t]) = &mut self.norm {
            f(format!("{prefix}.bn_proposal.gamma"), &mut p.gamma);
            f(format!("{prefix}.bn_proposal.beta"), &mut p.beta);
            f(format!("{prefix}.bn_transform.gamma"), &mut t.gamma);
            f(format!("{prefix}.bn_transform.beta"), &mut t.beta);
        }
    }

    /// Running statistics (not trained by gradient).
    pub fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        if let Some([p, t]) = &self.norm {
            f(format!("{prefix}.bn_proposal.running_mean"), &p.running_mean);
            f(format!("{prefix}.bn_proposal.running_var"), &p.running_var);
            f(format!("{prefix}.bn_transform.running_mean"), &t.running_mean);
            f(format!("{prefix}.bn_transform.running_var"), &t.running_var);
        }
    }

    pub fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        if let Some([p, t]) = &mut self.norm {
            f(format!("{prefix}.bn_proposal.running_mean"), &mut p.running_mean);
            f(format!("{prefix}.bn_proposal.running_var"), &mut p.running_var);
            f(format!("{prefix}.bn_transform.running_mean"), &mut t.running_mean);
            f(format!("{prefix}.bn_transform.running_var"), &mut t.running_var);
        }
    }

    pub fn bind(&self, tape: &mut Tape, leaves: &mut Vec<NodeId>) -> HighwayVars {
        let proposal = self.proposal.bind(tape, leaves);
        let transform = self.transform.bind(tape, leaves);
        let bias_proposal = tape.leaf(self.bias_proposal.clone());
        let bias_transform = tape.leaf(self.bias_transform.clone());
        leaves.push(bias_proposal);
        leaves.push(bias_transform);
        let norm = self
            .norm
            .as_ref()
            .map(|[p, t]| [p.bind(tape, leaves), t.bind(tape, leaves)]);
        HighwayVars {
            proposal,
            transform,
            bias_proposal,
            bias_transform,
            norm,
        }
    }

    /// Records the layer on the tape. Returns the output and, in train mode
    /// with normalization, the `[proposal, transform]` batch statistics.
    pub fn forward_tape(
        &self,
        vars: &HighwayVars,
        tape: &mut Tape,
        x: NodeId,
        mode: Mode,
        masks: Option<&HighwayMasks>,
    ) -> Result<(NodeId, Vec<BatchStats>)> {
        let (x_in, mid) = match mode {
            Mode::Train => {
                let masks = masks.ok_or_else(|| {
                    Error::Config("highway layer in train mode needs dropout masks".into())
                })?;
                let m = tape.constant(masks.input.clone());
                let x_in = tape.mul(x, m)?;
                let mid = match (&masks.mid, self.proposal.rank()) {
                    (Some(mm), Some(_)) => Some(tape.constant(mm.clone())),
                    (None, Some(_)) => {
                        return Err(Error::Config(
                            "factored highway layer needs a mid-factor dropout mask".into(),
                        ))
                    }
                    _ => None,
                };
                (x_in, mid)
            }
            Mode::Infer => (x, None),
        };
        let mut p = vars.proposal.apply_masked(tape, x_in, mid)?;
        let mut t = vars.transform.apply_masked(tape, x_in, mid)?;
        let mut stats = Vec::new();
        if let (Some([bn_p, bn_t]), Some([v_p, v_t])) = (&self.norm, &vars.norm) {
            let (np, sp) = bn_p.forward_tape(tape, *v_p, p, mode)?;
            let (nt, st) = bn_t.forward_tape(tape, *v_t, t, mode)?;
            p = np;
            t = nt;
            stats.extend(sp);
            stats.extend(st);
        }
        let p = tape.add_col(p, vars.bias_proposal)?;
        let p = tape.activate(p, self.activation);
        let t = tape.add_col(t, vars.bias_transform)?;
        let t = tape.sigmoid(t);
        let out = combine_on_tape(tape, PassthroughForm::Convex, x, p, t, None)?;
        Ok((out, stats))
    }

    pub fn update_running(&mut self, stats: &[BatchStats]) {
        if let Some([p, t]) = &mut self.norm {
            if let [sp, st] = stats {
                p.update_running(sp);
                t.update_running(st);
            }
        }
    }
}

impl HighwayLayer {
    /// Inference-mode output without touching running statistics.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let mut leaves = Vec::new();
        let vars = self.bind(&mut tape, &mut leaves);
        let xi = tape.constant(x.clone());
        let (y, _) = self.forward_tape(&vars, &mut tape, xi, Mode::Infer, None)?;
        Ok(tape.value(y).clone())
    }
}

/// Evaluates one layer on `x` (`n x batch`). In train mode batch
/// normalization running statistics are updated.
pub fn highway_forward(
    layer: &mut HighwayLayer,
    x: &Matrix,
    mode: Mode,
    masks: Option<&HighwayMasks>,
) -> Result<Matrix> {
    if x.rows() != layer.width() {
        return Err(Error::dim("highway_forward", (layer.width(), x.cols()), x.shape()));
    }
    let mut tape = Tape::new();
    let mut leaves = Vec::new();
    let vars = layer.bind(&mut tape, &mut leaves);
    let xi = tape.constant(x.clone());
    let (y, stats) = layer.forward_tape(&vars, &mut tape, xi, mode, masks)?;
    layer.update_running(&stats);
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sigmoid, uniform_init};

    fn no_dropout(layer: &HighwayLayer, batch: usize) -> HighwayMasks {
        HighwayMasks {
            input: Matrix::ones(layer.width(), batch),
            mid: layer.proposal.rank().map(|d| Matrix::ones(d, batch)),
        }
    }

    #[test]
    fn closed_transform_gate_carries_input() {
        let mut rng = Rng::new(1);
        for kind in ParamKind::ALL {
            let mut layer = HighwayLayer::init(4, kind, 2, Activation::Relu, -800.0, false, &mut rng).unwrap();
            let x = uniform_init(&mut rng, 4, 3, 1);
            let y = highway_forward(&mut layer, &x, Mode::Infer, None).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn open_transform_gate_gives_proposal() {
        let mut layer = HighwayLayer {
            proposal: LinearMap::full(Matrix::filled(1, 1, 1.0)),
            transform: LinearMap::full(Matrix::zeros(1, 1)),
            bias_proposal: Matrix::zeros(1, 1),
            bias_transform: Matrix::filled(1, 1, 800.0),
            activation: Activation::Identity,
            norm: None,
        };
        let y = highway_forward(&mut layer, &Matrix::column(&[2.0]), Mode::Infer, None).unwrap();
        assert_eq!(y, Matrix::column(&[2.0]));
    }

    #[test]
    fn train_mode_without_masks_is_rejected() {
        let mut layer = HighwayLayer::init(3, ParamKind::Full, 0, Activation::Relu, -1.0, false, &mut Rng::new(0)).unwrap();
        let err = highway_forward(&mut layer, &Matrix::zeros(3, 2), Mode::Train, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn infer_mode_is_pure() {
        let mut rng = Rng::new(2);
        let mut layer = HighwayLayer::init(5, ParamKind::LowRankDiag, 2, Activation::Relu, -1.0, true, &mut rng).unwrap();
        let x = uniform_init(&mut rng, 5, 4, 1);
        let a = highway_forward(&mut layer, &x, Mode::Infer, None).unwrap();
        let b = highway_forward(&mut layer, &x, Mode::Infer, None).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn dropout_masks_reach_both_branches() {
        // Identical branches with sigmoid activation: under shared masks the
        // proposal equals the transform gate exactly.
        let mut rng = Rng::new(3);
        let map = LinearMap::init(MapSpec::square(4, ParamKind::LowRank, 2), &mut rng).unwrap();
        let mut layer = HighwayLayer {
            proposal: map.clone(),
            transform: map.clone(),
            bias_proposal: Matrix::zeros(4, 1),
            bias_transform: Matrix::zeros(4, 1),
            activation: Activation::Sigmoid,
            norm: None,
        };
        let x = uniform_init(&mut rng, 4, 3, 1);
        let masks = layer.sample_masks(&mut rng, 0.5, 3).unwrap();
        let y = highway_forward(&mut layer, &x, Mode::Train, Some(&masks)).unwrap();

        let LinearMap::LowRank { l, r } = &map else { panic!() };
        let h = r.matmul(&x.hadamard(&masks.input).unwrap()).unwrap();
        let h = h.hadamard(masks.mid.as_ref().unwrap()).unwrap();
        let gate = l.matmul(&h).unwrap().map(sigmoid);
        let expect = gate
            .hadamard(&gate)
            .unwrap()
            .add(&x.hadamard(&gate.map(|g| 1.0 - g)).unwrap())
            .unwrap();
        assert!(y.sub(&expect).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn no_dropout_train_without_norm_equals_infer() {
        let mut rng = Rng::new(4);
        let mut layer = HighwayLayer::init(4, ParamKind::LowRank, 2, Activation::Tanh, -1.0, false, &mut rng).unwrap();
        let x = uniform_init(&mut rng, 4, 2, 1);
        let masks = no_dropout(&layer, 2);
        let a = highway_forward(&mut layer, &x, Mode::Train, Some(&masks)).unwrap();
        let b = highway_forward(&mut layer, &x, Mode::Infer, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bind_order_matches_visit_order() {
        let layer = HighwayLayer::init(4, ParamKind::LowRankDiag, 2, Activation::Relu, -1.0, true, &mut Rng::new(5)).unwrap();
        let mut tape = Tape::new();
        let mut leaves = Vec::new();
        layer.bind(&mut tape, &mut leaves);
        let mut visited = Vec::new();
        layer.visit("h", &mut |_, m| visited.push(m.clone()));
        let bound: Vec<Matrix> = leaves.iter().map(|id| tape.value(*id).clone()).collect();
        assert_eq!(bound, visited);
    }
}
