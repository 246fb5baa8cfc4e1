use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, NodeId, Tape};
use crate::cells::{
    dropout_mask, gru_step, loss, vanilla_rnn_step, BatchNormState, BatchNormVars, GruCell, GruVars,
    HighwayLayer, HighwayVars, LossKind, Mode, Targets, VanillaRnnCell, VanillaVars,
};
use crate::error::{Error, Result};
use crate::linalg::{uniform_init, Activation, Matrix, Rng};
use crate::param::ParamKind;
use crate::tasks::{Dataset, ImageSet, Sample, StepTargets, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Vanilla,
    Highway,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Highway, CellKind::Gru, CellKind::Vanilla];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Vanilla => "vanilla",
            CellKind::Highway => "highway",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gru" => Some(CellKind::Gru),
            "vanilla" | "rnn" => Some(CellKind::Vanilla),
            "highway" => Some(CellKind::Highway),
            _ => None,
        }
    }
}

/// Dropout probabilities of the Highway classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutSpec {
    /// Before the input-to-state matrix.
    pub input: f64,
    /// Inside each hidden layer, before `R` and `L` (or `W`).
    pub hidden: f64,
    /// Before the state-to-output matrix.
    pub output: f64,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        DropoutSpec {
            input: 0.2,
            hidden: 0.3,
            output: 0.5,
        }
    }
}

impl DropoutSpec {
    pub fn none() -> Self {
        DropoutSpec {
            input: 0.0,
            hidden: 0.0,
            output: 0.0,
        }
    }
}

fn default_param() -> ParamKind {
    ParamKind::Full
}
fn default_transform_bias() -> f64 {
    -1.0
}
fn default_layers() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_l2() -> f64 {
    1e-3
}
fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub cell: CellKind,
    /// State dimension.
    pub n: usize,
    /// Maximum rank for factored kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default = "default_param")]
    pub param: ParamKind,
    /// Initial bias of the GRU carry gate.
    #[serde(default)]
    pub carry_bias: f64,
    /// Initial bias of the Highway transform gate.
    #[serde(default = "default_transform_bias")]
    pub transform_bias: f64,
    /// Number of Highway hidden layers.
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_true")]
    pub batch_norm: bool,
    #[serde(default)]
    pub dropout: DropoutSpec,
    /// L2 coefficient on the Highway output matrix.
    #[serde(default = "default_l2")]
    pub l2: f64,
    /// Highway proposal activation.
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl ModelSpec {
    pub fn new(cell: CellKind, n: usize, param: ParamKind, d: Option<usize>) -> Self {
        ModelSpec {
            cell,
            n,
            d,
            param,
            carry_bias: 0.0,
            transform_bias: default_transform_bias(),
            layers: default_layers(),
            batch_norm: true,
            dropout: DropoutSpec::default(),
            l2: default_l2(),
            activation: default_activation(),
        }
    }

    pub fn rank(&self) -> usize {
        self.d.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("state dimension n must be positive".into()));
        }
        match (self.param, self.d) {
            (ParamKind::Full, Some(_)) => {
                return Err(Error::Config("a rank d only applies to the lr and lrd kinds".into()))
            }
            (ParamKind::LowRank | ParamKind::LowRankDiag, None) => {
                return Err(Error::Config(format!("--param {} needs a rank d", self.param.name())))
            }
            (_, Some(d)) if d == 0 || d > self.n => {
                return Err(Error::Config(format!("rank d={d} must lie in 1..={}", self.n)))
            }
            _ => {}
        }
        if self.cell == CellKind::Highway {
            if self.layers == 0 {
                return Err(Error::Config("Highway classifier needs at least one layer".into()));
            }
            for p in [self.dropout.input, self.dropout.hidden, self.dropout.output] {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
                }
            }
            if self.l2 < 0.0 {
                return Err(Error::Config("l2 coefficient must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentCell {
    Gru(GruCell),
    Vanilla(VanillaRnnCell),
}

#[derive(Debug, Clone)]
enum CellVars {
    Gru(GruVars),
    Vanilla(VanillaVars),
}

impl RecurrentCell {
    pub fn state_size(&self) -> usize {
        match self {
            RecurrentCell::Gru(c) => c.state_size(),
            RecurrentCell::Vanilla(c) => c.state_size(),
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            RecurrentCell::Gru(c) => c.input_size(),
            RecurrentCell::Vanilla(c) => c.input_size(),
        }
    }

    fn x0(&self) -> &Matrix {
        match self {
            RecurrentCell::Gru(c) => &c.x0,
            RecurrentCell::Vanilla(c) => &c.x0,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        match self {
            RecurrentCell::Gru(c) => c.visit(prefix, f),
            RecurrentCell::Vanilla(c) => c.visit(prefix, f),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        match self {
            RecurrentCell::Gru(c) => c.visit_mut(prefix, f),
            RecurrentCell::Vanilla(c) => c.visit_mut(prefix, f),
        }
    }

    fn bind(&self, tape: &mut Tape, leaves: &mut Vec<NodeId>) -> CellVars {
        match self {
            RecurrentCell::Gru(c) => CellVars::Gru(c.bind(tape, leaves)),
            RecurrentCell::Vanilla(c) => CellVars::Vanilla(c.bind(tape, leaves)),
        }
    }

    fn step(&self, x: &Matrix, u: &Matrix) -> Result<Matrix> {
        match self {
            RecurrentCell::Gru(c) => gru_step(c, x, u),
            RecurrentCell::Vanilla(c) => vanilla_rnn_step(c, x, u),
        }
    }
}

impl CellVars {
    fn x0(&self) -> NodeId {
        match self {
            CellVars::Gru(v) => v.x0,
            CellVars::Vanilla(v) => v.x0,
        }
    }

    fn step(&self, tape: &mut Tape, x: NodeId, u: NodeId) -> Result<NodeId> {
        match self {
            CellVars::Gru(v) => GruCell::step_tape(v, tape, x, u),
            CellVars::Vanilla(v) => VanillaRnnCell::step_tape(v, tape, x, u),
        }
    }
}

/// Recurrent cell unrolled over a sequence with a dense output head
/// applied at every step that carries a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentModel {
    pub cell: RecurrentCell,
    pub head: Matrix,
    pub head_bias: Matrix,
    pub loss: LossKind,
}

/// Tape handles of a bound recurrent model.
#[derive(Debug, Clone)]
pub struct RecurrentVars {
    cell: CellVars,
    head: NodeId,
    head_bias: NodeId,
}

fn batch_inputs(samples: &[&Sample], t: usize, m: usize) -> Matrix {
    let b = samples.len();
    let mut data = vec![0.0; m * b];
    let mut col = vec![0.0; m];
    for (j, s) in samples.iter().enumerate() {
        s.inputs.write_step(t, &mut col);
        for (r, v) in col.iter().enumerate() {
            data[r * b + j] = *v;
        }
    }
    Matrix::new(m, b, data).expect("batch input shape")
}

/// Steps where at least one sample carries a loss, and the targets and
/// mask laid out as `step-major, sample-minor` columns.
fn gather_targets(samples: &[&Sample], outputs: usize) -> Result<(Vec<usize>, Targets, Vec<bool>)> {
    let len = samples[0].len();
    let steps: Vec<usize> = (0..len).filter(|t| samples.iter().any(|s| s.mask[*t])).collect();
    let mut mask = Vec::with_capacity(steps.len() * samples.len());
    for t in &steps {
        mask.extend(samples.iter().map(|s| s.mask[*t]));
    }
    let targets = match &samples[0].targets {
        StepTargets::Classes(_) => {
            let mut classes = Vec::with_capacity(mask.len());
            for t in &steps {
                for s in samples {
                    let StepTargets::Classes(c) = &s.targets else {
                        return Err(Error::Config("mixed target kinds in one batch".into()));
                    };
                    classes.push(c[*t] as usize);
                }
            }
            Targets::Classes(classes)
        }
        StepTargets::Values(_) => {
            if outputs != 1 {
                return Err(Error::Config(format!("real targets need one output, model has {outputs}")));
            }
            let mut values = Vec::with_capacity(mask.len());
            for t in &steps {
                for s in samples {
                    let StepTargets::Values(v) = &s.targets else {
                        return Err(Error::Config("mixed target kinds in one batch".into()));
                    };
                    values.push(v[*t]);
                }
            }
            Targets::Values(Matrix::new(1, values.len(), values)?)
        }
    };
    Ok((steps, targets, mask))
}

fn check_batch(samples: &[&Sample], m: usize) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Degenerate("empty batch".into()))?;
    let len = first.len();
    for s in samples {
        if s.len() != len {
            return Err(Error::Config("all sequences in a batch must have the same length".into()));
        }
        if s.inputs.dim() != m {
            return Err(Error::Config(format!(
                "sample input dimension {} does not match the model's {m}",
                s.inputs.dim()
            )));
        }
    }
    Ok(len)
}

impl RecurrentModel {
    pub fn visit(&self, f: &mut dyn FnMut(String, &Matrix)) {
        self.cell.visit("cell", f);
        f("head.w".into(), &self.head);
        f("head.b".into(), &self.head_bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.cell.visit_mut("cell", f);
        f("head.w".into(), &mut self.head);
        f("head.b".into(), &mut self.head_bias);
    }

    pub fn bind(&self, tape: &mut Tape, leaves: &mut Vec<NodeId>) -> RecurrentVars {
        let cell = self.cell.bind(tape, leaves);
        let head = tape.leaf(self.head.clone());
        let head_bias = tape.leaf(self.head_bias.clone());
        leaves.push(head);
        leaves.push(head_bias);
        RecurrentVars { cell, head, head_bias }
    }

    /// Unrolls the cell over `samples` on the tape; returns the final
    /// state node and the states at the given steps.
    pub fn unroll_tape(
        &self,
        vars: &RecurrentVars,
        tape: &mut Tape,
        samples: &[&Sample],
        keep: &[usize],
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let m = self.cell.input_size();
        let len = check_batch(samples, m)?;
        let mut x = tape.broadcast_cols(vars.cell.x0(), samples.len())?;
        let mut kept = Vec::with_capacity(keep.len());
        let mut next = keep.iter().peekable();
        for t in 0..len {
            let u = tape.constant(batch_inputs(samples, t, m));
            x = vars.cell.step(tape, x, u)?;
            if next.peek() == Some(&&t) {
                next.next();
                kept.push(x);
            }
        }
        Ok((x, kept))
    }

    /// Mean masked loss of `samples` recorded on the tape. Returns the loss
    /// node, its value and the number of contributing positions.
    pub fn loss_tape(
        &self,
        vars: &RecurrentVars,
        tape: &mut Tape,
        samples: &[&Sample],
    ) -> Result<(NodeId, f64, usize)> {
        let (steps, targets, mask) = gather_targets(samples, self.head.rows())?;
        let (_, states) = self.unroll_tape(vars, tape, samples, &steps)?;
        let states = tape.concat_cols(&states)?;
        let logits = tape.matmul(vars.head, states)?;
        let logits = tape.add_col(logits, vars.head_bias)?;
        let (value, grad) = loss(self.loss, tape.value(logits), &targets, &mask)?;
        let node = tape.loss(logits, value, grad)?;
        Ok((node, value, mask.iter().filter(|m| **m).count()))
    }

    /// Output head at every loss-carrying step, without a tape.
    pub fn predict(&self, samples: &[&Sample]) -> Result<(Matrix, Targets, Vec<bool>)> {
        let m = self.cell.input_size();
        let len = check_batch(samples, m)?;
        let (steps, targets, mask) = gather_targets(samples, self.head.rows())?;
        let b = samples.len();
        let x0 = self.cell.x0();
        let mut x = Matrix::hcat(&vec![x0; b])?;
        let mut kept = Vec::with_capacity(steps.len());
        let mut next = steps.iter().peekable();
        for t in 0..len {
            x = self.cell.step(&x, &batch_inputs(samples, t, m))?;
            if next.peek() == Some(&&t) {
                next.next();
                kept.push(x.clone());
            }
        }
        let states = Matrix::hcat(&kept.iter().collect::<Vec<_>>())?;
        let logits = self.head.matmul(&states)?.add_col(&self.head_bias)?;
        Ok((logits, targets, mask))
    }
}

/// Dense input layer, stacked Highway layers and a dense output head,
/// trained with the per-class L2 hinge loss plus L2 on the head.
#[derive(Debug, Clone, PartialEq)]
pub struct HighwayClassifier {
    pub input: Matrix,
    pub input_bias: Matrix,
    pub input_norm: Option<BatchNormState>,
    pub layers: Vec<HighwayLayer>,
    pub head: Matrix,
    pub head_bias: Matrix,
    pub dropout: DropoutSpec,
    pub l2: f64,
    pub loss: LossKind,
}

#[derive(Debug, Clone)]
pub struct HighwayClassifierVars {
    input: NodeId,
    input_bias: NodeId,
    input_norm: Option<BatchNormVars>,
    layers: Vec<HighwayVars>,
    head: NodeId,
    head_bias: NodeId,
}

fn image_batch(images: &ImageSet, indices: &[usize]) -> Matrix {
    let p = images.image_size();
    let b = indices.len();
    let mut data = vec![0.0; p * b];
    for (j, i) in indices.iter().enumerate() {
        for (r, v) in images.image(*i).iter().enumerate() {
            data[r * b + j] = *v as f64 / 255.0;
        }
    }
    Matrix::new(p, b, data).expect("image batch shape")
}

impl HighwayClassifier {
    pub fn width(&self) -> usize {
        self.input.rows()
    }

    pub fn visit(&self, f: &mut dyn FnMut(String, &Matrix)) {
        f("input.w".into(), &self.input);
        f("input.b".into(), &self.input_bias);
        if let Some(bn) = &self.input_norm {
            f("input.bn.gamma".into(), &bn.gamma);
            f("input.bn.beta".into(), &bn.beta);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("layer{i}"), f);
        }
        f("head.w".into(), &self.head);
        f("head.b".into(), &self.head_bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        f("input.w".into(), &mut self.input);
        f("input.b".into(), &mut self.input_bias);
        if let Some(bn) = &mut self.input_norm {
            f("input.bn.gamma".into(), &mut bn.gamma);
            f("input.bn.beta".into(), &mut bn.beta);
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("layer{i}"), f);
        }
        f("head.w".into(), &mut self.head);
        f("head.b".into(), &mut self.head_bias);
    }

    pub fn visit_buffers(&self, f: &mut dyn FnMut(String, &Matrix)) {
        if let Some(bn) = &self.input_norm {
            f("input.bn.running_mean".into(), &bn.running_mean);
            f("input.bn.running_var".into(), &bn.running_var);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit_buffers(&format!("layer{i}"), f);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        if let Some(bn) = &mut self.input_norm {
            f("input.bn.running_mean".into(), &mut bn.running_mean);
            f("input.bn.running_var".into(), &mut bn.running_var);
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_buffers_mut(&format!("layer{i}"), f);
        }
    }

    pub fn bind(&self, tape: &mut Tape, leaves: &mut Vec<NodeId>) -> HighwayClassifierVars {
        let input = tape.leaf(self.input.clone());
        let input_bias = tape.leaf(self.input_bias.clone());
        leaves.push(input);
        leaves.push(input_bias);
        let input_norm = self.input_norm.as_ref().map(|bn| bn.bind(tape, leaves));
        let layers = self.layers.iter().map(|l| l.bind(tape, leaves)).collect();
        let head = tape.leaf(self.head.clone());
        let head_bias = tape.leaf(self.head_bias.clone());
        leaves.push(head);
        leaves.push(head_bias);
        HighwayClassifierVars {
            input,
            input_bias,
            input_norm,
            layers,
            head,
            head_bias,
        }
    }

    /// Logits for the columns of `x`. `rng` drives dropout and is required
    /// in train mode. Batch statistics are returned in layer order.
    pub fn forward_tape(
        &self,
        vars: &HighwayClassifierVars,
        tape: &mut Tape,
        x: NodeId,
        mode: Mode,
        mut rng: Option<&mut Rng>,
    ) -> Result<(NodeId, Vec<BatchStats>)> {
        let batch = tape.value(x).cols();
        let mut stats = Vec::new();
        let drop = |tape: &mut Tape, node: NodeId, p: f64, rng: &mut Option<&mut Rng>| -> Result<NodeId> {
            match (mode, rng.as_deref_mut()) {
                (Mode::Train, Some(r)) => {
                    let rows = tape.value(node).rows();
                    let mask = tape.constant(dropout_mask(r, p, rows, batch)?);
                    tape.mul(node, mask)
                }
                (Mode::Train, None) => Err(Error::Config("train mode needs a dropout RNG".into())),
                (Mode::Infer, _) => Ok(node),
            }
        };
        let h = drop(tape, x, self.dropout.input, &mut rng)?;
        let mut h = tape.matmul(vars.input, h)?;
        if let (Some(bn), Some(v)) = (&self.input_norm, &vars.input_norm) {
            let (y, s) = bn.forward_tape(tape, *v, h, mode)?;
            h = y;
            stats.extend(s);
        }
        let h = tape.add_col(h, vars.input_bias)?;
        let mut h = tape.activate(h, Activation::Relu);
        for (layer, lv) in self.layers.iter().zip(&vars.layers) {
            let masks = match (mode, rng.as_deref_mut()) {
                (Mode::Train, Some(r)) => Some(layer.sample_masks(r, self.dropout.hidden, batch)?),
                _ => None,
            };
            let (y, s) = layer.forward_tape(lv, tape, h, mode, masks.as_ref())?;
            h = y;
            stats.extend(s);
        }
        let h = drop(tape, h, self.dropout.output, &mut rng)?;
        let logits = tape.matmul(vars.head, h)?;
        let logits = tape.add_col(logits, vars.head_bias)?;
        Ok((logits, stats))
    }

    /// Training objective on the tape: mean data loss plus `l2·‖W_out‖²`.
    /// Returns the objective node, the data loss value and the batch stats.
    pub fn loss_tape(
        &self,
        vars: &HighwayClassifierVars,
        tape: &mut Tape,
        images: &ImageSet,
        indices: &[usize],
        rng: &mut Rng,
    ) -> Result<(NodeId, f64, Vec<BatchStats>)> {
        let classes = indices.iter().map(|i| images.labels[*i] as usize).collect();
        self.objective_tape(vars, tape, image_batch(images, indices), classes, rng)
    }

    /// [`HighwayClassifier::loss_tape`] for an explicit `inputs x batch`
    /// matrix and its class labels.
    pub fn objective_tape(
        &self,
        vars: &HighwayClassifierVars,
        tape: &mut Tape,
        x: Matrix,
        classes: Vec<usize>,
        rng: &mut Rng,
    ) -> Result<(NodeId, f64, Vec<BatchStats>)> {
        let x = tape.constant(x);
        let (logits, stats) = self.forward_tape(vars, tape, x, Mode::Train, Some(rng))?;
        let mask = vec![true; classes.len()];
        let (value, grad) = loss(self.loss, tape.value(logits), &Targets::Classes(classes), &mask)?;
        let data = tape.loss(logits, value, grad)?;
        let reg = tape.sum_squares(vars.head);
        let reg = tape.scale(reg, self.l2);
        Ok((tape.add(data, reg)?, value, stats))
    }

    pub fn apply_stats(&mut self, stats: &[BatchStats]) {
        let mut rest = stats;
        if let Some(bn) = &mut self.input_norm {
            if let Some((first, tail)) = rest.split_first() {
                bn.update_running(first);
                rest = tail;
            }
        }
        for layer in &mut self.layers {
            if layer.norm.is_some() && rest.len() >= 2 {
                layer.update_running(&rest[..2]);
                rest = &rest[2..];
            }
        }
    }

    /// Inference-mode logits.
    pub fn predict(&self, images: &ImageSet, indices: &[usize]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let mut leaves = Vec::new();
        let vars = self.bind(&mut tape, &mut leaves);
        let x = tape.constant(image_batch(images, indices));
        let (logits, _) = self.forward_tape(&vars, &mut tape, x, Mode::Infer, None)?;
        Ok(tape.value(logits).clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Recurrent(RecurrentModel),
    Highway(HighwayClassifier),
}

/// Loss and accuracy over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Fraction of loss-carrying positions whose argmax is the target;
    /// `None` for regression.
    pub accuracy: Option<f64>,
    pub positions: usize,
}

/// Mean loss and parameter gradients of one minibatch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub grads: Vec<Matrix>,
}

fn correct(logits: &Matrix, targets: &Targets, mask: &[bool]) -> usize {
    let Targets::Classes(classes) = targets else { return 0 };
    (0..logits.cols())
        .filter(|j| mask[*j])
        .filter(|j| {
            let col = logits.col(*j);
            let mut best = 0;
            for (i, v) in col.iter().enumerate() {
                if *v > col[best] {
                    best = i;
                }
            }
            best == classes[*j]
        })
        .count()
}

impl Model {
    pub fn visit(&self, f: &mut dyn FnMut(String, &Matrix)) {
        match self {
            Model::Recurrent(m) => m.visit(f),
            Model::Highway(m) => m.visit(f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        match self {
            Model::Recurrent(m) => m.visit_mut(f),
            Model::Highway(m) => m.visit_mut(f),
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn visit_buffers(&self, f: &mut dyn FnMut(String, &Matrix)) {
        if let Model::Highway(m) = self {
            m.visit_buffers(f);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        if let Model::Highway(m) = self {
            m.visit_buffers_mut(f);
        }
    }

    pub fn params(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        self.visit(&mut |name, m| out.push((name, m.clone())));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit(&mut |_, m| total += m.len());
        total
    }

    pub fn loss_kind(&self) -> LossKind {
        match self {
            Model::Recurrent(m) => m.loss,
            Model::Highway(m) => m.loss,
        }
    }

    /// Mean loss and gradients over the batch `indices` of `data`. In
    /// Highway models batch-norm running statistics are updated.
    ///
    /// With `threads > 1` a recurrent batch is split into contiguous
    /// chunks processed in parallel; chunk results are combined in chunk
    /// order, so the result is deterministic for a fixed thread count.
    pub fn batch_gradients(
        &mut self,
        data: &Dataset,
        indices: &[usize],
        rng: &mut Rng,
        threads: usize,
    ) -> Result<BatchGradients> {
        if indices.is_empty() {
            return Err(Error::Degenerate("empty batch".into()));
        }
        match (self, data) {
            (Model::Recurrent(m), Dataset::Sequences(samples)) => {
                let batch: Vec<&Sample> = indices.iter().map(|i| &samples[*i]).collect();
                let threads = threads.clamp(1, batch.len());
                if threads == 1 {
                    let (loss, grads, _) = recurrent_gradients(m, &batch)?;
                    return Ok(BatchGradients { loss, grads });
                }
                let chunk = batch.len().div_ceil(threads);
                let model = &*m;
                let parts: Vec<Result<(f64, Vec<Matrix>, usize)>> = std::thread::scope(|s| {
                    let handles: Vec<_> = batch
                        .chunks(chunk)
                        .map(|c| s.spawn(move || recurrent_gradients(model, c)))
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
                });
                let mut total = 0usize;
                let mut loss = 0.0;
                let mut grads: Option<Vec<Matrix>> = None;
                for part in parts {
                    let (l, g, count) = part?;
                    let w = count as f64;
                    total += count;
                    loss += l * w;
                    match &mut grads {
                        None => grads = Some(g.iter().map(|m| m.scale(w)).collect()),
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                a.axpy(w, b)?;
                            }
                        }
                    }
                }
                let inv = 1.0 / total as f64;
                let grads = grads.expect("at least one chunk").iter().map(|g| g.scale(inv)).collect();
                Ok(BatchGradients { loss: loss * inv, grads })
            }
            (Model::Highway(m), Dataset::Images(images)) => {
                let mut tape = Tape::new();
                let mut leaves = Vec::new();
                let vars = m.bind(&mut tape, &mut leaves);
                let (objective, value, stats) = m.loss_tape(&vars, &mut tape, images, indices, rng)?;
                let g = tape.backward(objective)?;
                let grads = leaves.iter().map(|id| g.get_or_zeros(*id, tape.value(*id))).collect();
                m.apply_stats(&stats);
                Ok(BatchGradients { loss: value, grads })
            }
            _ => Err(Error::Config("model and dataset kinds do not match".into())),
        }
    }

    /// Inference-mode loss and accuracy over all of `data`.
    pub fn evaluate(&self, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
        if data.is_empty() {
            return Err(Error::Degenerate("cannot evaluate on an empty dataset".into()));
        }
        let batch_size = batch_size.max(1);
        let kind = self.loss_kind();
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        let mut positions = 0usize;
        let mut classes = true;
        let indices: Vec<usize> = (0..data.len()).collect();
        for chunk in indices.chunks(batch_size) {
            let (logits, targets, mask) = match (self, data) {
                (Model::Recurrent(m), Dataset::Sequences(samples)) => {
                    let batch: Vec<&Sample> = chunk.iter().map(|i| &samples[*i]).collect();
                    m.predict(&batch)?
                }
                (Model::Highway(m), Dataset::Images(images)) => {
                    let logits = m.predict(images, chunk)?;
                    let t = chunk.iter().map(|i| images.labels[*i] as usize).collect();
                    (logits, Targets::Classes(t), vec![true; chunk.len()])
                }
                _ => return Err(Error::Config("model and dataset kinds do not match".into())),
            };
            let count = mask.iter().filter(|m| **m).count();
            let (l, _) = loss(kind, &logits, &targets, &mask)?;
            loss_sum += l * count as f64;
            positions += count;
            classes = matches!(targets, Targets::Classes(_));
            hits += correct(&logits, &targets, &mask);
        }
        Ok(Evaluation {
            loss: loss_sum / positions as f64,
            accuracy: classes.then(|| hits as f64 / positions as f64),
            positions,
        })
    }
}

fn recurrent_gradients(model: &RecurrentModel, batch: &[&Sample]) -> Result<(f64, Vec<Matrix>, usize)> {
    let mut tape = Tape::new();
    let mut leaves = Vec::new();
    let vars = model.bind(&mut tape, &mut leaves);
    let (node, value, count) = model.loss_tape(&vars, &mut tape, batch)?;
    let g = tape.backward(node)?;
    let grads = leaves.iter().map(|id| g.get_or_zeros(*id, tape.value(*id))).collect();
    Ok((value, grads, count))
}

/// Loss used for a task: MSE for regression, L2 hinge for the Highway
/// classifier, cross-entropy otherwise.
pub fn task_loss(task: &TaskSpec, cell: CellKind) -> LossKind {
    if task.is_regression() {
        LossKind::Mse
    } else if cell == CellKind::Highway {
        LossKind::L2Hinge
    } else {
        LossKind::CrossEntropy
    }
}

/// Builds a model for `task`.
pub fn build_model(spec: &ModelSpec, task: &TaskSpec, rng: &mut Rng) -> Result<Model> {
    match (spec.cell, task) {
        (CellKind::Highway, TaskSpec::Mnist) | (CellKind::Gru | CellKind::Vanilla, _) => {}
        (CellKind::Highway, _) => {
            return Err(Error::Config("the Highway classifier runs on the mnist task only".into()))
        }
    }
    if task == &TaskSpec::Mnist && spec.cell != CellKind::Highway {
        return Err(Error::Config("the mnist task needs the highway model".into()));
    }
    build_model_dims(spec, task.input_dim(), task.output_dim(), task_loss(task, spec.cell), rng)
}

/// Builds a model with explicit input/output sizes.
pub fn build_model_dims(
    spec: &ModelSpec,
    inputs: usize,
    outputs: usize,
    loss_kind: LossKind,
    rng: &mut Rng,
) -> Result<Model> {
    spec.validate()?;
    if inputs == 0 || outputs == 0 {
        return Err(Error::Config("input and output sizes must be positive".into()));
    }
    let n = spec.n;
    let d = spec.rank();
    match spec.cell {
        CellKind::Gru | CellKind::Vanilla => {
            let cell = if spec.cell == CellKind::Gru {
                RecurrentCell::Gru(GruCell::init(n, inputs, spec.param, d, spec.carry_bias, rng)?)
            } else {
                RecurrentCell::Vanilla(VanillaRnnCell::init(n, inputs, spec.param, d, rng)?)
            };
            Ok(Model::Recurrent(RecurrentModel {
                cell,
                head: uniform_init(rng, outputs, n, n),
                head_bias: Matrix::zeros(outputs, 1),
                loss: loss_kind,
            }))
        }
        CellKind::Highway => {
            let input = uniform_init(rng, n, inputs, inputs);
            let mut layers = Vec::with_capacity(spec.layers);
            for _ in 0..spec.layers {
                layers.push(HighwayLayer::init(
                    n,
                    spec.param,
                    d,
                    spec.activation,
                    spec.transform_bias,
                    spec.batch_norm,
                    rng,
                )?);
            }
            Ok(Model::Highway(HighwayClassifier {
                input,
                input_bias: Matrix::zeros(n, 1),
                input_norm: spec.batch_norm.then(|| BatchNormState::new(n)),
                layers,
                head: uniform_init(rng, outputs, n, n),
                head_bias: Matrix::zeros(outputs, 1),
                dropout: spec.dropout,
                l2: spec.l2,
                loss: loss_kind,
            }))
        }
    }
}

/// Parameter counts per block, as `(block, count)`.
pub fn param_blocks(model: &Model) -> Vec<(String, usize)> {
    let mut blocks: Vec<(String, usize)> = Vec::new();
    model.visit(&mut |name, m| {
        let block = block_of(&name);
        match blocks.iter_mut().find(|(b, _)| *b == block) {
            Some((_, c)) => *c += m.len(),
            None => blocks.push((block, m.len())),
        }
    });
    blocks
}

fn block_of(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        ["cell", p, ..] if p.starts_with("u_") || *p == "u" => "input".into(),
        ["cell", "x0"] => "initial state".into(),
        ["cell", ..] => "recurrent".into(),
        ["input", "bn", ..] => "batch norm".into(),
        ["input", ..] => "input layer".into(),
        [layer, p, ..] if layer.starts_with("layer") && p.starts_with("bn_") => "batch norm".into(),
        [layer, ..] if layer.starts_with("layer") => format!("hidden {}", &layer[5..]),
        ["head", ..] => "head".into(),
        _ => name.into(),
    }
}
