//! RMSProp and Adam over a flat list of parameter matrices, gradient
//! clipping, and the plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClipPolicy {
    /// Clamp every gradient entry to `[-c, c]`.
    Component { c: f64 },
    /// Rescale the concatenated gradient to norm at most `c`; a non-finite
    /// entry skips the update.
    NormWithNanRecovery { c: f64 },
}

impl ClipPolicy {
    pub fn threshold(&self) -> f64 {
        match self {
            ClipPolicy::Component { c } | ClipPolicy::NormWithNanRecovery { c } => *c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.threshold();
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("clip threshold must be positive, got {c}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipOutcome {
    /// Gradients are usable; `norm` is the global norm before clipping.
    Apply { norm: f64 },
    /// Non-finite gradient under norm clipping: skip this update.
    Skip,
}

pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
}

/// Clips `grads` in place.
pub fn clip(policy: Option<ClipPolicy>, grads: &mut [Matrix]) -> Result<ClipOutcome> {
    let finite = grads.iter().all(Matrix::is_finite);
    let norm = global_norm(grads);
    match policy {
        None => {
            if !finite {
                return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
            }
        }
        Some(ClipPolicy::Component { c }) => {
            if !finite {
                return Err(Error::NonFinite(
                    "gradient contains NaN or infinity under component clipping".into(),
                ));
            }
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
            }
        }
        Some(ClipPolicy::NormWithNanRecovery { c }) => {
            if !finite || !norm.is_finite() {
                return Ok(ClipOutcome::Skip);
            }
            if norm > c {
                let s = c / norm;
                for g in grads.iter_mut() {
                    g.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }
    Ok(ClipOutcome::Apply { norm })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    RmsProp,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub ms: Vec<Matrix>,
    pub decay: f64,
    pub epsilon: f64,
    pub lr: f64,
}

impl RmsPropState {
    pub fn new(params: &[Matrix], lr: f64) -> Self {
        RmsPropState {
            ms: zeros_like(params),
            decay: RMSPROP_DECAY,
            epsilon: DEFAULT_EPSILON,
            lr,
        }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        check_shapes("rmsprop_step", &self.ms, params, grads)?;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g);
        }
        Ok(())
    }

    fn update(&mut self, i: usize, p: &mut Matrix, g: &Matrix) {
        let (rho, eps, lr) = (self.decay, self.epsilon, self.lr);
        let ms = self.ms[i].data_mut().iter_mut();
        for ((m, p), g) in ms.zip(p.data_mut().iter_mut()).zip(g.data()) {
            *m = rho * *m + (1.0 - rho) * g * g;
            *p -= lr * g / (m.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(params: &[Matrix], lr: f64) -> Self {
        AdamState {
            m: zeros_like(params),
            v: zeros_like(params),
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: DEFAULT_EPSILON,
            t: 0,
            lr,
        }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        check_shapes("adam_step", &self.m, params, grads)?;
        self.t += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g);
        }
        Ok(())
    }

    fn update(&mut self, i: usize, p: &mut Matrix, g: &Matrix) {
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let t = self.t as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let m = self.m[i].data_mut();
        let v = self.v[i].data_mut();
        for (k, (p, g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    RmsProp(RmsPropState),
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &[Matrix], lr: f64) -> Self {
        match kind {
            OptimizerKind::RmsProp => Optimizer::RmsProp(RmsPropState::new(params, lr)),
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params, lr)),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::RmsProp(_) => OptimizerKind::RmsProp,
            Optimizer::Adam(_) => OptimizerKind::Adam,
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::RmsProp(s) => s.lr,
            Optimizer::Adam(s) => s.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::RmsProp(s) => s.lr = lr,
            Optimizer::Adam(s) => s.lr = lr,
        }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        match self {
            Optimizer::RmsProp(s) => s.step(params, grads),
            Optimizer::Adam(s) => s.step(params, grads),
        }
    }

    /// Applies one update to parameters reached through a visitor, e.g.
    /// `model.visit_mut`. `grads` must follow the visiting order.
    pub fn step_visit(
        &mut self,
        visit: impl FnOnce(&mut dyn FnMut(String, &mut Matrix)),
        grads: &[Matrix],
    ) -> Result<()> {
        let slots = match self {
            Optimizer::RmsProp(s) => &s.ms,
            Optimizer::Adam(s) => &s.m,
        };
        if slots.len() != grads.len() {
            return Err(Error::Config(format!(
                "optimizer holds {} parameters, got {} gradients",
                slots.len(),
                grads.len()
            )));
        }
        for (s, g) in slots.iter().zip(grads) {
            if s.shape() != g.shape() {
                return Err(Error::dim("optimizer step", s.shape(), g.shape()));
            }
        }
        if let Optimizer::Adam(s) = self {
            s.t += 1;
        }
        let mut i = 0;
        let mut failure = None;
        visit(&mut |_, p| {
            if failure.is_none() && (i >= grads.len() || p.shape() != grads[i].shape()) {
                failure = Some(Error::Config(format!("parameter {i} does not match its gradient")));
            }
            if failure.is_none() {
                match self {
                    Optimizer::RmsProp(s) => s.update(i, p, &grads[i]),
                    Optimizer::Adam(s) => s.update(i, p, &grads[i]),
                }
            }
            i += 1;
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Number of completed updates (Adam only; RMSProp has no counter).
    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::RmsProp(_) => 0,
            Optimizer::Adam(s) => s.t,
        }
    }

    pub fn set_step_count(&mut self, t: u64) {
        if let Optimizer::Adam(s) = self {
            s.t = t;
        }
    }

    /// Accumulators as named slots, one group per parameter. Used by
    /// checkpointing.
    pub fn slots(&self) -> Vec<(&'static str, &[Matrix])> {
        match self {
            Optimizer::RmsProp(s) => vec![("ms", &s.ms)],
            Optimizer::Adam(s) => vec![("m", &s.m), ("v", &s.v)],
        }
    }

    pub fn slots_mut(&mut self) -> Vec<(&'static str, &mut Vec<Matrix>)> {
        match self {
            Optimizer::RmsProp(s) => vec![("ms", &mut s.ms)],
            Optimizer::Adam(s) => vec![("m", &mut s.m), ("v", &mut s.v)],
        }
    }
}

/// Halves the learning rate after `patience` consecutive epochs without
/// improvement of a lower-is-better validation metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub patience: u32,
    pub factor: f64,
    pub best: Option<f64>,
    pub stale: u32,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        PlateauSchedule {
            patience: 3,
            factor: 0.5,
            best: None,
            stale: 0,
        }
    }
}

impl PlateauSchedule {
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        match self.best {
            Some(best) if !(metric < best) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    self.stale = 0;
                    return lr * self.factor;
                }
                lr
            }
            _ => {
                self.best = Some(metric);
                self.stale = 0;
                lr
            }
        }
    }
}

fn zeros_like(params: &[Matrix]) -> Vec<Matrix> {
    params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect()
}

fn check_shapes(op: &'static str, state: &[Matrix], params: &[Matrix], grads: &[Matrix]) -> Result<()> {
    if state.len() != params.len() || params.len() != grads.len() {
        return Err(Error::Config(format!(
            "{op}: {} parameters, {} gradients, optimizer holds {}",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    for ((s, p), g) in state.iter().zip(params).zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::dim(op, p.shape(), g.shape()));
        }
        if s.shape() != p.shape() {
            return Err(Error::dim(op, s.shape(), p.shape()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Vec<Matrix> {
        vec![Matrix::filled(1, 1, v)]
    }

    #[test]
    fn component_clip() {
        let mut g = vec![Matrix::column(&[2.0, -0.5])];
        clip(Some(ClipPolicy::Component { c: 1.0 }), &mut g).unwrap();
        assert_eq!(g[0], Matrix::column(&[1.0, -0.5]));
    }

    #[test]
    fn norm_clip() {
        let mut g = vec![Matrix::column(&[3.0]), Matrix::column(&[4.0])];
        let out = clip(Some(ClipPolicy::NormWithNanRecovery { c: 1.0 }), &mut g).unwrap();
        assert_eq!(out, ClipOutcome::Apply { norm: 5.0 });
        assert!((g[0].get(0, 0) - 0.6).abs() < 1e-15);
        assert!((g[1].get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_signals_skip_and_leaves_params_alone() {
        let mut g = vec![Matrix::column(&[f64::NAN, 1.0])];
        let out = clip(Some(ClipPolicy::NormWithNanRecovery { c: 1.0 }), &mut g).unwrap();
        assert_eq!(out, ClipOutcome::Skip);

        let mut g = vec![Matrix::column(&[f64::NAN, 1.0])];
        let err = clip(Some(ClipPolicy::Component { c: 1.0 }), &mut g).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = scalar(0.0);
        let mut opt = RmsPropState::new(&p, 0.001);
        opt.step(&mut p, &scalar(1.0)).unwrap();
        assert!((opt.ms[0].get(0, 0) - 0.1).abs() < 1e-15);
        let expect = -0.001 / (0.1f64.sqrt() + 1e-8);
        assert!((p[0].get(0, 0) - expect).abs() < 1e-17);
        assert!((p[0].get(0, 0) + 0.0031623).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.7);
        let mut r = RmsPropState::new(&p, 0.1);
        r.step(&mut p, &scalar(0.0)).unwrap();
        assert_eq!(p[0].get(0, 0), 0.7);
        let mut a = AdamState::new(&p, 0.1);
        a.step(&mut p, &scalar(0.0)).unwrap();
        assert_eq!(p[0].get(0, 0), 0.7);
        assert_eq!(a.t, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [1e-3, 0.5, -20.0] {
            let mut p = scalar(1.0);
            let mut a = AdamState::new(&p, 0.01);
            a.step(&mut p, &scalar(g)).unwrap();
            let delta = p[0].get(0, 0) - 1.0;
            assert!((delta.abs() - 0.01).abs() < 1e-7, "g={g} delta={delta}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn rmsprop_descends_quadratic() {
        let mut p = scalar(1.0);
        let mut opt = RmsPropState::new(&p, 0.01);
        for _ in 0..100 {
            let g = scalar(2.0 * p[0].get(0, 0));
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p[0].get(0, 0).abs() < 0.1);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = scalar(1.0);
        let mut opt = AdamState::new(&p, 0.01);
        for _ in 0..500 {
            let g = scalar(2.0 * p[0].get(0, 0));
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p[0].get(0, 0).powi(2) < 1e-3);
    }

    #[test]
    fn visitor_step_matches_slice_step() {
        let params = vec![Matrix::column(&[1.0, -2.0]), Matrix::filled(1, 1, 0.5)];
        let grads = vec![Matrix::column(&[0.3, 0.1]), Matrix::filled(1, 1, -0.2)];
        for kind in [OptimizerKind::RmsProp, OptimizerKind::Adam] {
            let mut a = Optimizer::new(kind, &params, 0.01);
            let mut b = a.clone();
            let mut pa = params.clone();
            let mut pb = params.clone();
            for _ in 0..3 {
                a.step(&mut pa, &grads).unwrap();
                b.step_visit(|f| pb.iter_mut().for_each(|p| f(String::new(), p)), &grads).unwrap();
            }
            assert_eq!(pa, pb);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = scalar(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, &p, 0.1);
        assert!(opt.step(&mut p, &[Matrix::zeros(2, 1)]).is_err());
        assert!(opt.step(&mut p, &[]).is_err());
    }

    #[test]
    fn schedule_constant_while_improving() {
        let mut s = PlateauSchedule::default();
        let mut lr = 1.0;
        for m in [5.0, 4.0, 3.0, 2.0, 1.0] {
            lr = s.step(m, lr);
        }
        assert_eq!(lr, 1.0);
    }

    #[test]
    fn schedule_halves_after_three_stale_epochs() {
        let mut s = PlateauSchedule::default();
        let lrs: Vec<f64> = (0..4).scan(1.0, |lr, _| {
            *lr = s.step(1.0, *lr);
            Some(*lr)
        })
        .collect();
        assert_eq!(lrs, vec![1.0, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn seven_flat_epochs_halve_twice() {
        // Patience automaton traced by hand: epoch 1 sets the best, epochs
        // 2-4 and 5-7 are two full runs of three stale epochs.
        let mut s = PlateauSchedule::default();
        let mut lr = 1.0;
        let mut halvings = 0;
        for _ in 0..7 {
            let next = s.step(2.0, lr);
            if next < lr {
                halvings += 1;
            }
            lr = next;
        }
        assert_eq!(halvings, 2);
        assert_eq!(lr, 0.25);
    }

    proptest! {
        #[test]
        fn norm_clip_bounds_norm(v in prop::collection::vec(-1e3f64..1e3, 1..20), c in 0.01f64..10.0) {
            let mut g = vec![Matrix::column(&v)];
            clip(Some(ClipPolicy::NormWithNanRecovery { c }), &mut g).unwrap();
            prop_assert!(global_norm(&g) <= c + 1e-12);
        }

        #[test]
        fn accumulators_scale_by_four(v in prop::collection::vec(-5f64..5.0, 1..8), steps in 1usize..6) {
            let p0 = vec![Matrix::column(&v)];
            for kind in [OptimizerKind::RmsProp, OptimizerKind::Adam] {
                let (mut pa, mut pb) = (p0.clone(), p0.clone());
                let mut a = Optimizer::new(kind, &pa, 1e-3);
                let mut b = Optimizer::new(kind, &pb, 1e-3);
                for k in 0..steps {
                    let g = Matrix::column(&v).scale(1.0 + k as f64);
                    a.step(&mut pa, &[g.clone()]).unwrap();
                    b.step(&mut pb, &[g.scale(2.0)]).unwrap();
                }
                let sa = a.slots();
                let sb = b.slots();
                let (name, acc_a) = sa.last().unwrap();
                let acc_b = sb.last().unwrap().1;
                prop_assert!(*name == "ms" || *name == "v");
                for (x, y) in acc_a[0].data().iter().zip(acc_b[0].data()) {
                    prop_assert!((4.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
                }
            }
        }
    }
}
