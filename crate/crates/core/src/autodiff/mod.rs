//! Reverse-mode differentiation over a per-batch tape, and a
//! central-difference gradient checker.

mod gradcheck;
mod tape;

pub use gradcheck::{
    grad_check, relative_error, GradCheckReport, Mismatch, DEFAULT_STEP, DEFAULT_TOLERANCE,
};
pub use tape::{BatchStats, Gradients, NodeId, Tape};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Activation, Matrix, Rng};

    fn scalar(v: f64) -> Matrix {
        Matrix::filled(1, 1, v)
    }

    #[test]
    fn add_and_mul_rules() {
        let mut t = Tape::new();
        let x = t.leaf(scalar(3.0));
        let y = t.leaf(scalar(5.0));
        let s = t.add(x, y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().get(0, 0), 1.0);
        assert_eq!(g.get(y).unwrap().get(0, 0), 1.0);

        let p = t.mul(x, y).unwrap();
        let g = t.backward(p).unwrap();
        assert_eq!(g.get(x).unwrap().get(0, 0), 5.0);
        assert_eq!(g.get(y).unwrap().get(0, 0), 3.0);
    }

    #[test]
    fn constant_output_gives_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::column(&[1.0, 2.0]));
        let c = t.constant(scalar(4.0));
        let g = t.backward(c).unwrap();
        assert_eq!(g.get_or_zeros(x, t.value(x)), Matrix::zeros(2, 1));
    }

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::column(&[1.0, 2.0]));
        let q = t.sum_squares(x);
        let g = t.backward(q).unwrap();
        assert_eq!(g.get(x).unwrap(), &Matrix::column(&[2.0, 4.0]));
    }

    #[test]
    fn backward_errors() {
        let t = Tape::new();
        let mut other = Tape::new();
        let stray = other.leaf(scalar(1.0));
        assert!(t.backward(stray).is_err());
        let mut t = Tape::new();
        let x = t.leaf(Matrix::column(&[1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn diamond_accumulates() {
        // f = a*b + a*c with a used twice: df/da = b + c.
        let mut t = Tape::new();
        let a = t.leaf(scalar(2.0));
        let b = t.leaf(scalar(3.0));
        let c = t.leaf(scalar(7.0));
        let ab = t.mul(a, b).unwrap();
        let ac = t.mul(a, c).unwrap();
        let f = t.add(ab, ac).unwrap();
        let g = t.backward(f).unwrap();
        assert_eq!(g.get(a).unwrap().get(0, 0), 10.0);
        assert_eq!(g.get(b).unwrap().get(0, 0), 2.0);
        assert_eq!(g.get(c).unwrap().get(0, 0), 2.0);
    }

    fn composite(
        t: &mut Tape,
        w: &Matrix,
        v: &Matrix,
        x: &Matrix,
        gamma: &Matrix,
        beta: &Matrix,
    ) -> (NodeId, [NodeId; 4]) {
        let wi = t.leaf(w.clone());
        let vi = t.leaf(v.clone());
        let gi = t.leaf(gamma.clone());
        let bi = t.leaf(beta.clone());
        let xi = t.constant(x.clone());
        let h = t.matmul(wi, xi).unwrap();
        let (h, _) = t.batch_norm(h, gi, bi, 1e-5, None).unwrap();
        let h = t.mul_col(h, vi).unwrap();
        let s = t.activate(h, Activation::Tanh);
        let s2 = t.sigmoid(h);
        let k = t.one_minus(s2);
        let m = t.mul(s, k).unwrap();
        let parts = t.concat_cols(&[m, h]).unwrap();
        let tail = t.slice_cols(parts, 1, 5).unwrap();
        let b = t.broadcast_cols(vi, 4).unwrap();
        let z = t.sub(tail, b).unwrap();
        let z = t.scale(z, 0.7);
        let out = t.sum_squares(z);
        (out, [wi, vi, gi, bi])
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let w = crate::linalg::uniform_init(&mut rng, 3, 4, 4);
        let v = crate::linalg::uniform_init(&mut rng, 3, 1, 1);
        let x = crate::linalg::uniform_init(&mut rng, 4, 3, 1);
        let gamma = Matrix::column(&[1.2, 0.8, -0.5]);
        let beta = Matrix::column(&[0.1, -0.2, 0.3]);
        let mut t = Tape::new();
        let (out, ids) = composite(&mut t, &w, &v, &x, &gamma, &beta);
        let grads = t.backward(out).unwrap();
        let analytic: Vec<Matrix> = ids.iter().map(|id| grads.get(*id).unwrap().clone()).collect();
        let params = vec![w, v, gamma, beta];
        let report = grad_check(
            |p| {
                let mut t = Tape::new();
                let (out, _) = composite(&mut t, &p[0], &p[1], &x, &p[2], &p[3]);
                Ok(t.value(out).get(0, 0))
            },
            &params,
            &analytic,
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn gradcheck_exact_on_linear_and_catches_corruption() {
        let a = Matrix::column(&[0.5, -2.0, 3.0]);
        let f = |p: &[Matrix]| Ok(p[0].hadamard(&a).unwrap().sum());
        let x = vec![Matrix::column(&[1.0, 1.0, 1.0])];
        let report = grad_check(f, &x, std::slice::from_ref(&a), 1e-5, 1e-10).unwrap();
        assert!(report.passed());
        assert!(report.max_rel_err < 1e-10);

        let corrupted = vec![a.scale(1.01)];
        let report = grad_check(f, &x, &corrupted, 1e-5, 1e-4).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn non_finite_probes_are_reported() {
        let f = |p: &[Matrix]| Ok(if p[0].get(0, 0) > 0.0 { f64::NAN } else { 0.0 });
        let x = vec![Matrix::column(&[0.0])];
        let report = grad_check(f, &x, &[Matrix::zeros(1, 1)], 1e-5, 1e-4).unwrap();
        assert_eq!(report.non_finite, vec![(0, 0)]);
        assert!(!report.passed());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let mut rng = Rng::new(23);
        let w = crate::linalg::uniform_init(&mut rng, 3, 4, 4);
        let v = crate::linalg::uniform_init(&mut rng, 3, 1, 1);
        let x = crate::linalg::uniform_init(&mut rng, 4, 3, 1);
        let g = Matrix::ones(3, 1);
        let b = Matrix::zeros(3, 1);
        let run = || {
            let mut t = Tape::new();
            let (out, ids) = composite(&mut t, &w, &v, &x, &g, &b);
            let grads = t.backward(out).unwrap();
            ids.iter()
                .flat_map(|id| grads.get(*id).unwrap().data().to_vec())
                .map(f64::to_bits)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
