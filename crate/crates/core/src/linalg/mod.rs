//! Dense matrices, activations and the deterministic RNG every other
//! module builds on. All arithmetic is `f64`.

mod matrix;
mod rng;

pub use matrix::{EwiseOp, Matrix};
pub(crate) use matrix::gemm;
pub use rng::{Rng, RngState};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

pub fn activate(kind: Activation, a: &Matrix) -> Matrix {
    a.map(|v| kind.eval(v))
}

/// Max-subtracted softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Entries i.i.d. uniform on `[-sqrt(6/fan_in), +sqrt(6/fan_in)]`.
pub fn uniform_init(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    assert!(fan_in >= 1, "fan_in must be positive");
    let scale = (6.0 / fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform_in(-scale, scale))
        .collect();
    Matrix::new(rows, cols, data).expect("positive dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Sigmoid.eval(0.0), 0.5);
        assert_eq!(Activation::Relu.eval(-3.0), 0.0);
        assert_eq!(Activation::Relu.eval(3.0), 3.0);
        assert_eq!(Activation::Tanh.eval(0.0), 0.0);
        let s = activate(Activation::Sigmoid, &Matrix::column(&[-800.0, 800.0]));
        assert!(s.is_finite());
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(softmax(&[1000.0, 1000.0]), vec![0.5, 0.5]);
        let mut rng = Rng::new(2);
        let v: Vec<f64> = (0..10).map(|_| rng.uniform_in(-5.0, 5.0)).collect();
        let total: f64 = softmax(&v).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_init_bounds() {
        let mut rng = Rng::new(3);
        assert!(uniform_init(&mut rng, 30, 30, 6).max_abs() <= 1.0);
        assert!(uniform_init(&mut rng, 30, 30, 600).max_abs() <= 0.1);
    }

    #[test]
    fn uniform_init_mean_is_zero() {
        let mut rng = Rng::new(4);
        let m = uniform_init(&mut rng, 1000, 1000, 6);
        let mean = m.sum() / m.len() as f64;
        // Uniform[-1, 1] has variance 1/3.
        let sigma = (1.0 / 3.0 / m.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn uniform_init_is_reproducible() {
        let a = uniform_init(&mut Rng::new(8), 4, 5, 3);
        let b = uniform_init(&mut Rng::new(8), 4, 5, 3);
        assert_eq!(a, b);
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(
            (a, b, c) in (1usize..16, 1usize..16, 1usize..16, 1usize..16).prop_flat_map(|(m, k, l, n)| {
                (small_matrix(m, k), small_matrix(k, l), small_matrix(l, n))
            })
        ) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
        }

        #[test]
        fn softmax_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 1..20), shift in -100.0f64..100.0) {
            let p = softmax(&v);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn sigmoid_symmetry(x in -40.0f64..40.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }
    }
}
