use super::{Inputs, Sample, StepTargets};
use crate::error::{Error, Result};
use crate::linalg::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdditionSpec {
    /// Sequence length `T`.
    pub length: usize,
}

impl AdditionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::Config("addition task needs length >= 2".into()));
        }
        Ok(())
    }
}

/// One addition-task sample: uniform values, one marker in each half,
/// target (the sum of the two marked values) at the last step only.
pub fn gen_addition(spec: &AdditionSpec, rng: &mut Rng) -> Result<Sample> {
    spec.validate()?;
    let t = spec.length;
    let half = t / 2;
    let values: Vec<f64> = (0..t).map(|_| rng.uniform()).collect();
    let markers = [rng.below(half), half + rng.below(t - half)];
    let mut targets = vec![0.0; t];
    targets[t - 1] = values[markers[0]] + values[markers[1]];
    let mut mask = vec![false; t];
    mask[t - 1] = true;
    Sample::new(Inputs::Marked { values, markers }, StepTargets::Values(targets), mask)
}

/// MSE of the best constant predictor (1.0): the variance of a sum of two
/// independent `U[0,1]` draws.
pub fn addition_baseline_mse() -> f64 {
    2.0 / 12.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parts(s: &Sample) -> (&[f64], [usize; 2], f64) {
        let Inputs::Marked { values, markers } = &s.inputs else { panic!() };
        let StepTargets::Values(t) = &s.targets else { panic!() };
        (values, *markers, *t.last().unwrap())
    }

    #[test]
    fn length_two_forces_markers() {
        let s = gen_addition(&AdditionSpec { length: 2 }, &mut Rng::new(0)).unwrap();
        let (v, m, y) = parts(&s);
        assert_eq!(m, [0, 1]);
        assert_eq!(y, v[0] + v[1]);
        assert_eq!(s.mask, vec![false, true]);
    }

    #[test]
    fn one_marker_per_half() {
        let mut rng = Rng::new(1);
        for len in [3, 10, 11] {
            let s = gen_addition(&AdditionSpec { length: len }, &mut rng).unwrap();
            let mut col = [0.0; 2];
            let marked: Vec<usize> = (0..len)
                .filter(|t| {
                    s.inputs.write_step(*t, &mut col);
                    col[1] == 1.0
                })
                .collect();
            assert_eq!(marked.len(), 2);
            assert!(marked[0] < len / 2 && marked[1] >= len / 2);
        }
        assert!(gen_addition(&AdditionSpec { length: 1 }, &mut rng).is_err());
    }

    #[test]
    fn statistics() {
        let mut rng = Rng::new(2);
        let spec = AdditionSpec { length: 10 };
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq_err_one = 0.0;
        let mut sq_err_other = 0.0;
        let mut first = [0usize; 5];
        let mut second = [0usize; 5];
        for _ in 0..n {
            let s = gen_addition(&spec, &mut rng).unwrap();
            let (v, m, y) = parts(&s);
            assert!((0.0..=2.0).contains(&y));
            assert!(v.iter().all(|x| (0.0..1.0).contains(x)));
            sum += y;
            sq_err_one += (y - 1.0).powi(2);
            sq_err_other += (y - 1.1).powi(2);
            first[m[0]] += 1;
            second[m[1] - 5] += 1;
        }
        let mean = sum / n as f64;
        let sigma = (addition_baseline_mse() / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma);

        // Constant predictor 1: MSE equals the target variance. The sampling
        // sd of the squared error is sqrt(E[e^4] - 1/36) with E[e^4] = 1/15.
        let mse = sq_err_one / n as f64;
        let sd = ((1.0 / 15.0 - 1.0 / 36.0) / n as f64).sqrt();
        assert!((mse - addition_baseline_mse()).abs() < 3.0 * sd);
        assert!(sq_err_other > sq_err_one);

        // Chi-square, 4 degrees of freedom; 18.47 is the 0.999 quantile.
        for counts in [first, second] {
            let e = n as f64 / 5.0;
            let chi2: f64 = counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum();
            assert!(chi2 < 18.47, "{counts:?}");
        }
        assert!((addition_baseline_mse() - 0.16667).abs() < 1e-5);
    }
}
