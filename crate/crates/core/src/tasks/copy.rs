use serde::{Deserialize, Serialize};

use super::{Inputs, Sample, StepTargets};
use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Alphabet size: eight data symbols, blank, run marker.
pub const SYMBOLS: usize = 10;
pub const DATA_SYMBOLS: usize = 8;
pub const BLANK: u8 = 8;
pub const RUN: u8 = 9;
const SEGMENT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopyVariant {
    /// Ten data symbols, fixed lag.
    #[default]
    #[serde(alias = "fixed")]
    FixedFixed,
    /// 1 to 10 data symbols, fixed lag.
    VariableLength,
    /// Ten data symbols, lag drawn from `1..=N`.
    VariableLag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CopySpec {
    /// Lag `N`; sequences have `N + 20` steps.
    pub lag: usize,
    pub variant: CopyVariant,
}

impl CopySpec {
    pub fn fixed(lag: usize) -> Self {
        CopySpec { lag, variant: CopyVariant::FixedFixed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lag == 0 {
            return Err(Error::Config("copy task lag must be at least 1".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lag + 2 * SEGMENT
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Draws one copy-task sample.
///
/// Layouts (0-based positions, total length `N + 20`):
/// - fixed: data at `0..10`, blanks, run marker at `N + 9`, blanks; the
///   target is blank until `N + 10` and then repeats the data.
/// - variable length: `K` in `1..=10` data symbols at `0..K`, run marker
///   at `N + 9`; the data is expected in the final `K` steps.
/// - variable lag: ten data symbols, run marker at `9 + lag` with `lag` in
///   `1..=N`; the data is expected in the ten steps after the marker.
///
/// Every step contributes to the loss.
pub fn gen_copy(spec: &CopySpec, rng: &mut Rng) -> Result<Sample> {
    spec.validate()?;
    let len = spec.len();
    let mut input = vec![BLANK; len];
    let mut target = vec![BLANK; len];
    let (count, run_at, out_start) = match spec.variant {
        CopyVariant::FixedFixed => (SEGMENT, spec.lag + 9, spec.lag + SEGMENT),
        CopyVariant::VariableLength => {
            let k = 1 + rng.below(SEGMENT);
            (k, spec.lag + 9, len - k)
        }
        CopyVariant::VariableLag => {
            let lag = 1 + rng.below(spec.lag);
            (SEGMENT, lag + 9, lag + SEGMENT)
        }
    };
    for i in 0..count {
        let s = rng.below(DATA_SYMBOLS) as u8;
        input[i] = s;
        target[out_start + i] = s;
    }
    input[run_at] = RUN;
    Sample::new(
        Inputs::Symbols { alphabet: SYMBOLS, symbols: input },
        StepTargets::Classes(target),
        vec![true; len],
    )
}

/// Cross-entropy per symbol of the best predictor that knows the layout
/// but not the data: blanks are certain, data symbols are uniform over 8.
pub fn copy_baseline_ce(spec: &CopySpec) -> Result<f64> {
    spec.validate()?;
    if spec.variant != CopyVariant::FixedFixed {
        return Err(Error::Config(
            "an analytic baseline exists only for the fixed copy variant".into(),
        ));
    }
    Ok(SEGMENT as f64 * (DATA_SYMBOLS as f64).ln() / spec.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{loss, LossKind, Targets};
    use crate::linalg::Matrix;

    fn symbols(s: &Sample) -> (&[u8], &[u8]) {
        let Inputs::Symbols { symbols, .. } = &s.inputs else { panic!() };
        let StepTargets::Classes(t) = &s.targets else { panic!() };
        (symbols, t)
    }

    #[test]
    fn fixed_layout_n1() {
        let s = gen_copy(&CopySpec::fixed(1), &mut Rng::new(0)).unwrap();
        let (inp, tgt) = symbols(&s);
        assert_eq!(inp.len(), 21);
        assert_eq!(inp[10], RUN);
        assert!(inp[..10].iter().all(|v| *v < BLANK));
        assert!(tgt[..11].iter().all(|v| *v == BLANK));
        assert_eq!(&tgt[11..], &inp[..10]);
    }

    #[test]
    fn fixed_layout_general() {
        let mut rng = Rng::new(1);
        for lag in [2, 7, 30] {
            let s = gen_copy(&CopySpec::fixed(lag), &mut rng).unwrap();
            let (inp, tgt) = symbols(&s);
            assert_eq!(inp.len(), lag + 20);
            assert_eq!(inp.iter().filter(|v| **v == RUN).count(), 1);
            assert_eq!(inp[lag + 9], RUN);
            assert!(inp[10..lag + 9].iter().all(|v| *v == BLANK));
            assert!(inp[lag + 10..].iter().all(|v| *v == BLANK));
            assert_eq!(&tgt[lag + 10..], &inp[..10]);
            assert!(s.mask.iter().all(|m| *m));
        }
    }

    #[test]
    fn variable_length_layout() {
        let mut rng = Rng::new(2);
        let mut seen = [false; 11];
        for _ in 0..500 {
            let s = gen_copy(&CopySpec { lag: 12, variant: CopyVariant::VariableLength }, &mut rng).unwrap();
            let (inp, tgt) = symbols(&s);
            let k = inp.iter().take_while(|v| **v < BLANK).count();
            assert!((1..=10).contains(&k));
            seen[k] = true;
            assert!(inp[k..21].iter().all(|v| *v == BLANK));
            assert_eq!(inp[21], RUN);
            let len = inp.len();
            assert_eq!(&tgt[len - k..], &inp[..k]);
            assert!(tgt[..len - k].iter().all(|v| *v == BLANK));
        }
        assert!(seen[1..].iter().all(|s| *s));
    }

    #[test]
    fn variable_lag_layout() {
        let mut rng = Rng::new(3);
        let n = 15;
        let mut lags = std::collections::BTreeSet::new();
        for _ in 0..500 {
            let s = gen_copy(&CopySpec { lag: n, variant: CopyVariant::VariableLag }, &mut rng).unwrap();
            let (inp, tgt) = symbols(&s);
            assert_eq!(inp.len(), n + 20);
            let run = inp.iter().position(|v| *v == RUN).unwrap();
            let lag = run - 9;
            assert!((1..=n).contains(&lag));
            lags.insert(lag);
            assert_eq!(&tgt[run + 1..run + 11], &inp[..10]);
            assert_eq!(tgt.iter().filter(|v| **v != BLANK).count(), 10);
        }
        assert_eq!(lags.len(), n);
    }

    #[test]
    fn inputs_are_one_hot() {
        let s = gen_copy(&CopySpec::fixed(4), &mut Rng::new(4)).unwrap();
        let mut col = [0.0; SYMBOLS];
        for t in 0..s.len() {
            s.inputs.write_step(t, &mut col);
            assert_eq!(col.iter().sum::<f64>(), 1.0);
            assert_eq!(col.iter().filter(|v| **v == 1.0).count(), 1);
        }
    }

    #[test]
    fn data_symbols_are_uniform() {
        let mut rng = Rng::new(5);
        let mut counts = [0usize; DATA_SYMBOLS];
        let samples = 100_000;
        for _ in 0..samples {
            let s = gen_copy(&CopySpec::fixed(1), &mut rng).unwrap();
            for v in &symbols(&s).0[..10] {
                counts[*v as usize] += 1;
            }
        }
        let total = (samples * 10) as f64;
        let p = 1.0 / 8.0;
        let sigma = (total * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - total * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn baseline_values() {
        let b500 = copy_baseline_ce(&CopySpec::fixed(500)).unwrap();
        assert!((b500 - 0.039988).abs() < 5e-6);
        let b100 = copy_baseline_ce(&CopySpec::fixed(100)).unwrap();
        assert!((b100 - 0.173287).abs() < 1e-6);
        assert!(copy_baseline_ce(&CopySpec::fixed(1_000_000)).unwrap() < 1e-4);
        assert!(copy_baseline_ce(&CopySpec { lag: 5, variant: CopyVariant::VariableLag }).is_err());
    }

    #[test]
    fn memoryless_predictor_matches_baseline() {
        // Positional predictor: certain blanks, uniform over data symbols
        // where data is due.
        let spec = CopySpec::fixed(20);
        let len = spec.len();
        let mut logits = Matrix::filled(SYMBOLS, len, -1e3);
        for t in 0..len {
            if t >= spec.lag + 10 {
                for c in 0..DATA_SYMBOLS {
                    logits.set(c, t, 0.0);
                }
            } else {
                logits.set(BLANK as usize, t, 0.0);
            }
        }
        let mut rng = Rng::new(6);
        let mut total = 0.0;
        let samples = 2_000;
        for _ in 0..samples {
            let s = gen_copy(&spec, &mut rng).unwrap();
            let t = symbols(&s).1.iter().map(|v| *v as usize).collect();
            total += loss(LossKind::CrossEntropy, &logits, &Targets::Classes(t), &s.mask).unwrap().0;
        }
        let empirical = total / samples as f64;
        let analytic = copy_baseline_ce(&spec).unwrap();
        assert!((empirical - analytic).abs() < 1e-12);
    }
}
