use crate::error::Result;
use crate::linalg::Matrix;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// One component whose analytic and numeric derivatives disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub failures: Vec<Mismatch>,
    /// `(param, entry)` probes where the function was not finite.
    pub non_finite: Vec<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.non_finite.is_empty()
    }
}

/// `|a - n| / max(1, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}

/// Compares `analytic` gradients against central differences of `f` around
/// `params`, probing every component.
pub fn grad_check<F>(
    mut f: F,
    params: &[Matrix],
    analytic: &[Matrix],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Matrix]) -> Result<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    assert_eq!(params.len(), analytic.len(), "one gradient per parameter");
    let mut probe = params.to_vec();
    let mut report = GradCheckReport::default();
    for p in 0..params.len() {
        assert_eq!(params[p].shape(), analytic[p].shape(), "gradient shape");
        for e in 0..params[p].len() {
            let base = params[p].data()[e];
            probe[p].data_mut()[e] = base + h;
            let plus = f(&probe)?;
            probe[p].data_mut()[e] = base - h;
            let minus = f(&probe)?;
            probe[p].data_mut()[e] = base;
            report.checked += 1;
            if !plus.is_finite() || !minus.is_finite() {
                report.non_finite.push((p, e));
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[p].data()[e];
            let rel_err = relative_error(a, numeric);
            report.max_rel_err = report.max_rel_err.max(rel_err);
            if !(rel_err < tol) {
                report.failures.push(Mismatch {
                    param: p,
                    entry: e,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}
