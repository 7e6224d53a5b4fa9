//! Finite-difference verification of analytic gradients.
//!
//! The caller supplies a loss closure over a flat parameter vector and the
//! analytic gradient at the same point; each coordinate is then perturbed
//! symmetrically and the central difference compared against the analytic
//! entry. A coordinate passes if it is within the relative tolerance of
//! the larger magnitude, or within the absolute tolerance (which covers
//! gradients near zero, where relative error is meaningless).

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub pass: bool,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// (coordinate, analytic, numeric) of the worst relative disagreement.
    pub worst: Option<(usize, f64, f64)>,
}

/// Compare `analytic` against central differences of `loss` around `x0`.
pub fn check<F>(
    x0: &[f64],
    analytic: &[f64],
    cfg: &GradCheckConfig,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert_eq!(x0.len(), analytic.len(), "gradient length mismatch");
    let mut x = x0.to_vec();
    let mut report = GradCheckReport {
        pass: true,
        checked: x0.len(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + cfg.step;
        let up = loss(&x)?;
        x[i] = orig - cfg.step;
        let down = loss(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * cfg.step);
        let a = analytic[i];
        let abs_err = (a - numeric).abs();
        let denom = a.abs().max(numeric.abs());
        let rel_err = if denom > 0.0 { abs_err / denom } else { 0.0 };
        let ok = abs_err <= cfg.abs_tol || abs_err <= cfg.rel_tol * denom;
        if !ok {
            report.pass = false;
        }
        if rel_err > report.max_rel_err {
            report.max_rel_err = rel_err;
            report.worst = Some((i, a, numeric));
        }
        report.max_abs_err = report.max_abs_err.max(abs_err);
    }
    Ok(report)
}
