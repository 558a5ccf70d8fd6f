//! Finite-difference gradient checking.
//!
//! Runs in `f64`: central differences with step `h = 1e-5` keep the
//! truncation and round-off error several orders of magnitude below the
//! acceptance tolerance of 1e-4 relative error.

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Default maximum tolerated relative error.
pub const FD_TOL: f64 = 1e-4;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Relative error with a 1e-4 floor on the denominator. For near-zero
/// gradients the check therefore degrades to an absolute one (passing
/// `rel_err < tol` means `|Δ| < tol · 1e-4`), which keeps finite-difference
/// noise on vanishing coordinates from producing spurious failures while
/// still catching real sign or scale bugs.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let d = (analytic - numeric).abs();
    d / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Largest pairwise [`rel_err`] between two gradient vectors.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}
