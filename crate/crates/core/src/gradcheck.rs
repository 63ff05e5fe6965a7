//! Finite-difference verification of tape adjoints.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Central differences of a scalar function at every coordinate of `x`.
pub fn finite_difference(mut f: impl FnMut(&Tensor) -> Result<f64>, x: &Tensor, eps: f64) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { context: format!("finite difference at coordinate {i}") });
        }
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

pub fn compare(analytic: &[f64], numeric: &[f64], tol: f64) -> Result<GradCheckReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::shape("gradient length mismatch"));
    }
    let mut worst = (0.0, 0usize);
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        if !a.is_finite() {
            return Err(Error::NonFinite { context: format!("adjoint at coordinate {i}") });
        }
        let e = rel_error(a, n);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    Ok(GradCheckReport { passed: worst.0 <= tol, max_rel_error: worst.0, worst_index: worst.1, checked: analytic.len() })
}

/// Compare tape adjoints of `f` at `x` against central differences.
///
/// `f` receives a fresh tape with `x` as a leaf and must return a scalar.
/// Functions with kinks (ReLU, max-pool, saturation) are only checked
/// reliably when `x` is away from the kinks by more than `eps`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(&mut tape, xv)?;
    if !tape.value(y).all_finite() {
        return Err(Error::NonFinite { context: "grad_check objective".into() });
    }
    let grads = tape.backward(y)?;
    let analytic = grads.wrt(xv).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);
    let numeric = finite_difference(
        |p| {
            let mut t = Tape::new();
            let v = t.leaf(p.clone());
            let y = f(&mut t, v)?;
            Ok(t.scalar(y))
        },
        x,
        eps,
    )?;
    compare(&analytic, &numeric, tol)
}
