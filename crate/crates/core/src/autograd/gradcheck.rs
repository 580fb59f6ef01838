//! Central-difference gradient checking.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Step used for central differences.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)`.
    pub max_rel_error: f64,
    /// Distance of the evaluation point from the nearest ReLU kink; see
    /// [`Tape::relu_margin`].
    pub relu_margin: Option<f64>,
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = f(&mut tape, xv)?;
    tape.value(out).item()
}

/// Compares the tape gradient of the scalar function `f` at `x` with central
/// differences of step [`GRAD_CHECK_STEP`].
///
/// Failures inside `f` are reported as an infinite error rather than
/// propagated.
pub fn grad_check_detailed<F>(f: F, x: &Tensor) -> GradCheck
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let failed = GradCheck { max_rel_error: f64::INFINITY, relu_margin: None };
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_requires_grad(true));
    let Ok(out) = f(&mut tape, xv) else { return failed };
    let Ok(grads) = tape.backward(out) else { return failed };
    let analytic = grads.get(xv).expect("leaf requires grad").to_vec();

    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + GRAD_CHECK_STEP;
        let plus = eval(&f, &probe);
        probe.data_mut()[i] = orig - GRAD_CHECK_STEP;
        let minus = eval(&f, &probe);
        probe.data_mut()[i] = orig;
        let (Ok(plus), Ok(minus)) = (plus, minus) else { return failed };
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    GradCheck { max_rel_error: worst, relu_margin: tape.relu_margin() }
}

/// Maximum relative error between analytic and numeric gradients of `f` at `x`.
pub fn grad_check<F>(f: F, x: &Tensor) -> f64
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_detailed(f, x).max_rel_error
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 4.0]).unwrap();
        let err = grad_check(|t, v| t.sum(v), &x);
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn reports_instead_of_failing() {
        let x = Tensor::vector(vec![-1.0]).unwrap();
        assert!(grad_check(|t, v| t.ln(v), &x).is_infinite());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // clamp blocks the gradient outside its range, but the numeric slope
        // at the boundary is 0.5; the check must notice.
        let x = Tensor::vector(vec![1.0]).unwrap();
        let err = grad_check(
            |t, v| {
                let c = t.clamp(v, 1.0, 2.0)?;
                t.sum(c)
            },
            &x,
        );
        assert!(err > 0.1, "{err}");
    }
}
