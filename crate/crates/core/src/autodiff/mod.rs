//! Automatic differentiation.
//!
//! Spatial derivatives (value, gradient, Hessian with respect to at most two
//! inputs) are carried forward by [`Dual`]. Parameter gradients come from the
//! reverse sweep of a [`Tape`]. The two compose: `Dual<Var>` records the
//! forward-mode arithmetic on the tape, so the reverse sweep differentiates
//! through spatial derivatives as well.

mod dual;
mod tape;

use std::ops::{Add, Div, Mul, Neg, Sub};

pub use dual::{sigmoid, softplus, Dual};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};

/// Scalar types the forward-mode layer can be built on.
pub trait Scalar:
    Copy
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn tanh(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, p: f64) -> Self;
    fn sqrt(self) -> Self;
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Value, gradient and Hessian of a scalar function at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Taylor2 {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
}

/// Evaluates `f` and its first two derivatives at `x` (one or two inputs).
pub fn forward_hessian<F>(f: F, x: &[f64]) -> Result<Taylor2>
where
    F: Fn(&[Dual<f64>]) -> Dual<f64>,
{
    let n = x.len();
    if n == 0 || n > 2 {
        return Err(Error::Usage(format!(
            "forward_hessian tracks one or two inputs, got {n}"
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            at: format!("input {i}"),
        });
    }
    let out = f(&Dual::inputs(x));
    if !out.v.is_finite() {
        return Err(Error::NonFinite { at: "value".into() });
    }
    let gradient: Vec<f64> = out.g[..n].to_vec();
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            at: format!("gradient component {i}"),
        });
    }
    let hessian: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| out.hess(i, j)).collect())
        .collect();
    if hessian.iter().flatten().any(|h| !h.is_finite()) {
        return Err(Error::NonFinite {
            at: "hessian".into(),
        });
    }
    Ok(Taylor2 {
        value: out.v,
        gradient,
        hessian,
    })
}

/// Gradient of a recorded scalar with respect to all parameters on `tape`.
pub fn parameter_gradient(loss: Var<'_>, tape: &Tape) -> Result<Vec<f64>> {
    tape.gradient(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn polynomial_and_tanh_examples() {
        let t = forward_hessian(|x| x[0] * x[0], &[3.0]).unwrap();
        assert_eq!((t.value, t.gradient[0], t.hessian[0][0]), (9.0, 6.0, 2.0));
        let t = forward_hessian(|x| x[0].tanh(), &[0.0]).unwrap();
        assert_eq!((t.value, t.gradient[0], t.hessian[0][0]), (0.0, 1.0, 0.0));
    }

    // Expected values frozen from central differences with step 1e-4 on
    // sin(x1) x2^2 at (pi/2, 2): value 4, gradient (0, 4), hessian [[-4, 0], [0, 2]].
    #[test]
    fn sin_times_square() {
        let t = forward_hessian(|x| x[0].sin() * x[1] * x[1], &[FRAC_PI_2, 2.0]).unwrap();
        assert!((t.value - 4.0).abs() < 1e-14);
        assert!(t.gradient[0].abs() < 1e-14);
        assert!((t.gradient[1] - 4.0).abs() < 1e-14);
        assert!((t.hessian[0][0] + 4.0).abs() < 1e-14);
        assert!(t.hessian[0][1].abs() < 1e-14);
        assert_eq!(t.hessian[0][1], t.hessian[1][0]);
        assert!((t.hessian[1][1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn nonfinite_is_reported() {
        let err = forward_hessian(|x| x[0].ln(), &[0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert!(matches!(
            forward_hessian(|x| x[0], &[0.0, 1.0, 2.0]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn gradient_through_input_derivative() {
        // loss = (d/dx [θ tanh x])² at x = 0.3 → dloss/dθ = 2 θ sech⁴(0.3)
        let (x, th) = (0.3, 0.7);
        let tape = Tape::new();
        let p = tape.param(th);
        let xd = Dual::<Var>::input(Var::constant(x), 0, 1);
        let y = xd.tanh().scale(p);
        let loss = y.g[0] * y.g[0];
        let g = parameter_gradient(loss, &tape).unwrap()[0];
        let sech = 1.0 / f64::cosh(x);
        let want = 2.0 * th * sech.powi(4);
        assert!((g - want).abs() < 1e-14, "{g} vs {want}");
        // finite-difference cross-check
        let l = |t: f64| (t * sech * sech).powi(2);
        let fd = (l(th + 1e-6) - l(th - 1e-6)) / 2e-6;
        assert!((g - fd).abs() < 1e-8);
    }
}
