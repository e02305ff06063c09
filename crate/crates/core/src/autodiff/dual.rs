//! Second-order forward-mode numbers over up to two spatial inputs.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// Value, gradient and Hessian of a scalar with respect to at most two
/// tracked inputs. The Hessian is stored as its upper triangle
/// `[h00, h01, h11]`, so it is symmetric by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<S> {
    pub v: S,
    pub g: [S; 2],
    pub h: [S; 3],
    n: u8,
}

#[inline]
fn hidx(i: usize, j: usize) -> usize {
    i + j
}

impl<S: Scalar> Dual<S> {
    pub fn constant(v: S, n: usize) -> Self {
        assert!(n <= 2, "at most two tracked inputs");
        let z = S::constant(0.0);
        Dual {
            v,
            g: [z; 2],
            h: [z; 3],
            n: n as u8,
        }
    }

    /// The `i`-th of `n` tracked inputs, with unit seed.
    pub fn input(v: S, i: usize, n: usize) -> Self {
        Self::input_scaled(v, i, n, 1.0)
    }

    /// Input whose derivative with respect to the tracked coordinate is `scale`.
    pub fn input_scaled(v: S, i: usize, n: usize, scale: f64) -> Self {
        let mut d = Self::constant(v, n);
        assert!(i < n);
        d.g[i] = S::constant(scale);
        d
    }

    /// Seeds a vector of tracked inputs from a point.
    pub fn inputs(x: &[S]) -> Vec<Self> {
        let n = x.len();
        x.iter().enumerate().map(|(i, &v)| Self::input(v, i, n)).collect()
    }

    pub fn tracked(&self) -> usize {
        self.n as usize
    }

    pub fn hess(&self, i: usize, j: usize) -> S {
        self.h[hidx(i, j)]
    }

    fn dims(&self, other: &Self) -> usize {
        self.n.max(other.n) as usize
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.v`.
    pub fn chain(self, f0: S, f1: S, f2: S) -> Self {
        let n = self.n as usize;
        let mut out = Self::constant(f0, n);
        for i in 0..n {
            out.g[i] = f1 * self.g[i];
        }
        for i in 0..n {
            for j in i..n {
                let k = hidx(i, j);
                out.h[k] = f1 * self.h[k] + f2 * self.g[i] * self.g[j];
            }
        }
        out
    }

    pub fn scale(self, s: S) -> Self {
        let n = self.n as usize;
        let mut out = Self::constant(self.v * s, n);
        for i in 0..n {
            out.g[i] = self.g[i] * s;
        }
        for k in 0..3 {
            out.h[k] = self.h[k] * s;
        }
        out
    }

    pub fn add_scalar(mut self, s: S) -> Self {
        self.v = self.v + s;
        self
    }

    pub fn recip(self) -> Self {
        let r = S::constant(1.0) / self.v;
        let r2 = r * r;
        self.chain(r, -r2, r2 * r * 2.0)
    }

    pub fn tanh(self) -> Self {
        let t = self.v.tanh();
        let d1 = S::constant(1.0) - t * t;
        let d2 = t * d1 * -2.0;
        self.chain(t, d1, d2)
    }

    pub fn sin(self) -> Self {
        let s = self.v.sin();
        self.chain(s, self.v.cos(), -s)
    }

    pub fn cos(self) -> Self {
        let c = self.v.cos();
        self.chain(c, -self.v.sin(), -c)
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(self) -> Self {
        let r = S::constant(1.0) / self.v;
        self.chain(self.v.ln(), r, -(r * r))
    }

    pub fn powi(self, n: i32) -> Self {
        let f0 = self.v.powi(n);
        let f1 = self.v.powi(n - 1) * n as f64;
        let f2 = self.v.powi(n - 2) * (n as f64 * (n - 1) as f64);
        self.chain(f0, f1, f2)
    }

    /// Real power with a constant exponent; requires a positive base unless
    /// the exponent is integral.
    pub fn powf(self, p: f64) -> Self {
        let f0 = self.v.powf(p);
        let f1 = self.v.powf(p - 1.0) * p;
        let f2 = self.v.powf(p - 2.0) * (p * (p - 1.0));
        self.chain(f0, f1, f2)
    }

    pub fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    pub fn sigmoid(self) -> Self {
        let s = sigmoid(self.v);
        let d1 = s * (S::constant(1.0) - s);
        let d2 = d1 * (S::constant(1.0) - s * 2.0);
        self.chain(s, d1, d2)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Self {
        let s = sigmoid(self.v);
        let d2 = s * (S::constant(1.0) - s);
        self.chain(softplus(self.v), s, d2)
    }

    pub fn is_finite(&self) -> bool {
        let n = self.n as usize;
        self.v.value().is_finite()
            && self.g[..n].iter().all(|g| g.value().is_finite())
            && self.h.iter().all(|h| h.value().is_finite())
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x.value() >= 0.0 {
        S::constant(1.0) / ((-x).exp() + 1.0)
    } else {
        let e = x.exp();
        e / (e + 1.0)
    }
}

pub fn softplus<S: Scalar>(x: S) -> S {
    if x.value() > 0.0 {
        x + ((-x).exp() + 1.0).ln()
    } else {
        (x.exp() + 1.0).ln()
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let n = self.dims(&o);
        let mut out = Self::constant(self.v + o.v, n);
        for i in 0..n {
            out.g[i] = self.g[i] + o.g[i];
        }
        for k in 0..3 {
            out.h[k] = self.h[k] + o.h[k];
        }
        out
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(S::constant(-1.0))
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let n = self.dims(&o);
        let mut out = Self::constant(self.v * o.v, n);
        for i in 0..n {
            out.g[i] = self.v * o.g[i] + o.v * self.g[i];
        }
        for i in 0..n {
            for j in i..n {
                let k = hidx(i, j);
                out.h[k] = self.v * o.h[k]
                    + o.v * self.h[k]
                    + self.g[i] * o.g[j]
                    + o.g[i] * self.g[j];
            }
        }
        out
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<S: Scalar> Add<f64> for Dual<S> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        self.add_scalar(S::constant(c))
    }
}

impl<S: Scalar> Mul<f64> for Dual<S> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.scale(S::constant(c))
    }
}
