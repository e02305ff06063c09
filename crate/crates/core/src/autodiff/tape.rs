//! Reverse-mode scalar tape.
//!
//! A [`Tape`] records every operation on parameter-dependent scalars as a
//! node with at most two parents and the local partial derivatives. The
//! sweep in [`Tape::gradient`] walks the nodes once in reverse order.

use std::cell::{Cell, RefCell};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use super::Scalar;
use crate::error::{Error, Result};

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
    value: f64,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<u32>>,
    consumed: Cell<bool>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(nodes)),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_params(&self) -> usize {
        self.params.borrow().len()
    }

    /// Registers a trainable leaf. Gradients are returned in registration order.
    pub fn param(&self, value: f64) -> Var<'_> {
        let v = self.push(value, [(NO_PARENT, 0.0), (NO_PARENT, 0.0)]);
        self.params.borrow_mut().push(v.idx);
        v
    }

    pub fn params(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.param(v)).collect()
    }

    fn push(&self, value: f64, parents: [(u32, f64); 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node {
            parents: [parents[0].0, parents[1].0],
            partials: [parents[0].1, parents[1].1],
            value,
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    /// Gradient of `loss` with respect to every registered parameter.
    ///
    /// The tape can be swept once; a second call is a usage error.
    pub fn gradient(&self, loss: Var<'_>) -> Result<Vec<f64>> {
        if self.consumed.replace(true) {
            return Err(Error::Usage("tape already consumed".into()));
        }
        let params = self.params.borrow();
        if self.is_empty() {
            return Err(Error::Usage("empty tape".into()));
        }
        let nodes = self.nodes.borrow();
        if let Some(i) = nodes.iter().position(|n| !n.value.is_finite()) {
            return Err(Error::NonFinite {
                at: format!("tape node {i}"),
            });
        }
        let Some(tape) = loss.tape else {
            return Ok(vec![0.0; params.len()]);
        };
        if !std::ptr::eq(tape, self) {
            return Err(Error::Usage("loss was recorded on a different tape".into()));
        }
        let mut adj = vec![0.0; loss.idx as usize + 1];
        adj[loss.idx as usize] = 1.0;
        for i in (0..=loss.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NO_PARENT {
                    adj[p as usize] += node.partials[k] * a;
                }
            }
        }
        Ok(params
            .iter()
            .map(|&p| adj.get(p as usize).copied().unwrap_or(0.0))
            .collect())
    }
}

/// A scalar that is either a constant or a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn constant(val: f64) -> Self {
        Var {
            tape: None,
            idx: NO_PARENT,
            val,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    fn unary(self, val: f64, partial: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => t.push(val, [(self.idx, partial), (NO_PARENT, 0.0)]),
        }
    }

    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        match (self.tape, other.tape) {
            (None, None) => Var::constant(val),
            (Some(t), None) => t.push(val, [(self.idx, da), (NO_PARENT, 0.0)]),
            (None, Some(t)) => t.push(val, [(other.idx, db), (NO_PARENT, 0.0)]),
            (Some(t), Some(_)) => t.push(val, [(self.idx, da), (other.idx, db)]),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> AddAssign for Var<'t> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<'t> Scalar for Var<'t> {
    fn constant(v: f64) -> Self {
        Var::constant(v)
    }
    fn value(self) -> f64 {
        self.val
    }
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }
    fn sin(self) -> Self {
        self.unary(self.val.sin(), self.val.cos())
    }
    fn cos(self) -> Self {
        self.unary(self.val.cos(), -self.val.sin())
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn powi(self, n: i32) -> Self {
        let d = if n == 0 {
            0.0
        } else {
            n as f64 * self.val.powi(n - 1)
        };
        self.unary(self.val.powi(n), d)
    }
    fn powf(self, p: f64) -> Self {
        self.unary(self.val.powf(p), p * self.val.powf(p - 1.0))
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let th = tape.param(1.5);
        let loss = th * th;
        assert_eq!(tape.gradient(loss).unwrap(), vec![3.0]);
    }

    #[test]
    fn second_sweep_is_usage_error() {
        let tape = Tape::new();
        let th = tape.param(2.0);
        let loss = th.sin();
        tape.gradient(loss).unwrap();
        assert!(matches!(tape.gradient(loss), Err(Error::Usage(_))));
    }

    #[test]
    fn nonfinite_node_reported() {
        let tape = Tape::new();
        let th = tape.param(0.0);
        let loss = th.ln() * 2.0;
        match tape.gradient(loss) {
            Err(Error::NonFinite { at }) => assert_eq!(at, "tape node 1"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn constants_do_not_touch_tape() {
        let tape = Tape::new();
        let th = tape.param(0.3);
        let c = Var::constant(2.0) * Var::constant(4.0);
        assert!(c.is_constant());
        assert_eq!(tape.len(), 1);
        let loss = th * c;
        assert_eq!(tape.gradient(loss).unwrap(), vec![8.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // d/dθ [θ·sin θ + θ²] = sin θ + θ cos θ + 2θ
        let tape = Tape::new();
        let th = tape.param(0.8);
        let loss = th * th.sin() + th * th;
        let g = tape.gradient(loss).unwrap()[0];
        let want = 0.8f64.sin() + 0.8 * 0.8f64.cos() + 1.6;
        assert!((g - want).abs() < 1e-15);
    }
}
