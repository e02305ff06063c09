//! Feed-forward tanh networks and the hard Dirichlet boundary wrapper.

pub mod batch;
mod model;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};

pub use model::{Checkpoint, CoefficientTransform, PinnModel, CHECKPOINT_FORMAT};

/// Architecture of a fully connected tanh network.
///
/// `depth` counts hidden layers; all hidden layers have `width` neurons.
/// When `input_box` is set, inputs are mapped affinely from the box onto
/// `[-1, 1]` before the first layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub depth: usize,
    pub width: usize,
    #[serde(default)]
    pub input_box: Option<Vec<[f64; 2]>>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize, depth: usize, width: usize) -> Self {
        MlpSpec {
            input_dim,
            output_dim,
            depth,
            width,
            input_box: None,
        }
    }

    pub fn with_input_box(mut self, bounds: Vec<[f64; 2]>) -> Self {
        self.input_box = Some(bounds);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.input_dim) {
            return Err(Error::Config(format!(
                "input_dim must be 1 or 2, got {}",
                self.input_dim
            )));
        }
        if self.output_dim == 0 || self.depth == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "output_dim, depth and width must be positive: {self:?}"
            )));
        }
        if let Some(b) = &self.input_box {
            if b.len() != self.input_dim || b.iter().any(|[lo, hi]| hi <= lo) {
                return Err(Error::Config(format!("bad input box {b:?}")));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.depth + 1);
        shapes.push((self.input_dim, self.width));
        for _ in 1..self.depth {
            shapes.push((self.width, self.width));
        }
        shapes.push((self.width, self.output_dim));
        shapes
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Per-input `(shift, scale)` such that `xi = (x - shift) * scale`.
    pub fn input_affine(&self) -> Vec<(f64, f64)> {
        match &self.input_box {
            None => vec![(0.0, 1.0); self.input_dim],
            Some(b) => b
                .iter()
                .map(|[lo, hi]| (0.5 * (lo + hi), 2.0 / (hi - lo)))
                .collect(),
        }
    }
}

/// Weights of one affine layer; `weights` is row-major `(fan_out, fan_in)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Params {
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| LayerParams {
                    fan_in: i,
                    fan_out: o,
                    weights: vec![0.0; i * o],
                    bias: vec![0.0; o],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Layer by layer: weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn unflatten(spec: &MlpSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.num_params() {
            return Err(Error::Usage(format!(
                "expected {} parameters, got {}",
                spec.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| {
                let weights = flat[off..off + i * o].to_vec();
                off += i * o;
                let bias = flat[off..off + o].to_vec();
                off += o;
                LayerParams {
                    fan_in: i,
                    fan_out: o,
                    weights,
                    bias,
                }
            })
            .collect();
        Ok(Params { layers })
    }
}

/// Glorot-normal weights, `N(0, 2 / (fan_in + fan_out))`, and zero biases.
pub fn init_glorot(spec: &MlpSpec, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::zeros(spec);
    for l in &mut p.layers {
        let std = (2.0 / (l.fan_in + l.fan_out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut l.weights {
            *w = normal.sample(&mut rng);
        }
    }
    p
}

/// Evaluates the network on dual inputs. Works for plain `f64` parameters
/// and for tape-tracked parameters alike.
pub fn eval<S: Scalar>(spec: &MlpSpec, theta: &[S], x: &[Dual<S>]) -> Result<Vec<Dual<S>>> {
    if x.len() != spec.input_dim {
        return Err(Error::Usage(format!(
            "network expects {} inputs, got {}",
            spec.input_dim,
            x.len()
        )));
    }
    if theta.len() != spec.num_params() {
        return Err(Error::Usage(format!(
            "network expects {} parameters, got {}",
            spec.num_params(),
            theta.len()
        )));
    }
    let n = x.iter().map(|d| d.tracked()).max().unwrap_or(0);
    let mut h: Vec<Dual<S>> = x
        .iter()
        .zip(spec.input_affine())
        .map(|(&xi, (shift, scale))| (xi + (-shift)) * scale)
        .collect();
    let shapes = spec.layer_shapes();
    let last = shapes.len() - 1;
    let mut off = 0;
    for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let w = &theta[off..off + fan_in * fan_out];
        let b = &theta[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        let mut next = Vec::with_capacity(fan_out);
        for j in 0..fan_out {
            let mut z = Dual::constant(b[j], n);
            for i in 0..fan_in {
                z = z + h[i].scale(w[j * fan_in + i]);
            }
            next.push(if l == last { z } else { z.tanh() });
        }
        h = next;
    }
    Ok(h)
}

pub type BoundaryFn = Arc<dyn Fn(&[Dual<f64>]) -> Dual<f64> + Send + Sync>;

/// Hard Dirichlet constraint `u(x) = g(x) + l(x) N(x)` on an axis-aligned box,
/// with the product bubble `l(x) = prod_k (x_k - a_k)(b_k - x_k)`.
#[derive(Clone)]
pub struct BoundaryWrapper {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    g: Option<BoundaryFn>,
}

impl std::fmt::Debug for BoundaryWrapper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryWrapper")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("g", &self.g.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

impl BoundaryWrapper {
    /// Homogeneous Dirichlet data on the box.
    pub fn zero(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        BoundaryWrapper {
            lower,
            upper,
            g: None,
        }
    }

    pub fn with_boundary_fn(mut self, g: BoundaryFn) -> Self {
        self.g = Some(g);
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&a, &b))| v >= a && v <= b)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Usage(format!(
                "point {x:?} outside domain {:?}..{:?}",
                self.lower, self.upper
            )))
        }
    }

    /// Bubble function with its spatial derivatives.
    pub fn bubble(&self, x: &[f64]) -> Dual<f64> {
        let d = self.dim();
        let mut l = Dual::constant(1.0, d);
        for k in 0..d {
            let xk = Dual::input(x[k], k, d);
            let factor = (xk + (-self.lower[k])) * (xk * -1.0 + self.upper[k]);
            l = l * factor;
        }
        l
    }

    pub fn boundary_value(&self, x: &[f64]) -> Dual<f64> {
        let d = self.dim();
        match &self.g {
            None => Dual::constant(0.0, d),
            Some(g) => g(&Dual::inputs(x)),
        }
    }

    /// Wraps a raw network output (with spatial derivatives) at `x`.
    pub fn constrained_solution<S: Scalar>(&self, x: &[f64], raw: Dual<S>) -> Result<Dual<S>> {
        self.check(x)?;
        let l = lift(self.bubble(x));
        let g = lift(self.boundary_value(x));
        Ok(g + l * raw)
    }
}

/// Embeds an `f64` dual as a constant over scalar type `S`.
pub fn lift<S: Scalar>(d: Dual<f64>) -> Dual<S> {
    let n = d.tracked();
    let mut out = Dual::constant(S::constant(d.v), n);
    for i in 0..n {
        out.g[i] = S::constant(d.g[i]);
    }
    for k in 0..3 {
        out.h[k] = S::constant(d.h[k]);
    }
    out
}
