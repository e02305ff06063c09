//! Batched forward/backward pass of an [`MlpSpec`] network carrying spatial
//! derivatives.
//!
//! Every point contributes `order.comps(d)` columns to the activation
//! matrices: the value, the gradient, and optionally the diagonal of the
//! Hessian. Column `c * npts + p` holds component `c` of point `p`. Affine
//! layers act on all components with one matrix product (the bias only
//! touches the value block) and the tanh layers apply the second-order chain
//! rule elementwise. `backward` is the hand-written adjoint of `forward`; it
//! is checked against the scalar tape in the tests.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::MlpSpec;

/// Which spatial derivatives to propagate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Value,
    First,
    /// Value, gradient and the diagonal second derivatives.
    SecondDiag,
}

impl Order {
    pub fn comps(self, d: usize) -> usize {
        match self {
            Order::Value => 1,
            Order::First => 1 + d,
            Order::SecondDiag => 1 + 2 * d,
        }
    }
}

/// Cached activations of one forward pass.
pub struct Forward {
    pub order: Order,
    pub npts: usize,
    pub dim: usize,
    /// Input of every affine layer (the last entry feeds the output layer).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Forward {
    /// Component `c` of output `k` at point `p`.
    #[inline]
    pub fn get(&self, k: usize, c: usize, p: usize) -> f64 {
        self.output[[k, c * self.npts + p]]
    }

    pub fn value(&self, k: usize, p: usize) -> f64 {
        self.get(k, 0, p)
    }

    pub fn grad(&self, k: usize, i: usize, p: usize) -> f64 {
        self.get(k, 1 + i, p)
    }

    pub fn hess_diag(&self, k: usize, i: usize, p: usize) -> f64 {
        self.get(k, 1 + self.dim + i, p)
    }
}

fn weights<'a>(theta: &'a [f64], off: usize, fan_in: usize, fan_out: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((fan_out, fan_in), &theta[off..off + fan_in * fan_out])
        .expect("weight block shape")
}

/// Runs the network on `points` (row `p` = coordinates of point `p`, length
/// `spec.input_dim`).
pub fn forward(spec: &MlpSpec, theta: &[f64], points: &[&[f64]], order: Order) -> Forward {
    assert_eq!(theta.len(), spec.num_params());
    let d = spec.input_dim;
    let npts = points.len();
    let comps = order.comps(d);
    let cols = comps * npts;

    let affine = spec.input_affine();
    let mut x = Array2::<f64>::zeros((d, cols));
    for (p, pt) in points.iter().enumerate() {
        debug_assert_eq!(pt.len(), d);
        for k in 0..d {
            let (shift, scale) = affine[k];
            x[[k, p]] = (pt[k] - shift) * scale;
        }
    }
    if comps > 1 {
        for k in 0..d {
            let (_, scale) = affine[k];
            x.slice_mut(s![k, (1 + k) * npts..(2 + k) * npts]).fill(scale);
        }
    }

    let shapes = spec.layer_shapes();
    let last = shapes.len() - 1;
    let mut inputs = Vec::with_capacity(shapes.len());
    let mut pre = Vec::with_capacity(last);
    let mut h = x;
    let mut off = 0;
    let mut output = Array2::zeros((0, 0));
    for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let w = weights(theta, off, fan_in, fan_out);
        let b = &theta[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;

        let mut z = w.dot(&h);
        for (j, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
            for v in row.slice_mut(s![..npts]) {
                *v += b[j];
            }
        }
        if l == last {
            inputs.push(std::mem::take(&mut h));
            output = z;
        } else {
            let next = activate(&z, order, d, npts);
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
    }
    Forward {
        order,
        npts,
        dim: d,
        inputs,
        pre,
        output,
    }
}

fn activate(z: &Array2<f64>, order: Order, d: usize, npts: usize) -> Array2<f64> {
    let mut h = Array2::zeros(z.raw_dim());
    for (zr, mut hr) in z.outer_iter().zip(h.outer_iter_mut()) {
        let zr = zr.as_slice().expect("contiguous");
        let hr = hr.as_slice_mut().expect("contiguous");
        for p in 0..npts {
            let a = zr[p].tanh();
            hr[p] = a;
            if order == Order::Value {
                continue;
            }
            let s1 = 1.0 - a * a;
            let s2 = -2.0 * a * s1;
            for i in 0..d {
                let zi = zr[(1 + i) * npts + p];
                hr[(1 + i) * npts + p] = s1 * zi;
                if order == Order::SecondDiag {
                    let c = (1 + d + i) * npts + p;
                    hr[c] = s1 * zr[c] + s2 * zi * zi;
                }
            }
        }
    }
    h
}

/// Adjoint of [`activate`]: maps `dh` (adjoint of the activation output) to
/// the adjoint of the pre-activation `z`.
fn activate_adjoint(z: &Array2<f64>, dh: &Array2<f64>, order: Order, d: usize, npts: usize) -> Array2<f64> {
    let mut dz = Array2::zeros(z.raw_dim());
    for ((zr, dhr), mut dzr) in z.outer_iter().zip(dh.outer_iter()).zip(dz.outer_iter_mut()) {
        let zr = zr.as_slice().expect("contiguous");
        let dhr = dhr.as_slice().expect("contiguous");
        let dzr = dzr.as_slice_mut().expect("contiguous");
        for p in 0..npts {
            let a = zr[p].tanh();
            let s1 = 1.0 - a * a;
            let s2 = -2.0 * a * s1;
            let mut acc = s1 * dhr[p];
            if order != Order::Value {
                let s3 = -2.0 * s1 * s1 + 4.0 * a * a * s1;
                for i in 0..d {
                    let ci = (1 + i) * npts + p;
                    let zi = zr[ci];
                    let gi = dhr[ci];
                    acc += s2 * zi * gi;
                    let mut dzi = s1 * gi;
                    if order == Order::SecondDiag {
                        let cii = (1 + d + i) * npts + p;
                        let hi = dhr[cii];
                        let zii = zr[cii];
                        dzr[cii] = s1 * hi;
                        dzi += 2.0 * s2 * zi * hi;
                        acc += (s2 * zii + s3 * zi * zi) * hi;
                    }
                    dzr[ci] = dzi;
                }
            }
            dzr[p] = acc;
        }
    }
    dz
}

/// Accumulates into `grad` the parameter gradient of `sum(d_out * output)`.
pub fn backward(spec: &MlpSpec, theta: &[f64], fwd: &Forward, d_out: &Array2<f64>, grad: &mut [f64]) {
    assert_eq!(d_out.dim(), fwd.output.dim());
    assert_eq!(grad.len(), theta.len());
    let shapes = spec.layer_shapes();
    let offsets: Vec<usize> = shapes
        .iter()
        .scan(0, |off, &(i, o)| {
            let cur = *off;
            *off += i * o + o;
            Some(cur)
        })
        .collect();
    let npts = fwd.npts;
    let mut dz = d_out.clone();
    for l in (0..shapes.len()).rev() {
        let (fan_in, fan_out) = shapes[l];
        let off = offsets[l];
        let input = &fwd.inputs[l];
        let dw = dz.dot(&input.t());
        for (g, v) in grad[off..off + fan_in * fan_out].iter_mut().zip(dw.iter()) {
            *g += v;
        }
        let gb = &mut grad[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        for (j, row) in dz.outer_iter().enumerate() {
            gb[j] += row.slice(s![..npts]).sum();
        }
        if l == 0 {
            break;
        }
        let w = weights(theta, off, fan_in, fan_out);
        let dh = w.t().dot(&dz);
        dz = activate_adjoint(&fwd.pre[l - 1], &dh, fwd.order, fwd.dim, npts);
    }
}
