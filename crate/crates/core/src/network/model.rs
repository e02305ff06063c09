use std::path::Path;

use serde::{Deserialize, Serialize};

use super::batch::{self, Order};
use super::{eval, init_glorot, BoundaryWrapper, MlpSpec};
use crate::autodiff::{sigmoid, softplus, Dual, Scalar};
use crate::error::{Error, Result};

/// Output transform of the coefficient network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientTransform {
    Identity,
    /// `floor + softplus(raw)`, strictly positive.
    Softplus { floor: f64 },
}

impl Default for CoefficientTransform {
    fn default() -> Self {
        CoefficientTransform::Softplus { floor: 1e-3 }
    }
}

impl CoefficientTransform {
    pub fn apply<S: Scalar>(&self, raw: Dual<S>) -> Dual<S> {
        match *self {
            CoefficientTransform::Identity => raw,
            CoefficientTransform::Softplus { floor } => raw.softplus() + floor,
        }
    }

    /// Value and first two derivatives of the transform at `raw`.
    pub fn taylor(&self, raw: f64) -> (f64, f64, f64) {
        match *self {
            CoefficientTransform::Identity => (raw, 1.0, 0.0),
            CoefficientTransform::Softplus { floor } => {
                let s = sigmoid(raw);
                (floor + softplus(raw), s, s * (1.0 - s))
            }
        }
    }
}

/// Solution network with hard boundary constraint plus coefficient network.
///
/// Parameters are stored as one flat vector: solution network first, then
/// coefficient network. The coefficient network sees the spatial coordinates
/// listed in `coef_inputs`; it has either one output (isotropic coefficient)
/// or one output per spatial dimension (diagonal tensor).
#[derive(Clone, Debug)]
pub struct PinnModel {
    pub solution: MlpSpec,
    pub coefficient: MlpSpec,
    pub coef_inputs: Vec<usize>,
    pub transform: CoefficientTransform,
    pub wrapper: BoundaryWrapper,
    pub theta: Vec<f64>,
}

impl PinnModel {
    pub fn new(
        solution: MlpSpec,
        coefficient: MlpSpec,
        coef_inputs: Vec<usize>,
        transform: CoefficientTransform,
        wrapper: BoundaryWrapper,
    ) -> Result<Self> {
        solution.validate()?;
        coefficient.validate()?;
        let d = wrapper.dim();
        if solution.input_dim != d || solution.output_dim != 1 {
            return Err(Error::Config(format!(
                "solution network must map R^{d} to R, got {}->{}",
                solution.input_dim, solution.output_dim
            )));
        }
        if coef_inputs.len() != coefficient.input_dim || coef_inputs.iter().any(|&c| c >= d) {
            return Err(Error::Config(format!(
                "coefficient inputs {coef_inputs:?} do not match network input_dim {}",
                coefficient.input_dim
            )));
        }
        if coefficient.output_dim != 1 && coefficient.output_dim != d {
            return Err(Error::Config(format!(
                "coefficient network needs 1 or {d} outputs, got {}",
                coefficient.output_dim
            )));
        }
        let n = solution.num_params() + coefficient.num_params();
        Ok(PinnModel {
            solution,
            coefficient,
            coef_inputs,
            transform,
            wrapper,
            theta: vec![0.0; n],
        })
    }

    /// Glorot initialization of both networks from one seed.
    pub fn initialize(&mut self, seed: u64) {
        let mut theta = init_glorot(&self.solution, seed).flatten();
        theta.extend(init_glorot(&self.coefficient, seed ^ 0x9e37_79b9_7f4a_7c15).flatten());
        self.theta = theta;
    }

    pub fn dim(&self) -> usize {
        self.wrapper.dim()
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn split_index(&self) -> usize {
        self.solution.num_params()
    }

    /// Number of independent G-limit entries (diagonal tensor or scalar).
    pub fn glimit_entries(&self) -> usize {
        self.coefficient.output_dim
    }

    fn coef_point<'a>(&self, x: &[f64], buf: &'a mut [f64; 2]) -> &'a [f64] {
        for (m, &c) in self.coef_inputs.iter().enumerate() {
            buf[m] = x[c];
        }
        &buf[..self.coef_inputs.len()]
    }

    /// û₀ and the diagonal entries of Â* at `x`, with spatial derivatives,
    /// for any scalar type the parameters are expressed in.
    pub fn eval_generic<S: Scalar>(&self, theta: &[S], x: &[f64]) -> Result<(Dual<S>, Vec<Dual<S>>)> {
        let d = self.dim();
        let (tu, ta) = theta.split_at(self.split_index());
        let xs: Vec<Dual<S>> = (0..d).map(|i| Dual::input(S::constant(x[i]), i, d)).collect();
        let raw_u = eval(&self.solution, tu, &xs)?[0];
        let u = self.wrapper.constrained_solution(x, raw_u)?;
        let xa: Vec<Dual<S>> = self.coef_inputs.iter().map(|&c| xs[c]).collect();
        let a = eval(&self.coefficient, ta, &xa)?
            .into_iter()
            .map(|r| self.transform.apply(r))
            .collect();
        Ok((u, a))
    }

    /// Residual `div(Â* ∇û₀) + f` at `x` for diagonal Â*.
    pub fn residual_generic<S: Scalar>(&self, theta: &[S], x: &[f64], f: f64) -> Result<S> {
        let (u, a) = self.eval_generic(theta, x)?;
        let mut r = S::constant(f);
        for i in 0..self.dim() {
            let aii = if a.len() == 1 { a[0] } else { a[i] };
            r = r + aii.g[i] * u.g[i] + aii.v * u.hess(i, i);
        }
        Ok(r)
    }

    pub fn solution_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval_generic(&self.theta, x)?.0.v)
    }

    pub fn glimit_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_generic(&self.theta, x)?.1.iter().map(|a| a.v).collect())
    }

    /// û₀ at many points; points outside the domain are an error.
    pub fn solution_values(&self, points: &[[f64; 2]]) -> Result<Vec<f64>> {
        let d = self.dim();
        if let Some(p) = points.iter().find(|p| !self.wrapper.contains(&p[..d])) {
            return Err(Error::Usage(format!("point {:?} outside domain", &p[..d])));
        }
        let refs: Vec<&[f64]> = points.iter().map(|p| &p[..d]).collect();
        let (tu, _) = self.theta.split_at(self.split_index());
        let fwd = batch::forward(&self.solution, tu, &refs, Order::Value);
        Ok(points
            .iter()
            .enumerate()
            .map(|(p, x)| {
                let g = self.wrapper.boundary_value(&x[..d]).v;
                let l = self.wrapper.bubble(&x[..d]).v;
                g + l * fwd.value(0, p)
            })
            .collect())
    }

    /// Diagonal Â* entries at many points.
    pub fn glimit_values(&self, points: &[[f64; 2]]) -> Vec<Vec<f64>> {
        let coords: Vec<[f64; 2]> = points
            .iter()
            .map(|x| {
                let mut buf = [0.0; 2];
                self.coef_point(x, &mut buf);
                buf
            })
            .collect();
        let m = self.coef_inputs.len();
        let refs: Vec<&[f64]> = coords.iter().map(|c| &c[..m]).collect();
        let (_, ta) = self.theta.split_at(self.split_index());
        let fwd = batch::forward(&self.coefficient, ta, &refs, Order::Value);
        (0..points.len())
            .map(|p| {
                (0..self.coefficient.output_dim)
                    .map(|k| self.transform.taylor(fwd.value(k, p)).0)
                    .collect()
            })
            .collect()
    }

    pub fn checkpoint(&self, seed: u64, step: u64) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            solution: self.solution.clone(),
            coefficient: self.coefficient.clone(),
            coef_inputs: self.coef_inputs.clone(),
            transform: self.transform,
            lower: self.wrapper.lower.clone(),
            upper: self.wrapper.upper.clone(),
            seed,
            step,
            theta: self.theta.clone(),
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "glimit-params v1";

/// Serialized model: header (specs, seed, training step) plus flat parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub solution: MlpSpec,
    pub coefficient: MlpSpec,
    pub coef_inputs: Vec<usize>,
    pub transform: CoefficientTransform,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub seed: u64,
    pub step: u64,
    pub theta: Vec<f64>,
}

impl Checkpoint {
    /// Rebuilds the model with homogeneous boundary data.
    pub fn into_model(self) -> Result<PinnModel> {
        let wrapper = BoundaryWrapper::zero(self.lower, self.upper);
        let mut m = PinnModel::new(
            self.solution,
            self.coefficient,
            self.coef_inputs,
            self.transform,
            wrapper,
        )?;
        if self.theta.len() != m.num_params() {
            return Err(Error::Usage(format!(
                "checkpoint has {} parameters, model needs {}",
                self.theta.len(),
                m.num_params()
            )));
        }
        m.theta = self.theta;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::format(path, format!("unknown format {:?}", c.format)));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_2d() -> PinnModel {
        let mut m = PinnModel::new(
            MlpSpec::new(2, 1, 2, 6),
            MlpSpec::new(1, 2, 1, 4),
            vec![1],
            CoefficientTransform::default(),
            BoundaryWrapper::zero(vec![1.0, 1.0], vec![2.0, 2.0]),
        )
        .unwrap();
        m.initialize(3);
        m
    }

    #[test]
    fn batch_values_match_pointwise() {
        let m = model_2d();
        let pts = [[1.2, 1.7], [1.5, 1.5], [1.0, 1.3]];
        let u = m.solution_values(&pts).unwrap();
        let a = m.glimit_values(&pts);
        for (p, x) in pts.iter().enumerate() {
            assert!((u[p] - m.solution_at(x).unwrap()).abs() < 1e-14);
            let ap = m.glimit_at(x).unwrap();
            assert!((a[p][0] - ap[0]).abs() < 1e-14);
            assert!((a[p][1] - ap[1]).abs() < 1e-14);
            assert!(ap.iter().all(|&v| v > 1e-3));
        }
        assert_eq!(u[2], 0.0);
    }

    #[test]
    fn coefficient_depends_on_listed_inputs_only() {
        let m = model_2d();
        let a1 = m.glimit_at(&[1.1, 1.4]).unwrap();
        let a2 = m.glimit_at(&[1.9, 1.4]).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = model_2d();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.checkpoint(3, 17).save(&path).unwrap();
        let c = Checkpoint::load(&path).unwrap();
        assert_eq!(c.step, 17);
        let back = c.into_model().unwrap();
        assert_eq!(back.theta, m.theta);
    }

    #[test]
    fn bad_coefficient_outputs() {
        let r = PinnModel::new(
            MlpSpec::new(2, 1, 1, 3),
            MlpSpec::new(1, 3, 1, 3),
            vec![1],
            CoefficientTransform::Identity,
            BoundaryWrapper::zero(vec![0.0, 0.0], vec![1.0, 1.0]),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
