//! PINN loss `lambda_r L_r + lambda_d L_d` with parameter gradients.

use ndarray::Array2;

use crate::autodiff::{Scalar, Tape, Var};
use crate::data::{CollocationSet, SampleSet};
use crate::error::{Error, Result};
use crate::network::batch::{self, Order};
use crate::network::PinnModel;

/// Bubble and boundary data at a point, with diagonal second derivatives.
#[derive(Clone, Copy, Debug, Default)]
struct Geometry {
    l: f64,
    dl: [f64; 2],
    d2l: [f64; 2],
    g: f64,
    dg: [f64; 2],
    d2g: [f64; 2],
}

impl Geometry {
    fn at(model: &PinnModel, x: &[f64]) -> Self {
        let l = model.wrapper.bubble(x);
        let g = model.wrapper.boundary_value(x);
        let d = x.len();
        let mut out = Geometry {
            l: l.v,
            g: g.v,
            ..Default::default()
        };
        for i in 0..d {
            out.dl[i] = l.g[i];
            out.d2l[i] = l.hess(i, i);
            out.dg[i] = g.g[i];
            out.d2g[i] = g.hess(i, i);
        }
        out
    }
}

/// Losses and their separate parameter gradients.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: f64,
    pub l_r: f64,
    pub l_d: f64,
    pub grad_r: Vec<f64>,
    pub grad_d: Vec<f64>,
}

impl LossParts {
    pub fn total_gradient(&self, lambda_r: f64, lambda_d: f64) -> Vec<f64> {
        self.grad_r
            .iter()
            .zip(&self.grad_d)
            .map(|(r, d)| lambda_r * r + lambda_d * d)
            .collect()
    }
}

/// Training problem: model architecture, data `T_d`, residual points `T_r`
/// and the source sampled on `T_r`.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: PinnModel,
    pub data_points: Vec<[f64; 2]>,
    pub data_values: Vec<f64>,
    pub colloc_points: Vec<[f64; 2]>,
    pub source: Vec<f64>,
    data_geom: Vec<Geometry>,
    colloc_geom: Vec<Geometry>,
    /// Coefficient-network input slot of each spatial axis.
    coef_slot: [Option<usize>; 2],
}

impl Problem {
    pub fn new(
        model: PinnModel,
        data: &SampleSet,
        colloc: &CollocationSet,
        f: &dyn Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let d = model.dim();
        if data.dim != d || colloc.dim != d {
            return Err(Error::Config(format!(
                "model is {d}D but data is {}D and collocation {}D",
                data.dim, colloc.dim
            )));
        }
        if data.is_empty() && colloc.points.is_empty() {
            return Err(Error::Config("no training points".into()));
        }
        for p in data.points.iter().chain(&colloc.points) {
            if !model.wrapper.contains(&p[..d]) {
                return Err(Error::Config(format!("training point {:?} outside domain", &p[..d])));
            }
        }
        let data_geom = data.points.iter().map(|p| Geometry::at(&model, &p[..d])).collect();
        let colloc_geom = colloc.points.iter().map(|p| Geometry::at(&model, &p[..d])).collect();
        let source = colloc.points.iter().map(|p| f(&p[..d])).collect();
        let mut coef_slot = [None; 2];
        for (m, &c) in model.coef_inputs.iter().enumerate() {
            coef_slot[c] = Some(m);
        }
        Ok(Problem {
            model,
            data_points: data.points.clone(),
            data_values: data.values.clone(),
            colloc_points: colloc.points.clone(),
            source,
            data_geom,
            colloc_geom,
            coef_slot,
        })
    }

    pub fn num_params(&self) -> usize {
        self.model.num_params()
    }

    pub fn all_data(&self) -> Vec<usize> {
        (0..self.data_points.len()).collect()
    }

    pub fn all_colloc(&self) -> Vec<usize> {
        (0..self.colloc_points.len()).collect()
    }

    /// Full-batch loss.
    pub fn full_loss(&self, theta: &[f64], lambda_d: f64) -> Result<LossParts> {
        self.loss(theta, 1.0, lambda_d, &self.all_data(), &self.all_colloc())
    }

    /// Loss on the given subsets of `T_d` and `T_r`; each term is the mean
    /// over its subset.
    pub fn loss(
        &self,
        theta: &[f64],
        lambda_r: f64,
        lambda_d: f64,
        data_idx: &[usize],
        colloc_idx: &[usize],
    ) -> Result<LossParts> {
        if theta.len() != self.num_params() {
            return Err(Error::Usage(format!(
                "{} parameters given, model has {}",
                theta.len(),
                self.num_params()
            )));
        }
        let mut grad_d = vec![0.0; theta.len()];
        let mut grad_r = vec![0.0; theta.len()];
        let l_d = self.data_term(theta, data_idx, &mut grad_d)?;
        let l_r = self.residual_term(theta, colloc_idx, &mut grad_r)?;
        Ok(LossParts {
            total: lambda_r * l_r + lambda_d * l_d,
            l_r,
            l_d,
            grad_r,
            grad_d,
        })
    }

    fn data_term(&self, theta: &[f64], idx: &[usize], grad: &mut [f64]) -> Result<f64> {
        if idx.is_empty() {
            return Ok(0.0);
        }
        let d = self.model.dim();
        let split = self.model.split_index();
        let tu = &theta[..split];
        let pts: Vec<&[f64]> = idx.iter().map(|&i| &self.data_points[i][..d]).collect();
        let fwd = batch::forward(&self.model.solution, tu, &pts, Order::Value);
        let n = idx.len() as f64;
        let mut dout = Array2::zeros(fwd.output.raw_dim());
        let mut acc = 0.0;
        for (p, &i) in idx.iter().enumerate() {
            let gm = &self.data_geom[i];
            let e = gm.g + gm.l * fwd.value(0, p) - self.data_values[i];
            if !e.is_finite() {
                return Err(Error::NonFinite {
                    at: format!("data loss at {:?}", &self.data_points[i][..d]),
                });
            }
            acc += e * e;
            dout[[0, p]] = 2.0 * e / n * gm.l;
        }
        batch::backward(&self.model.solution, tu, &fwd, &dout, &mut grad[..split]);
        Ok(acc / n)
    }

    fn residual_term(&self, theta: &[f64], idx: &[usize], grad: &mut [f64]) -> Result<f64> {
        if idx.is_empty() {
            return Ok(0.0);
        }
        let model = &self.model;
        let d = model.dim();
        let split = model.split_index();
        let (tu, ta) = theta.split_at(split);
        let pts: Vec<&[f64]> = idx.iter().map(|&i| &self.colloc_points[i][..d]).collect();
        let coef_pts: Vec<[f64; 2]> = idx
            .iter()
            .map(|&i| {
                let mut c = [0.0; 2];
                for (m, &ax) in model.coef_inputs.iter().enumerate() {
                    c[m] = self.colloc_points[i][ax];
                }
                c
            })
            .collect();
        let mi = model.coefficient.input_dim;
        let coef_refs: Vec<&[f64]> = coef_pts.iter().map(|c| &c[..mi]).collect();
        let fu = batch::forward(&model.solution, tu, &pts, Order::SecondDiag);
        let fa = batch::forward(&model.coefficient, ta, &coef_refs, Order::First);
        let np = idx.len();
        let n = np as f64;
        let scalar_coef = model.coefficient.output_dim == 1;
        let mut du = Array2::zeros(fu.output.raw_dim());
        let mut da = Array2::zeros(fa.output.raw_dim());
        let mut acc = 0.0;
        for (p, &i) in idx.iter().enumerate() {
            let gm = &self.colloc_geom[i];
            let nv = fu.value(0, p);
            let mut ui = [0.0; 2];
            let mut uii = [0.0; 2];
            let mut coef = [(0.0, 0.0, 0.0, 0.0); 2];
            let mut r = self.source[i];
            for ax in 0..d {
                let ni = fu.grad(0, ax, p);
                let nii = fu.hess_diag(0, ax, p);
                ui[ax] = gm.dg[ax] + gm.dl[ax] * nv + gm.l * ni;
                uii[ax] = gm.d2g[ax] + gm.d2l[ax] * nv + 2.0 * gm.dl[ax] * ni + gm.l * nii;
                let k = if scalar_coef { 0 } else { ax };
                let (t, t1, t2) = model.transform.taylor(fa.value(k, p));
                let ri = self.coef_slot[ax].map_or(0.0, |m| fa.grad(k, m, p));
                coef[ax] = (t, t1, t2, ri);
                r += t1 * ri * ui[ax] + t * uii[ax];
            }
            if !r.is_finite() {
                return Err(Error::NonFinite {
                    at: format!("residual at {:?}", &self.colloc_points[i][..d]),
                });
            }
            acc += r * r;
            let dr = 2.0 * r / n;
            for ax in 0..d {
                let (t, t1, t2, ri) = coef[ax];
                let d_ui = t1 * ri * dr;
                let d_uii = t * dr;
                du[[0, p]] += d_ui * gm.dl[ax] + d_uii * gm.d2l[ax];
                du[[0, (1 + ax) * np + p]] += d_ui * gm.l + d_uii * 2.0 * gm.dl[ax];
                du[[0, (1 + d + ax) * np + p]] += d_uii * gm.l;
                let k = if scalar_coef { 0 } else { ax };
                let d_t = uii[ax] * dr;
                let d_ai = ui[ax] * dr;
                da[[k, p]] += t1 * d_t + t2 * ri * d_ai;
                if let Some(m) = self.coef_slot[ax] {
                    da[[k, (1 + m) * np + p]] += t1 * d_ai;
                }
            }
        }
        let (gu, ga) = grad.split_at_mut(split);
        batch::backward(&model.solution, tu, &fu, &du, gu);
        batch::backward(&model.coefficient, ta, &fa, &da, ga);
        Ok(acc / n)
    }

    /// Full-batch loss and total gradient through the scalar tape; an
    /// independent route used to check [`Problem::loss`].
    pub fn tape_loss(&self, theta: &[f64], lambda_d: f64) -> Result<(f64, Vec<f64>)> {
        let d = self.model.dim();
        let tape = Tape::with_capacity(1 << 16);
        let th: Vec<Var> = tape.params(theta);
        let mut l_d = Var::constant(0.0);
        for (p, u) in self.data_points.iter().zip(&self.data_values) {
            let (uh, _) = self.model.eval_generic(&th, &p[..d])?;
            let e = uh.v + (-u);
            l_d += e * e;
        }
        let mut l_r = Var::constant(0.0);
        for (p, f) in self.colloc_points.iter().zip(&self.source) {
            let r = self.model.residual_generic(&th, &p[..d], *f)?;
            l_r += r * r;
        }
        let nd = self.data_points.len().max(1) as f64;
        let nr = self.colloc_points.len().max(1) as f64;
        let total = l_r * (1.0 / nr) + l_d * (lambda_d / nd);
        let v = total.value();
        Ok((v, tape.gradient(total)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleOrigin;
    use crate::network::{BoundaryWrapper, CoefficientTransform, MlpSpec};

    fn origin() -> SampleOrigin {
        SampleOrigin {
            fem_run: "t".into(),
            eps: 0.1,
            h: 0.01,
        }
    }

    fn model_1d() -> PinnModel {
        let mut m = PinnModel::new(
            MlpSpec::new(1, 1, 2, 6),
            MlpSpec::new(1, 1, 1, 5),
            vec![0],
            CoefficientTransform::default(),
            BoundaryWrapper::zero(vec![0.0], vec![1.0]),
        )
        .unwrap();
        m.initialize(3);
        m
    }

    fn model_2d() -> PinnModel {
        let mut m = PinnModel::new(
            MlpSpec::new(2, 1, 2, 5),
            MlpSpec::new(1, 2, 1, 4),
            vec![1],
            CoefficientTransform::default(),
            BoundaryWrapper::zero(vec![1.0, 1.0], vec![2.0, 2.0]),
        )
        .unwrap();
        m.initialize(8);
        m
    }

    fn sets(dim: usize, lo: f64, hi: f64) -> (SampleSet, CollocationSet) {
        let pts: Vec<[f64; 2]> = (0..7)
            .map(|k| {
                let t = lo + (hi - lo) * (k as f64 + 0.7) / 8.0;
                let s = lo + (hi - lo) * (((k * 3) % 7) as f64 + 0.4) / 8.0;
                if dim == 1 { [t, 0.0] } else { [t, s] }
            })
            .collect();
        let data = SampleSet {
            dim,
            values: pts.iter().map(|p| (p[0] + 2.0 * p[1]).sin()).collect(),
            points: pts.clone(),
            noise_level: 0.0,
            seed: 0,
            origin: origin(),
        };
        let colloc = CollocationSet {
            dim,
            points: pts.iter().map(|p| if dim == 1 { [1.0 - p[0], 0.0] } else { [p[1], p[0]] }).collect(),
        };
        (data, colloc)
    }

    #[test]
    fn batched_gradient_matches_tape_1d_and_2d() {
        for (model, lo, hi) in [(model_1d(), 0.0, 1.0), (model_2d(), 1.0, 2.0)] {
            let (data, colloc) = sets(model.dim(), lo, hi);
            let prob = Problem::new(model.clone(), &data, &colloc, &|x| 1.0 + x[0]).unwrap();
            let lam = 2.5;
            let fast = prob.full_loss(&model.theta, lam).unwrap();
            let (v, g) = prob.tape_loss(&model.theta, lam).unwrap();
            assert!((fast.total - v).abs() < 1e-12 * v.abs().max(1.0));
            for (a, b) in fast.total_gradient(1.0, lam).iter().zip(&g) {
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = model_2d();
        let (data, colloc) = sets(2, 1.0, 2.0);
        let prob = Problem::new(model.clone(), &data, &colloc, &|_| 1.0).unwrap();
        let g = prob.full_loss(&model.theta, 1.0).unwrap().total_gradient(1.0, 1.0);
        let h = 1e-5;
        for j in (0..g.len()).step_by(7) {
            let mut tp = model.theta.clone();
            let mut tm = model.theta.clone();
            tp[j] += h;
            tm[j] -= h;
            let fd = (prob.full_loss(&tp, 1.0).unwrap().total - prob.full_loss(&tm, 1.0).unwrap().total) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-5 * g[j].abs().max(1e-2), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn zero_networks_leave_only_the_source() {
        let mut model = model_1d();
        model.transform = CoefficientTransform::Identity;
        model.theta.iter_mut().for_each(|t| *t = 0.0);
        let (data, colloc) = sets(1, 0.0, 1.0);
        let prob = Problem::new(model.clone(), &data, &colloc, &|x| 2.0 + x[0]).unwrap();
        let parts = prob.full_loss(&model.theta, 1.0).unwrap();
        let want = colloc.points.iter().map(|p| (2.0 + p[0]).powi(2)).sum::<f64>() / 7.0;
        assert!((parts.l_r - want).abs() < 1e-14);
    }

    #[test]
    fn lambda_scales_data_term_linearly() {
        let model = model_1d();
        let (data, colloc) = sets(1, 0.0, 1.0);
        let prob = Problem::new(model.clone(), &data, &colloc, &|_| 1.0).unwrap();
        let a = prob.full_loss(&model.theta, 1.0).unwrap();
        let b = prob.full_loss(&model.theta, 2.0).unwrap();
        assert_eq!(b.total - b.l_r, 2.0 * (a.total - a.l_r));
    }

    #[test]
    fn consistent_fields_have_zero_loss() {
        // source and data manufactured from the model's own fields
        let mut model = model_1d();
        model.transform = CoefficientTransform::Identity;
        let (data, colloc) = sets(1, 0.0, 1.0);
        let m2 = model.clone();
        let f = move |x: &[f64]| {
            let (u, a) = m2.eval_generic(&m2.theta, x).unwrap();
            -(a[0].g[0] * u.g[0] + a[0].v * u.hess(0, 0))
        };
        let data = SampleSet {
            values: data.points.iter().map(|p| model.solution_at(&p[..1]).unwrap()).collect(),
            ..data
        };
        let prob = Problem::new(model.clone(), &data, &colloc, &f).unwrap();
        let parts = prob.full_loss(&model.theta, 1.0).unwrap();
        assert!(parts.l_r < 1e-20 && parts.l_d < 1e-26, "{} {}", parts.l_r, parts.l_d);
    }
}
