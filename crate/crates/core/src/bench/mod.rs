//! Benchmark registry, run configuration and the end-to-end pipelines.

mod config;
mod pipeline;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenize::{CoefficientField, Structure};

pub use config::{RunConfig, SweepAxis};
pub use pipeline::{
    build_model, build_problem, convergence_linf, evaluate, export_plots, generate, patch_reference, reference, reference_glimit, run_all, sweep,
    train_run, ReferenceManifest, ReferenceSet, RunArtifacts, SweepRow,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkId {
    Locper1d,
    Oscil1d,
    Nonper2d,
    Ergodic1d,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 4] = [
        BenchmarkId::Locper1d,
        BenchmarkId::Oscil1d,
        BenchmarkId::Nonper2d,
        BenchmarkId::Ergodic1d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkId::Locper1d => "locper1d",
            BenchmarkId::Oscil1d => "oscil1d",
            BenchmarkId::Nonper2d => "nonper2d",
            BenchmarkId::Ergodic1d => "ergodic1d",
        }
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkId::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown benchmark {s:?}")))
    }
}

/// How the reference G-limit of a benchmark is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceRecipe {
    /// `(1 + x^2) / 2`.
    LocperClosedForm,
    /// `(e^{1 + sin x} - 1) / (1 + sin x)`.
    WeakLimit,
    /// Patch upscaling on slices of `x_2`.
    Patch,
    /// `1 / E[1 / A]` over `omega`.
    MonteCarlo,
}

/// Network sizes and optimizer defaults of a benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub solution_depth: usize,
    pub solution_width: usize,
    pub coefficient_depth: usize,
    pub coefficient_width: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

/// Static description of one benchmark problem.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkDef {
    pub id: BenchmarkId,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub hyper: Hyper,
    pub recipe: ReferenceRecipe,
    pub alpha: f64,
    pub beta: f64,
    pub default_eps: f64,
    /// Data mesh spacing at desk scale and with `--full-scale`.
    pub data_h: f64,
    pub full_scale_h: f64,
    pub full_scale_eps: f64,
    /// Mesh spacing of the reference homogenized solve.
    pub reference_h: f64,
    pub eval_h: f64,
    pub default_n_data: usize,
    /// `|T_r| - |T_d|`; zero in 2D where both are square grids.
    pub extra_colloc: usize,
    /// Coordinates fed to the coefficient network.
    pub coef_inputs: Vec<usize>,
    pub coef_outputs: usize,
}

impl BenchmarkDef {
    pub fn get(id: BenchmarkId) -> Self {
        let h1 = 1.0 / 32768.0;
        let hyper = |sd, sw, cd, cw, lr, epochs, batch| Hyper {
            solution_depth: sd,
            solution_width: sw,
            coefficient_depth: cd,
            coefficient_width: cw,
            lr,
            epochs,
            batch_size: batch,
        };
        match id {
            BenchmarkId::Locper1d => BenchmarkDef {
                id,
                lower: vec![0.0],
                upper: vec![1.0],
                hyper: hyper(3, 30, 3, 30, 1e-3, 40_000, 64),
                recipe: ReferenceRecipe::LocperClosedForm,
                alpha: 1.0 / 3.0,
                beta: 2.0,
                default_eps: 1.0 / 128.0,
                data_h: h1,
                full_scale_h: 1e-5,
                full_scale_eps: 1.0 / 128.0,
                reference_h: h1,
                eval_h: 1e-5,
                default_n_data: 160,
                extra_colloc: 30,
                coef_inputs: vec![0],
                coef_outputs: 1,
            },
            BenchmarkId::Oscil1d => {
                let s1 = 1.0 + 1f64.sin();
                BenchmarkDef {
                    id,
                    lower: vec![0.0],
                    upper: vec![1.0],
                    hyper: hyper(3, 50, 3, 50, 1e-4, 80_000, 64),
                    recipe: ReferenceRecipe::WeakLimit,
                    alpha: 0.5 * 1f64.exp_m1(),
                    beta: 1.5 * s1.exp_m1() / s1,
                    default_eps: 1.0 / 128.0,
                    data_h: 1.0 / 131_072.0,
                    full_scale_h: 1e-5,
                    full_scale_eps: 1.0 / 128.0,
                    reference_h: h1,
                    eval_h: 1e-5,
                    default_n_data: 160,
                    extra_colloc: 30,
                    coef_inputs: vec![0],
                    coef_outputs: 1,
                }
            }
            BenchmarkId::Nonper2d => BenchmarkDef {
                id,
                lower: vec![1.0, 1.0],
                upper: vec![2.0, 2.0],
                hyper: hyper(4, 45, 2, 40, 1e-3, 100_000, 200),
                recipe: ReferenceRecipe::Patch,
                alpha: 0.1,
                beta: 1.9,
                default_eps: 1.0 / 16.0,
                data_h: 1.0 / 1024.0,
                full_scale_h: 1.0 / 8000.0,
                full_scale_eps: 1.0 / 128.0,
                reference_h: 1.0 / 128.0,
                eval_h: 1.0 / 128.0,
                default_n_data: 1600,
                extra_colloc: 0,
                coef_inputs: vec![1],
                coef_outputs: 2,
            },
            BenchmarkId::Ergodic1d => BenchmarkDef {
                id,
                lower: vec![0.0],
                upper: vec![1.0],
                hyper: hyper(3, 30, 2, 10, 1e-3, 60_000, 64),
                recipe: ReferenceRecipe::MonteCarlo,
                alpha: 0.1,
                beta: 6.1,
                default_eps: 1.0 / 1024.0,
                data_h: 1.0 / 131_072.0,
                full_scale_h: 1e-6,
                full_scale_eps: 1.0 / 1024.0,
                reference_h: h1,
                eval_h: 1.0 / 2000.0,
                default_n_data: 160,
                extra_colloc: 20,
                coef_inputs: vec![0],
                coef_outputs: 1,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Right-hand side `f`.
    pub fn source(&self, x: &[f64]) -> f64 {
        match self.id {
            BenchmarkId::Locper1d => (PI * x[0]).cos(),
            BenchmarkId::Oscil1d => 3.0 + x[0].sin(),
            BenchmarkId::Nonper2d | BenchmarkId::Ergodic1d => 1.0,
        }
    }

    /// Multiscale coefficient `A^eps`; `omega` is read by the ergodic
    /// benchmark only.
    pub fn coefficient(&self, eps: f64, omega: [f64; 2]) -> Result<CoefficientField> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("eps = {eps} must be positive")));
        }
        let eval: crate::homogenize::PointFn = match self.id {
            BenchmarkId::Locper1d => Arc::new(move |x: &[f64]| locper_coefficient(x[0], eps)),
            BenchmarkId::Oscil1d => Arc::new(move |x: &[f64]| oscil_coefficient(x[0], eps)),
            BenchmarkId::Nonper2d => Arc::new(move |x: &[f64]| nonper_coefficient(x, eps)),
            BenchmarkId::Ergodic1d => {
                if omega.iter().any(|w| !(0.0..=1.0).contains(w)) {
                    return Err(Error::Config(format!("omega {omega:?} must lie in [0, 1]^2")));
                }
                Arc::new(move |x: &[f64]| ergodic_coefficient(x[0], x[0] / eps, omega))
            }
        };
        let structure = match self.id {
            BenchmarkId::Locper1d => Structure::LocallyPeriodic1d,
            BenchmarkId::Oscil1d => Structure::WeakLimitKnown1d,
            BenchmarkId::Nonper2d => Structure::Nonperiodic2d,
            BenchmarkId::Ergodic1d => Structure::Ergodic1d,
        };
        Ok(CoefficientField {
            eval,
            eps,
            alpha: self.alpha,
            beta: self.beta,
            structure,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        })
    }
}

/// `(1 + x^2) / (2 + sin(2 pi x / eps))`.
pub fn locper_coefficient(x: f64, eps: f64) -> f64 {
    (1.0 + x * x) / (2.0 + (2.0 * PI * x / eps).sin())
}

/// `1 + 0.9 sin(2 pi x_1 / eps) sin(2 pi x_2^2 / eps)`.
pub fn nonper_coefficient(x: &[f64], eps: f64) -> f64 {
    1.0 + 0.9 * (2.0 * PI * x[0] / eps).sin() * (2.0 * PI * x[1] * x[1] / eps).sin()
}

/// `3.1 + (x + 1) sin(2 pi (w_1 + t)) + sin(2 pi (w_2 + sqrt(2) t))` at fast
/// variable `t`.
pub fn ergodic_coefficient(x: f64, t: f64, omega: [f64; 2]) -> f64 {
    3.1 + (x + 1.0) * (2.0 * PI * (omega[0] + t)).sin()
        + (2.0 * PI * (omega[1] + std::f64::consts::SQRT_2 * t)).sin()
}

const GAUSS8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// Composite 8-point Gauss-Legendre rule on `[0, 1]` with `panels` panels.
pub fn gauss_unit(f: impl Fn(f64) -> f64, panels: usize) -> f64 {
    let w = 1.0 / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * w;
        let mut s = 0.0;
        for &(node, weight) in &GAUSS8 {
            let d = 0.5 * w * node;
            s += weight * (f(mid - d) + f(mid + d));
        }
        total += 0.5 * w * s;
    }
    total
}

/// `int_0^1 (1 + sin((y + c)^2) / 2) e^{y (1 + sin x)} dy` with
/// `c = sin(pi sqrt(2 / eps) x) / (2 eps)`.
pub fn oscil_coefficient(x: f64, eps: f64) -> f64 {
    let c = (PI * (2.0 / eps).sqrt() * x).sin() / (2.0 * eps);
    let k = 1.0 + x.sin();
    let panels = 8 + (2.0 * c.abs() + 1.0).ceil() as usize;
    gauss_unit(
        |y| {
            let z = y + c;
            (1.0 + 0.5 * (z * z).sin()) * (k * y).exp()
        },
        panels,
    )
}
