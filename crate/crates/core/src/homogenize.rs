//! Reference G-limits: harmonic means, periodic cell problems, Monte Carlo
//! averages over ergodic families, patch upscaling and closed forms.

use std::fmt;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{mean_flux, solve_cell_problem, solve_dirichlet, Conductivity, Diagonal, Mesh};

pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type DiagonalFn = Arc<dyn Fn(&[f64]) -> [f64; 2] + Send + Sync>;

/// Relative slack on ellipticity bounds for round-off in oracles.
const WINDOW_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    LocallyPeriodic1d,
    WeakLimitKnown1d,
    Nonperiodic2d,
    Ergodic1d,
}

/// Multiscale coefficient `A^eps` on a box, with ellipticity bounds.
#[derive(Clone)]
pub struct CoefficientField {
    pub eval: PointFn,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub structure: Structure,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("eps", &self.eps)
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .field("structure", &self.structure)
            .finish_non_exhaustive()
    }
}

impl CoefficientField {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn at(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// Verifies `alpha <= A <= beta` on a probe grid of about `n` points.
    pub fn check_ellipticity(&self, n: usize) -> Result<()> {
        for x in probe_grid(&self.lower, &self.upper, n) {
            let v = self.at(&x);
            check_window(v, self.alpha, self.beta, &x[..self.dim()])?;
        }
        Ok(())
    }
}

impl Conductivity for CoefficientField {
    fn diagonal(&self, x: &[f64]) -> [f64; 2] {
        let a = self.at(x);
        [a, a]
    }
}

fn check_window(v: f64, alpha: f64, beta: f64, x: &[f64]) -> Result<()> {
    let slack = WINDOW_SLACK * beta.abs().max(1.0);
    if !(v >= alpha - slack && v <= beta + slack) {
        return Err(Error::Ellipticity {
            value: v,
            location: format!("{x:?} (window [{alpha}, {beta}])"),
        });
    }
    Ok(())
}

/// Uniform grid with about `n` points covering the closed box.
pub fn probe_grid(lower: &[f64], upper: &[f64], n: usize) -> Vec<[f64; 2]> {
    let d = lower.len();
    let per_axis = if d == 1 { n.max(2) } else { ((n as f64).sqrt().ceil() as usize).max(2) };
    let coord = |k: usize, i: usize| lower[k] + (upper[k] - lower[k]) * i as f64 / (per_axis - 1) as f64;
    if d == 1 {
        (0..per_axis).map(|i| [coord(0, i), 0.0]).collect()
    } else {
        (0..per_axis)
            .flat_map(|j| (0..per_axis).map(move |i| (i, j)))
            .map(|(i, j)| [coord(0, i), coord(1, j)])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    CellProblem,
    MonteCarlo,
    PatchUpscaling,
    Learned,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Analytic => "analytic",
            Provenance::CellProblem => "cell_problem",
            Provenance::MonteCarlo => "monte_carlo",
            Provenance::PatchUpscaling => "patch_upscaling",
            Provenance::Learned => "learned",
        }
    }
}

#[derive(Clone)]
enum GLimitRepr {
    Analytic(DiagonalFn),
    /// Piecewise-linear in coordinate `axis` on an increasing grid.
    Table {
        axis: usize,
        grid: Vec<f64>,
        entries: Vec<[f64; 2]>,
        std_error: Option<Vec<f64>>,
    },
}

/// Diagonal G-limit `A*(x)`; in 1D only the first entry is meaningful.
#[derive(Clone)]
pub struct GLimitField {
    pub dim: usize,
    pub provenance: Provenance,
    repr: GLimitRepr,
}

impl fmt::Debug for GLimitField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GLimitField")
            .field("dim", &self.dim)
            .field("provenance", &self.provenance)
            .finish_non_exhaustive()
    }
}

impl GLimitField {
    pub fn analytic(dim: usize, provenance: Provenance, f: DiagonalFn) -> Self {
        GLimitField {
            dim,
            provenance,
            repr: GLimitRepr::Analytic(f),
        }
    }

    /// Tabulated field depending on coordinate `axis` only.
    pub fn table(
        dim: usize,
        provenance: Provenance,
        axis: usize,
        grid: Vec<f64>,
        entries: Vec<[f64; 2]>,
        std_error: Option<Vec<f64>>,
    ) -> Result<Self> {
        if grid.is_empty() || grid.len() != entries.len() || axis >= dim {
            return Err(Error::Usage("G-limit table with inconsistent shape".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Usage("G-limit table grid must increase".into()));
        }
        if std_error.as_ref().is_some_and(|s| s.len() != grid.len()) {
            return Err(Error::Usage("standard error length mismatch".into()));
        }
        if let Some(k) = entries.iter().position(|e| !e[0].is_finite() || !e[1].is_finite()) {
            return Err(Error::NonFinite {
                at: format!("G-limit table entry {k}"),
            });
        }
        Ok(GLimitField {
            dim,
            provenance,
            repr: GLimitRepr::Table {
                axis,
                grid,
                entries,
                std_error,
            },
        })
    }

    pub fn eval(&self, x: &[f64]) -> [f64; 2] {
        match &self.repr {
            GLimitRepr::Analytic(f) => f(x),
            GLimitRepr::Table {
                axis, grid, entries, ..
            } => {
                let t = x[*axis];
                let k = grid.partition_point(|&g| g <= t);
                if k == 0 {
                    return entries[0];
                }
                if k == grid.len() {
                    return entries[k - 1];
                }
                let w = (t - grid[k - 1]) / (grid[k] - grid[k - 1]);
                std::array::from_fn(|c| entries[k - 1][c] * (1.0 - w) + entries[k][c] * w)
            }
        }
    }

    pub fn entries(&self) -> usize {
        self.dim
    }

    /// Grid, entries and standard errors of a tabulated field.
    pub fn as_table(&self) -> Option<(&[f64], &[[f64; 2]], Option<&[f64]>)> {
        match &self.repr {
            GLimitRepr::Table {
                grid,
                entries,
                std_error,
                ..
            } => Some((grid, entries, std_error.as_deref())),
            GLimitRepr::Analytic(_) => None,
        }
    }

    /// Verifies every diagonal entry lies in `[alpha, beta]` on a probe grid
    /// of about `n` points of the box.
    pub fn check_window(&self, lower: &[f64], upper: &[f64], alpha: f64, beta: f64, n: usize) -> Result<()> {
        for x in probe_grid(lower, upper, n) {
            let v = self.eval(&x);
            for &e in &v[..self.dim] {
                check_window(e, alpha, beta, &x[..self.dim])?;
            }
        }
        Ok(())
    }

    /// CSV with columns `x` (or the tabulated coordinate), the diagonal
    /// entries, the provenance and the standard error when known. Analytic
    /// fields are sampled on `fallback_grid`.
    pub fn write_csv(&self, path: &Path, fallback_grid: &[[f64; 2]]) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let entries_header = if self.dim == 1 { "a" } else { "a11,a22" };
        let prov = self.provenance.as_str();
        match &self.repr {
            GLimitRepr::Table {
                axis,
                grid,
                entries,
                std_error,
            } => {
                let coord = if self.dim == 1 { "x".to_string() } else { format!("x{}", axis + 1) };
                writeln!(w, "{coord},{entries_header},provenance,std_error").map_err(io)?;
                for (k, (t, e)) in grid.iter().zip(entries).enumerate() {
                    let se = std_error.as_ref().map_or(String::new(), |s| s[k].to_string());
                    if self.dim == 1 {
                        writeln!(w, "{t},{},{prov},{se}", e[0]).map_err(io)?;
                    } else {
                        writeln!(w, "{t},{},{},{prov},{se}", e[0], e[1]).map_err(io)?;
                    }
                }
            }
            GLimitRepr::Analytic(f) => {
                let coords = if self.dim == 1 { "x" } else { "x1,x2" };
                writeln!(w, "{coords},{entries_header},provenance,std_error").map_err(io)?;
                for x in fallback_grid {
                    let e = f(x);
                    if self.dim == 1 {
                        writeln!(w, "{},{},{prov},", x[0], e[0]).map_err(io)?;
                    } else {
                        writeln!(w, "{},{},{},{},{prov},", x[0], x[1], e[0], e[1]).map_err(io)?;
                    }
                }
            }
        }
        w.flush().map_err(io)
    }
}

impl Conductivity for GLimitField {
    fn diagonal(&self, x: &[f64]) -> [f64; 2] {
        let v = self.eval(x);
        if self.dim == 1 {
            [v[0], v[0]]
        } else {
            v
        }
    }
}

/// Sum with a fixed binary reduction tree, independent of thread count.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub const MIN_HARMONIC_POINTS: usize = 10_000;

/// `A*(x) = (int_0^1 dy / A(x, y))^{-1}` by the composite midpoint rule with
/// `n_quad` points, tabulated on `x_grid`.
pub fn glimit_harmonic_mean_1d(
    a: &(dyn Fn(f64, f64) -> f64 + Sync),
    x_grid: &[f64],
    n_quad: usize,
) -> Result<GLimitField> {
    if n_quad < MIN_HARMONIC_POINTS {
        return Err(Error::Config(format!(
            "harmonic mean needs at least {MIN_HARMONIC_POINTS} quadrature points, got {n_quad}"
        )));
    }
    let mut entries = Vec::with_capacity(x_grid.len());
    let mut inv = vec![0.0; n_quad];
    for &x in x_grid {
        for (k, v) in inv.iter_mut().enumerate() {
            let y = (k as f64 + 0.5) / n_quad as f64;
            let ay = a(x, y);
            if !(ay > 0.0 && ay.is_finite()) {
                return Err(Error::Ellipticity {
                    value: ay,
                    location: format!("x = {x}, y = {y}"),
                });
            }
            *v = 1.0 / ay;
        }
        let h = n_quad as f64 / pairwise_sum(&inv);
        entries.push([h, h]);
    }
    GLimitField::table(1, Provenance::CellProblem, 0, x_grid.to_vec(), entries, None)
}

/// Cell-problem G-limit in 1D: correctors of `A(x, .)` on `[0, 1]` with
/// `resolution` elements.
pub fn glimit_cell_1d(
    a: &(dyn Fn(f64, f64) -> f64 + Sync),
    x_grid: &[f64],
    resolution: usize,
) -> Result<GLimitField> {
    let mesh = Mesh::interval(0.0, 1.0, resolution)?;
    let mut entries = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        let frozen = Diagonal(move |y: &[f64]| {
            let v = a(x, y[0]);
            [v, v]
        });
        let chi = solve_cell_problem(&mesh, &frozen, 0)?;
        let q = mean_flux(&chi, &frozen, [1.0, 0.0])?[0];
        entries.push([q, q]);
    }
    GLimitField::table(1, Provenance::CellProblem, 0, x_grid.to_vec(), entries, None)
}

/// Full effective tensor of a diagonal conductivity that is periodic on the
/// cell `[0, cell[0]] x [0, cell[1]]`, with `resolution` elements per axis.
/// Row `j` holds the mean flux of the corrected field `e_j + grad chi^j`.
pub fn cell_tensor_2d(
    a: &(dyn Fn(&[f64]) -> [f64; 2] + Sync),
    cell: [f64; 2],
    resolution: [usize; 2],
) -> Result<[[f64; 2]; 2]> {
    let mesh = Mesh::rectangle([0.0, 0.0], cell, resolution[0], resolution[1])?;
    let cond = Diagonal(a);
    let mut t = [[0.0; 2]; 2];
    for j in 0..2 {
        let chi = solve_cell_problem(&mesh, &cond, j)?;
        let mut e = [0.0; 2];
        e[j] = 1.0;
        let q = mean_flux(&chi, &cond, e)?;
        t[0][j] = q[0];
        t[1][j] = q[1];
    }
    Ok(t)
}

/// Diagonal cell-problem G-limit on slices of coordinate `axis`: the frozen
/// coefficient at slice value `s` is `a(s, y)` on the cell.
pub fn glimit_cell_2d(
    a: &(dyn Fn(f64, &[f64]) -> [f64; 2] + Sync),
    axis: usize,
    slices: &[f64],
    cell: [f64; 2],
    resolution: [usize; 2],
) -> Result<GLimitField> {
    let mut entries = Vec::with_capacity(slices.len());
    for &s in slices {
        let t = cell_tensor_2d(&|y: &[f64]| a(s, y), cell, resolution)?;
        let off = t[0][1].abs().max(t[1][0].abs());
        if off > 1e-6 * t[0][0].abs().max(t[1][1].abs()) {
            log::warn!("slice {s}: off-diagonal effective entry {off:.3e} dropped");
        }
        entries.push([t[0][0], t[1][1]]);
    }
    GLimitField::table(2, Provenance::CellProblem, axis, slices.to_vec(), entries, None)
}

pub const MIN_MC_SAMPLES: usize = 10_000;

/// `A*(x) = 1 / E[1 / A(x, omega)]` with `omega` uniform on `[0, 1]^2`,
/// estimated from `n_samples` draws shared by all grid points. Standard
/// errors follow from the delta method.
pub fn glimit_ergodic_mc(
    a: &(dyn Fn(f64, [f64; 2]) -> f64 + Sync),
    x_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<GLimitField> {
    let (grid, entries, se) = ergodic_mc_estimates(a, x_grid, n_samples, seed)?;
    let entries = entries.into_iter().map(|v| [v, v]).collect();
    GLimitField::table(1, Provenance::MonteCarlo, 0, grid, entries, Some(se))
}

/// Raw Monte Carlo estimates and their standard errors.
pub fn ergodic_mc_estimates(
    a: &(dyn Fn(f64, [f64; 2]) -> f64 + Sync),
    x_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(Error::Config(format!(
            "Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {n_samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omegas: Vec<[f64; 2]> = (0..n_samples).map(|_| [rng.random(), rng.random()]).collect();
    let n = n_samples as f64;
    let mut inv = vec![0.0; n_samples];
    let mut sq = vec![0.0; n_samples];
    let (mut est, mut ses) = (Vec::with_capacity(x_grid.len()), Vec::with_capacity(x_grid.len()));
    for &x in x_grid {
        for (k, w) in omegas.iter().enumerate() {
            let v = a(x, *w);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Ellipticity {
                    value: v,
                    location: format!("x = {x}, omega = {w:?}"),
                });
            }
            inv[k] = 1.0 / v;
        }
        let mean = pairwise_sum(&inv) / n;
        for (s, v) in sq.iter_mut().zip(&inv) {
            *s = (v - mean) * (v - mean);
        }
        let var = pairwise_sum(&sq) / (n - 1.0);
        est.push(1.0 / mean);
        ses.push((var / n).sqrt() / (mean * mean));
    }
    Ok((x_grid.to_vec(), est, ses))
}

/// Patch-upscaling parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchOptions {
    /// Side length of the square patch.
    pub delta: f64,
    /// Elements per patch side.
    pub resolution: usize,
    /// First coordinate of every patch centre.
    pub x1_center: f64,
}

/// Diagonal G-limit on slices of `x_2` by upscaling over square patches:
/// `A*_ii` is the mean flux component `i` of the solution with linear
/// Dirichlet data `v = x_i` and no source.
pub fn glimit_patch_upscale_2d(
    a: &dyn Conductivity,
    eps: f64,
    domain: ([f64; 2], [f64; 2]),
    x2_slices: &[f64],
    opts: PatchOptions,
) -> Result<GLimitField> {
    let PatchOptions {
        delta,
        resolution,
        x1_center,
    } = opts;
    if delta < 8.0 * eps || delta > 0.25 {
        return Err(Error::Config(format!(
            "patch size {delta} must satisfy 8 eps = {} <= delta <= 1/4",
            8.0 * eps
        )));
    }
    let (lo, hi) = domain;
    let inside = |c: f64, k: usize| c >= lo[k] && c <= hi[k];
    if !inside(x1_center, 0) || x2_slices.iter().any(|&s| !inside(s, 1)) {
        return Err(Error::Config("patch centres must lie in the domain".into()));
    }
    if resolution < 2 {
        return Err(Error::Config("patch resolution must be at least 2".into()));
    }
    let mut entries = Vec::with_capacity(x2_slices.len());
    for &s in x2_slices {
        let half = 0.5 * delta;
        let mesh = Mesh::rectangle(
            [x1_center - half, s - half],
            [x1_center + half, s + half],
            resolution,
            resolution,
        )?;
        let mut e = [0.0; 2];
        for (i, slot) in e.iter_mut().enumerate() {
            let v = solve_dirichlet(&mesh, a, &|_| 0.0, &|x: &[f64]| x[i])?;
            *slot = mean_flux(&v, a, [0.0, 0.0])?[i];
        }
        entries.push(e);
    }
    GLimitField::table(2, Provenance::PatchUpscaling, 1, x2_slices.to_vec(), entries, None)
}

/// `A*(x) = (e^{1 + sin x} - 1) / (1 + sin x)`.
pub fn weak_limit_glimit_1d() -> GLimitField {
    GLimitField::analytic(
        1,
        Provenance::Analytic,
        Arc::new(|x: &[f64]| {
            let s = 1.0 + x[0].sin();
            let v = s.exp_m1() / s;
            [v, v]
        }),
    )
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
