//! Assembly and solution of Dirichlet and periodic P1 problems with
//! diagonal conductivities.

use super::multigrid::Multigrid;
use super::sparse::{pcg, solve_tridiagonal, CgOptions, CsrMatrix, Jacobi};
use super::{BoundaryKind, FemSolution, Mesh};
use crate::error::{Error, Result};

const DIRICHLET_TOL: f64 = 1e-11;
const CELL_TOL: f64 = 1e-12;

/// Diagonal conductivity tensor `diag(a_11, a_22)`; in 1D only the first
/// entry is read.
pub trait Conductivity: Sync {
    fn diagonal(&self, x: &[f64]) -> [f64; 2];
}

/// Scalar conductivity `a(x) I`.
pub struct Isotropic<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> Conductivity for Isotropic<F> {
    fn diagonal(&self, x: &[f64]) -> [f64; 2] {
        let a = (self.0)(x);
        [a, a]
    }
}

pub struct Diagonal<F>(pub F);

impl<F: Fn(&[f64]) -> [f64; 2] + Sync> Conductivity for Diagonal<F> {
    fn diagonal(&self, x: &[f64]) -> [f64; 2] {
        (self.0)(x)
    }
}

/// Message if the mesh has fewer than 8 elements per period `eps` along
/// some axis.
pub fn resolution_warning(mesh: &Mesh, eps: f64) -> Option<String> {
    let h = (0..mesh.dim()).map(|k| mesh.h(k)).fold(0.0, f64::max);
    let per = eps / h;
    (per < 8.0).then(|| {
        format!("mesh h = {h:.3e} resolves eps = {eps:.3e} with only {per:.1} elements per period")
    })
}

fn checked(a: &dyn Conductivity, x: &[f64], dim: usize) -> Result<[f64; 2]> {
    let v = a.diagonal(x);
    for &c in &v[..dim] {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Ellipticity {
                value: c,
                location: format!("{:?}", &x[..dim]),
            });
        }
    }
    Ok(v)
}

/// Per-element data shared by all assembly routines.
struct Element {
    nodes: [usize; 3],
    /// Element measure (length in 1D, area in 2D).
    measure: f64,
    /// Gradients of the local shape functions.
    grads: [[f64; 2]; 3],
    /// Quadrature-averaged conductivity.
    abar: [f64; 2],
    /// Consistent load vector entries.
    load: [f64; 3],
}

impl Element {
    fn local_count(dim: usize) -> usize {
        dim + 1
    }

    fn stiffness(&self, a: usize, b: usize) -> f64 {
        let (ga, gb) = (self.grads[a], self.grads[b]);
        self.measure * (self.abar[0] * ga[0] * gb[0] + self.abar[1] * ga[1] * gb[1])
    }
}

/// Visits every element with midpoint (1D) or edge-midpoint (2D) quadrature
/// of `a` and, if given, the source `f`.
fn for_each_element(
    mesh: &Mesh,
    a: &dyn Conductivity,
    f: Option<&dyn Fn(&[f64]) -> f64>,
    mut visit: impl FnMut(&Element),
) -> Result<()> {
    let dim = mesh.dim();
    for nodes in mesh.elements() {
        let p = nodes.map(|n| mesh.node(n));
        let el = if dim == 1 {
            let h = p[1][0] - p[0][0];
            let m = [0.5 * (p[0][0] + p[1][0])];
            let abar = checked(a, &m, 1)?;
            let fm = f.map_or(0.0, |f| f(&m));
            Element {
                nodes,
                measure: h,
                grads: [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0; 2]],
                abar,
                load: [0.5 * h * fm, 0.5 * h * fm, 0.0],
            }
        } else {
            let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            let area = 0.5 * det;
            let mut grads = [[0.0; 2]; 3];
            for k in 0..3 {
                let (b, c) = (p[(k + 1) % 3], p[(k + 2) % 3]);
                grads[k] = [(b[1] - c[1]) / det, (c[0] - b[0]) / det];
            }
            // midpoint of the edge opposite vertex k
            let mids: [[f64; 2]; 3] = std::array::from_fn(|k| {
                let (b, c) = (p[(k + 1) % 3], p[(k + 2) % 3]);
                [0.5 * (b[0] + c[0]), 0.5 * (b[1] + c[1])]
            });
            let mut abar = [0.0; 2];
            for m in &mids {
                let v = checked(a, m, 2)?;
                abar[0] += v[0] / 3.0;
                abar[1] += v[1] / 3.0;
            }
            let load = match f {
                Some(f) => {
                    let fm = mids.map(|m| f(&m));
                    std::array::from_fn(|k| area / 6.0 * (fm[(k + 1) % 3] + fm[(k + 2) % 3]))
                }
                None => [0.0; 3],
            };
            Element {
                nodes,
                measure: area,
                grads,
                abar,
                load,
            }
        };
        visit(&el);
    }
    Ok(())
}

/// Galerkin P1 solution of `-div(A grad u) = f` in the mesh box with
/// `u = g` on its boundary.
pub fn solve_dirichlet(
    mesh: &Mesh,
    a: &dyn Conductivity,
    f: &dyn Fn(&[f64]) -> f64,
    g: &dyn Fn(&[f64]) -> f64,
) -> Result<FemSolution> {
    let mut values: Vec<f64> = vec![0.0; mesh.num_nodes()];
    for (n, v) in values.iter_mut().enumerate() {
        if mesh.is_boundary(n) {
            *v = g(&mesh.node(n)[..mesh.dim()]);
        }
    }
    if mesh.dim() == 1 {
        solve_dirichlet_1d(mesh, a, f, &mut values)?;
    } else {
        solve_dirichlet_2d(mesh, a, f, &mut values)?;
    }
    if let Some(n) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            at: format!("fem node {n}"),
        });
    }
    Ok(FemSolution {
        mesh: mesh.clone(),
        values,
        bc: BoundaryKind::Dirichlet,
    })
}

fn solve_dirichlet_1d(
    mesh: &Mesh,
    a: &dyn Conductivity,
    f: &dyn Fn(&[f64]) -> f64,
    values: &mut [f64],
) -> Result<()> {
    let n = mesh.cells[0];
    if n < 2 {
        return Ok(());
    }
    let m = n - 1;
    let (mut lower, mut diag, mut upper, mut rhs) =
        (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let (g0, g1) = (values[0], values[n]);
    for_each_element(mesh, a, Some(f), |el| {
        let i = el.nodes[0];
        let k = el.stiffness(0, 0);
        // interior unknown for node j is j - 1
        if i >= 1 {
            diag[i - 1] += k;
            rhs[i - 1] += el.load[0];
        }
        if i + 1 <= m {
            diag[i] += k;
            rhs[i] += el.load[1];
        }
        if i >= 1 && i + 1 <= m {
            upper[i - 1] -= k;
            lower[i] -= k;
        }
        if i == 0 && m >= 1 {
            rhs[0] += k * g0;
        }
        if i + 1 == n && m >= 1 {
            rhs[m - 1] += k * g1;
        }
    })?;
    let u = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
    values[1..n].copy_from_slice(&u);
    Ok(())
}

/// Stiffness matrix and load over the interior nodes of a 2D mesh; boundary
/// values in `values` are moved to the right-hand side.
fn assemble_dirichlet_2d(
    mesh: &Mesh,
    a: &dyn Conductivity,
    f: &dyn Fn(&[f64]) -> f64,
    values: &[f64],
) -> Result<(CsrMatrix, Vec<f64>)> {
    let (nx, ny) = (mesh.cells[0], mesh.cells[1]);
    let dof = |node: usize| -> Option<usize> {
        let (i, j) = mesh.grid_position(node);
        (i >= 1 && i < nx && j >= 1 && j < ny).then(|| (i - 1) + (j - 1) * (nx - 1))
    };
    let n = (nx - 1) * (ny - 1);
    let mut k = structured_pattern(nx - 1, ny - 1, false);
    let mut rhs = vec![0.0; n];
    for_each_element(mesh, a, Some(f), |el| {
        for r in 0..3 {
            let Some(i) = dof(el.nodes[r]) else { continue };
            rhs[i] += el.load[r];
            for c in 0..3 {
                let kv = el.stiffness(r, c);
                match dof(el.nodes[c]) {
                    Some(j) => k.add(i, j, kv),
                    None => rhs[i] -= kv * values[el.nodes[c]],
                }
            }
        }
    })?;
    debug_assert!(k.asymmetry() < 1e-12);
    Ok((k, rhs))
}

fn solve_dirichlet_2d(
    mesh: &Mesh,
    a: &dyn Conductivity,
    f: &dyn Fn(&[f64]) -> f64,
    values: &mut [f64],
) -> Result<()> {
    let (nx, ny) = (mesh.cells[0], mesh.cells[1]);
    if nx < 2 || ny < 2 {
        return Ok(());
    }
    let n = (nx - 1) * (ny - 1);
    let (k, rhs) = assemble_dirichlet_2d(mesh, a, f, values)?;
    let mg = Multigrid::structured(k.clone(), nx, ny)?;
    let out = pcg(
        &k,
        &rhs,
        &mg,
        CgOptions {
            tol: DIRICHLET_TOL,
            max_iters: 500,
            constant_nullspace: false,
        },
    )?;
    log::debug!(
        "dirichlet solve: {n} unknowns, {} levels, {} iterations",
        mg.num_levels(),
        out.iterations
    );
    for j in 1..ny {
        for i in 1..nx {
            values[mesh.index(i, j)] = out.x[(i - 1) + (j - 1) * (nx - 1)];
        }
    }
    Ok(())
}

/// Sparsity of the 7-point stencil of the structured triangulation on an
/// `mx * my` grid of unknowns, optionally wrapped periodically.
fn structured_pattern(mx: usize, my: usize, periodic: bool) -> CsrMatrix {
    let offsets: [(i64, i64); 7] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)];
    let mut rows = Vec::with_capacity(mx * my);
    for j in 0..my as i64 {
        for i in 0..mx as i64 {
            let mut row = Vec::with_capacity(7);
            for (di, dj) in offsets {
                let (mut ii, mut jj) = (i + di, j + dj);
                if periodic {
                    ii = ii.rem_euclid(mx as i64);
                    jj = jj.rem_euclid(my as i64);
                } else if ii < 0 || jj < 0 || ii >= mx as i64 || jj >= my as i64 {
                    continue;
                }
                row.push((ii + jj * mx as i64) as u32);
            }
            rows.push(row);
        }
    }
    CsrMatrix::from_pattern(mx * my, mx * my, rows)
}

/// Periodic dof of a node: the last node along each axis is identified with
/// the first.
fn periodic_dof(mesh: &Mesh, node: usize) -> usize {
    let (i, j) = mesh.grid_position(node);
    let nx = mesh.cells[0];
    if mesh.dim() == 1 {
        i % nx
    } else {
        (i % nx) + (j % mesh.cells[1]) * nx
    }
}

/// Corrector `chi` of the periodic cell problem
/// `-div(A (e_direction + grad chi)) = 0` on the cell box of `cell_mesh`,
/// normalized to zero mean.
pub fn solve_cell_problem(
    cell_mesh: &Mesh,
    a: &dyn Conductivity,
    direction: usize,
) -> Result<FemSolution> {
    let dim = cell_mesh.dim();
    if direction >= dim {
        return Err(Error::Usage(format!(
            "direction {direction} out of range for a {dim}D cell"
        )));
    }
    if cell_mesh.cells.iter().any(|&n| n < 2) {
        return Err(Error::Config("cell mesh needs at least 2 elements per axis".into()));
    }
    if dim == 1 {
        return solve_cell_problem_1d(cell_mesh, a);
    }
    let (mx, my) = (cell_mesh.cells[0], cell_mesh.cells[1]);
    let n = mx * my;
    let mut k = structured_pattern(mx, my, true);
    let mut rhs = vec![0.0; n];
    let local = Element::local_count(dim);
    for_each_element(cell_mesh, a, None, |el| {
        for r in 0..local {
            let i = periodic_dof(cell_mesh, el.nodes[r]);
            rhs[i] -= el.measure * el.abar[direction] * el.grads[r][direction];
            for c in 0..local {
                k.add(i, periodic_dof(cell_mesh, el.nodes[c]), el.stiffness(r, c));
            }
        }
    })?;
    let out = pcg(
        &k,
        &rhs,
        &Jacobi::new(&k),
        CgOptions {
            tol: CELL_TOL,
            max_iters: 20 * n + 100,
            constant_nullspace: true,
        },
    )?;
    let mut chi = out.x;
    let mean = chi.iter().sum::<f64>() / n as f64;
    for v in &mut chi {
        *v -= mean;
    }
    let values = (0..cell_mesh.num_nodes())
        .map(|node| chi[periodic_dof(cell_mesh, node)])
        .collect();
    Ok(FemSolution {
        mesh: cell_mesh.clone(),
        values,
        bc: BoundaryKind::Periodic,
    })
}

/// The 1D periodic equations state that the element flux
/// `a_e (1 + (chi_{i+1} - chi_i) / h)` is one constant `q`; periodicity fixes
/// `q` as the discrete harmonic mean.
fn solve_cell_problem_1d(cell_mesh: &Mesh, a: &dyn Conductivity) -> Result<FemSolution> {
    let n = cell_mesh.cells[0];
    let h = cell_mesh.h(0);
    let mut inv = Vec::with_capacity(n);
    for i in 0..n {
        let m = [cell_mesh.lower[0] + (i as f64 + 0.5) * h];
        inv.push(1.0 / checked(a, &m, 1)?[0]);
    }
    let q = n as f64 / crate::homogenize::pairwise_sum(&inv);
    let mut values = Vec::with_capacity(n + 1);
    let mut chi = 0.0;
    values.push(chi);
    for r in &inv[..n - 1] {
        chi += h * (q * r - 1.0);
        values.push(chi);
    }
    let mean = crate::homogenize::pairwise_sum(&values) / n as f64;
    for v in &mut values {
        *v -= mean;
    }
    values.push(values[0]);
    Ok(FemSolution {
        mesh: cell_mesh.clone(),
        values,
        bc: BoundaryKind::Periodic,
    })
}

/// `(1/|box|) * integral of diag(A) (background + grad u)` over the mesh box,
/// with the same quadrature as the assembly.
pub fn mean_flux(sol: &FemSolution, a: &dyn Conductivity, background: [f64; 2]) -> Result<[f64; 2]> {
    let mesh = &sol.mesh;
    let dim = mesh.dim();
    let local = Element::local_count(dim);
    let mut acc = [0.0; 2];
    for_each_element(mesh, a, None, |el| {
        let mut grad = background;
        for r in 0..local {
            let u = sol.values[el.nodes[r]];
            grad[0] += u * el.grads[r][0];
            grad[1] += u * el.grads[r][1];
        }
        for k in 0..dim {
            acc[k] += el.measure * el.abar[k] * grad[k];
        }
    })?;
    let vol: f64 = (0..dim).map(|k| mesh.upper[k] - mesh.lower[k]).product();
    Ok([acc[0] / vol, acc[1] / vol])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn one(_: &[f64]) -> f64 {
        1.0
    }
    fn zero(_: &[f64]) -> f64 {
        0.0
    }

    #[test]
    fn dirichlet_stiffness_is_spd() {
        let mesh = Mesh::rectangle([0.0, 1.0], [1.5, 2.0], 7, 5).unwrap();
        let a = Diagonal(|x: &[f64]| [1.0 + 0.5 * (7.0 * x[0]).sin(), 2.0 + x[1] * x[0]]);
        let values: Vec<f64> = (0..mesh.num_nodes()).map(|n| mesh.node(n)[0]).collect();
        let (k, rhs) = assemble_dirichlet_2d(&mesh, &a, &one, &values).unwrap();
        assert_eq!(rhs.len(), 6 * 4);
        assert!(k.asymmetry() < 1e-12);
        assert!(crate::fem::sparse::DenseCholesky::factor(&k.to_dense()).is_ok());
    }

    #[test]
    fn parabola_1d() {
        let n = 64;
        let mesh = Mesh::interval(0.0, 1.0, n).unwrap();
        let s = solve_dirichlet(&mesh, &Isotropic(one), &|_| 2.0, &zero).unwrap();
        let h = 1.0 / n as f64;
        for (i, v) in s.values.iter().enumerate() {
            let x = i as f64 * h;
            assert!((v - x * (1.0 - x)).abs() < h * h);
        }
    }

    #[test]
    fn boundary_values_are_exact() {
        let mesh = Mesh::rectangle([1.0, 1.0], [2.0, 2.0], 8, 8).unwrap();
        let g = |x: &[f64]| x[0] * 0.3 + x[1].sin();
        let s = solve_dirichlet(&mesh, &Isotropic(|x: &[f64]| 1.0 + x[0]), &one, &g).unwrap();
        for n in 0..mesh.num_nodes() {
            if mesh.is_boundary(n) {
                assert_eq!(s.values[n], g(&mesh.node(n)));
            }
        }
    }

    fn order(errors: &[f64]) -> f64 {
        let k = errors.len() - 1;
        (errors[0] / errors[k]).log2() / k as f64
    }

    #[test]
    fn manufactured_order_1d() {
        // u = sin(pi x), A = 1 + x^2
        let a = Isotropic(|x: &[f64]| 1.0 + x[0] * x[0]);
        let f = |x: &[f64]| {
            let x = x[0];
            -(2.0 * x * PI * (PI * x).cos()) + (1.0 + x * x) * PI * PI * (PI * x).sin()
        };
        let exact = |x: &[f64]| (PI * x[0]).sin();
        let errs: Vec<f64> = [16, 32, 64, 128]
            .iter()
            .map(|&n| {
                let mesh = Mesh::interval(0.0, 1.0, n).unwrap();
                solve_dirichlet(&mesh, &a, &f, &zero).unwrap().l2_error(&exact)
            })
            .collect();
        let p = order(&errs);
        assert!((1.9..=2.1).contains(&p), "order {p}, errors {errs:?}");
    }

    #[test]
    fn manufactured_order_2d() {
        // u = sin(pi x) sin(pi y) on the unit square, A = diag(1 + x, 2 + y)
        let a = Diagonal(|x: &[f64]| [1.0 + x[0], 2.0 + x[1]]);
        let f = |x: &[f64]| {
            let (sx, cx) = (PI * x[0]).sin_cos();
            let (sy, cy) = (PI * x[1]).sin_cos();
            -(PI * cx * sy) + (1.0 + x[0]) * PI * PI * sx * sy - (PI * sx * cy)
                + (2.0 + x[1]) * PI * PI * sx * sy
        };
        let exact = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
        let errs: Vec<f64> = [16, 32, 64, 128]
            .iter()
            .map(|&n| {
                let mesh = Mesh::rectangle([0.0, 0.0], [1.0, 1.0], n, n).unwrap();
                solve_dirichlet(&mesh, &a, &f, &zero).unwrap().l2_error(&exact)
            })
            .collect();
        let p = order(&errs);
        assert!((1.9..=2.1).contains(&p), "order {p}, errors {errs:?}");
    }

    #[test]
    fn maximum_principle() {
        let mesh = Mesh::rectangle([0.0, 0.0], [1.0, 1.0], 32, 32).unwrap();
        let a = Isotropic(|x: &[f64]| 1.0 + 0.9 * (40.0 * x[0]).sin() * (30.0 * x[1]).cos());
        let s = solve_dirichlet(&mesh, &a, &|x| (x[0] - 0.3).max(0.0), &zero).unwrap();
        assert!(s.values.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn non_positive_coefficient_is_rejected() {
        let mesh = Mesh::interval(0.0, 1.0, 8).unwrap();
        let err = solve_dirichlet(&mesh, &Isotropic(|x: &[f64]| x[0] - 0.5), &one, &zero);
        assert!(matches!(err, Err(Error::Ellipticity { .. })));
    }

    #[test]
    fn constant_coefficient_has_zero_corrector() {
        let mesh = Mesh::rectangle([0.0, 0.0], [1.0, 1.0], 8, 8).unwrap();
        for dir in 0..2 {
            let chi = solve_cell_problem(&mesh, &Isotropic(|_: &[f64]| 3.0), dir).unwrap();
            assert!(chi.max_abs() < 1e-14);
        }
    }

    #[test]
    fn one_dimensional_flux_is_constant() {
        let n = 256;
        let mesh = Mesh::interval(0.0, 1.0, n).unwrap();
        let a = |y: f64| 1.0 / (2.0 + (2.0 * PI * y).sin());
        let chi = solve_cell_problem(&mesh, &Isotropic(|y: &[f64]| a(y[0])), 0).unwrap();
        let mean: f64 = chi.values[..n].iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-12);
        let h = 1.0 / n as f64;
        let flux: Vec<f64> = (0..n)
            .map(|i| a((i as f64 + 0.5) * h) * (1.0 + (chi.values[i + 1] - chi.values[i]) / h))
            .collect();
        for q in &flux {
            assert!((q - flux[0]).abs() < 1e-9 * flux[0].abs(), "{q} vs {}", flux[0]);
        }
        assert_eq!(chi.values[0], chi.values[n]);
    }

    #[test]
    fn separable_coefficient_has_zero_transverse_corrector() {
        let mesh = Mesh::rectangle([0.0, 0.0], [1.0, 1.0], 16, 16).unwrap();
        let a = Isotropic(|y: &[f64]| 2.0 + (2.0 * PI * y[0]).sin());
        let chi2 = solve_cell_problem(&mesh, &a, 1).unwrap();
        assert!(chi2.max_abs() < 1e-12);
        let chi1 = solve_cell_problem(&mesh, &a, 0).unwrap();
        assert!(chi1.max_abs() > 1e-3);
        let mean = chi1.values.iter().enumerate().filter(|&(n, _)| {
            let (i, j) = mesh.grid_position(n);
            i < 16 && j < 16
        });
        let m: f64 = mean.map(|(_, v)| v).sum::<f64>() / 256.0;
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn resolution_guard() {
        let mesh = Mesh::interval(0.0, 1.0, 64).unwrap();
        assert!(resolution_warning(&mesh, 1.0 / 8.0).is_none());
        assert!(resolution_warning(&mesh, 1.0 / 16.0).is_some());
    }
}
