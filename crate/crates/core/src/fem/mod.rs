//! P1 finite elements on structured meshes of intervals and boxes.

pub mod multigrid;
mod solve;
pub mod sparse;

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use solve::{
    mean_flux, resolution_warning, solve_cell_problem, solve_dirichlet, Conductivity, Diagonal,
    Isotropic,
};
pub use sparse::{conjugate_gradient, CsrMatrix, SparseSystem};

/// Uniform structured mesh of `[lower, upper]` in one or two dimensions.
/// Two-dimensional cells are split into two triangles along the diagonal
/// from `(i, j)` to `(i + 1, j + 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

impl Mesh {
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Self> {
        Self::new(vec![a], vec![b], vec![n])
    }

    pub fn rectangle(lower: [f64; 2], upper: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        Self::new(lower.to_vec(), upper.to_vec(), vec![nx, ny])
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if !(1..=2).contains(&d) || upper.len() != d || cells.len() != d {
            return Err(Error::Config("mesh must be 1D or 2D".into()));
        }
        if cells.iter().any(|&n| n == 0) || lower.iter().zip(&upper).any(|(a, b)| b <= a) {
            return Err(Error::Config(format!(
                "degenerate mesh {lower:?}..{upper:?} with {cells:?} cells"
            )));
        }
        Ok(Mesh { lower, upper, cells })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn h(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    pub fn nodes_per_axis(&self, axis: usize) -> usize {
        self.cells[axis] + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.cells.iter().map(|n| n + 1).product()
    }

    pub fn num_elements(&self) -> usize {
        let c: usize = self.cells.iter().product();
        if self.dim() == 1 {
            c
        } else {
            2 * c
        }
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix + iy * (self.cells[0] + 1)
    }

    #[inline]
    pub fn grid_position(&self, node: usize) -> (usize, usize) {
        let nx = self.cells[0] + 1;
        (node % nx, node / nx)
    }

    pub fn node(&self, node: usize) -> [f64; 2] {
        let (ix, iy) = self.grid_position(node);
        let x = self.lower[0] + ix as f64 * self.h(0);
        if self.dim() == 1 {
            [x, 0.0]
        } else {
            [x, self.lower[1] + iy as f64 * self.h(1)]
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let (ix, iy) = self.grid_position(node);
        let edge_x = ix == 0 || ix == self.cells[0];
        if self.dim() == 1 {
            edge_x
        } else {
            edge_x || iy == 0 || iy == self.cells[1]
        }
    }

    /// Node triples of all triangles (2D) or node pairs (1D, third entry
    /// repeated).
    pub fn elements(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let nx = self.cells[0];
        let ny = if self.dim() == 1 { 1 } else { self.cells[1] };
        let two_d = self.dim() == 2;
        (0..ny).flat_map(move |j| {
            (0..nx).flat_map(move |i| {
                if two_d {
                    let n00 = self.index(i, j);
                    let n10 = self.index(i + 1, j);
                    let n11 = self.index(i + 1, j + 1);
                    let n01 = self.index(i, j + 1);
                    vec![[n00, n10, n11], [n00, n11, n01]]
                } else {
                    vec![[i, i + 1, i + 1]]
                }
            })
        })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim()).all(|k| x[k] >= self.lower[k] - 1e-12 && x[k] <= self.upper[k] + 1e-12)
    }

    /// Cell index along `axis` containing coordinate `x`, and the local
    /// coordinate in `[0, 1]`.
    fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let t = (x - self.lower[axis]) / self.h(axis);
        let n = self.cells[axis];
        let i = (t.floor().max(0.0) as usize).min(n - 1);
        (i, (t - i as f64).clamp(0.0, 1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Dirichlet,
    Periodic,
}

/// Nodal P1 solution on a [`Mesh`].
#[derive(Clone, Debug, PartialEq)]
pub struct FemSolution {
    pub mesh: Mesh,
    pub values: Vec<f64>,
    pub bc: BoundaryKind,
}

const BINARY_MAGIC: &[u8; 8] = b"GLFEM01\0";

impl FemSolution {
    /// P1 interpolant at `x`; `None` outside the mesh box.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        if !self.mesh.contains(x) {
            return None;
        }
        let (i, s) = self.mesh.locate(0, x[0]);
        if self.mesh.dim() == 1 {
            return Some(self.values[i] * (1.0 - s) + self.values[i + 1] * s);
        }
        let (j, t) = self.mesh.locate(1, x[1]);
        let m = &self.mesh;
        let u00 = self.values[m.index(i, j)];
        let u11 = self.values[m.index(i + 1, j + 1)];
        Some(if s >= t {
            let u10 = self.values[m.index(i + 1, j)];
            u00 + s * (u10 - u00) + t * (u11 - u10)
        } else {
            let u01 = self.values[m.index(i, j + 1)];
            u00 + t * (u01 - u00) + s * (u11 - u01)
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `L2` norm of `u_h - exact` by a degree-5 (1D) / degree-4 (2D) rule
    /// per element.
    pub fn l2_error(&self, exact: &dyn Fn(&[f64]) -> f64) -> f64 {
        let m = &self.mesh;
        let mut acc = 0.0;
        if m.dim() == 1 {
            // three-point Gauss
            let gp = [
                (0.5 - 0.5 * (0.6f64).sqrt(), 5.0 / 18.0),
                (0.5, 8.0 / 18.0),
                (0.5 + 0.5 * (0.6f64).sqrt(), 5.0 / 18.0),
            ];
            let h = m.h(0);
            for i in 0..m.cells[0] {
                let x0 = m.lower[0] + i as f64 * h;
                for &(s, w) in &gp {
                    let uh = self.values[i] * (1.0 - s) + self.values[i + 1] * s;
                    let e = uh - exact(&[x0 + s * h]);
                    acc += w * h * e * e;
                }
            }
        } else {
            // six-point symmetric rule of degree 4
            let area = 0.5 * m.h(0) * m.h(1);
            let a = 0.445948490915965;
            let b = 0.091576213509771;
            let wa = 0.223381589678011;
            let wb = 0.109951743655322;
            let bary = [
                ([1.0 - 2.0 * a, a, a], wa),
                ([a, 1.0 - 2.0 * a, a], wa),
                ([a, a, 1.0 - 2.0 * a], wa),
                ([1.0 - 2.0 * b, b, b], wb),
                ([b, 1.0 - 2.0 * b, b], wb),
                ([b, b, 1.0 - 2.0 * b], wb),
            ];
            for tri in m.elements() {
                let p = tri.map(|n| m.node(n));
                let u = tri.map(|n| self.values[n]);
                for (l, w) in &bary {
                    let x = [
                        l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                        l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
                    ];
                    let uh = l[0] * u[0] + l[1] * u[1] + l[2] * u[2];
                    let e = uh - exact(&x);
                    acc += w * area * e * e;
                }
            }
        }
        acc.sqrt()
    }

    /// CSV with one row per node: coordinates then value.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = if self.mesh.dim() == 1 { "x,value" } else { "x1,x2,value" };
        let io = |e| Error::io(path, e);
        writeln!(w, "{header}").map_err(io)?;
        for (n, v) in self.values.iter().enumerate() {
            let x = self.mesh.node(n);
            if self.mesh.dim() == 1 {
                writeln!(w, "{},{}", x[0], v).map_err(io)?;
            } else {
                writeln!(w, "{},{},{}", x[0], x[1], v).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Little-endian dump: magic, dimension, bounds, cell counts, boundary
    /// kind, node count, nodal values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.mesh;
        let mut out = Vec::with_capacity(64 + 8 * self.values.len());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
        for k in 0..m.dim() {
            out.extend_from_slice(&m.lower[k].to_le_bytes());
            out.extend_from_slice(&m.upper[k].to_le_bytes());
            out.extend_from_slice(&(m.cells[k] as u64).to_le_bytes());
        }
        out.push(match self.bc {
            BoundaryKind::Dirichlet => 0,
            BoundaryKind::Periodic => 1,
        });
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            if r.len() < n {
                return Err("truncated".into());
            }
            let (a, b) = r.split_at(n);
            r = b;
            Ok(a)
        };
        if take(8)? != BINARY_MAGIC {
            return Err("bad magic".into());
        }
        let u64_of = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
        let f64_of = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
        let dim = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        if !(1..=2).contains(&dim) {
            return Err(format!("bad dimension {dim}"));
        }
        let (mut lower, mut upper, mut cells) = (vec![], vec![], vec![]);
        for _ in 0..dim {
            lower.push(f64_of(take(8)?));
            upper.push(f64_of(take(8)?));
            cells.push(u64_of(take(8)?) as usize);
        }
        let bc = match take(1)?[0] {
            0 => BoundaryKind::Dirichlet,
            1 => BoundaryKind::Periodic,
            k => return Err(format!("bad boundary kind {k}")),
        };
        let n = u64_of(take(8)?) as usize;
        let mesh = Mesh::new(lower, upper, cells).map_err(|e| e.to_string())?;
        if n != mesh.num_nodes() {
            return Err(format!("node count {n} does not match mesh"));
        }
        let raw = take(8 * n)?;
        let values = raw.chunks_exact(8).map(f64_of).collect();
        Ok(FemSolution { mesh, values, bc })
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|r| Error::format(path, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_counts_and_boundary() {
        let m = Mesh::rectangle([1.0, 1.0], [2.0, 2.0], 4, 3).unwrap();
        assert_eq!(m.num_nodes(), 20);
        assert_eq!(m.num_elements(), 24);
        assert_eq!(m.elements().count(), 24);
        let nb = (0..m.num_nodes()).filter(|&n| m.is_boundary(n)).count();
        assert_eq!(nb, 20 - 3 * 2);
        for t in m.elements() {
            let p = t.map(|n| m.node(n));
            let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            assert!(det > 0.0);
        }
        assert!(Mesh::interval(1.0, 0.0, 4).is_err());
    }

    #[test]
    fn interpolation_at_nodes_is_exact() {
        let m = Mesh::rectangle([0.0, 0.0], [1.0, 2.0], 3, 5).unwrap();
        let values: Vec<f64> = (0..m.num_nodes()).map(|n| (n as f64 * 0.37).sin()).collect();
        let s = FemSolution {
            mesh: m.clone(),
            values: values.clone(),
            bc: BoundaryKind::Dirichlet,
        };
        for n in 0..m.num_nodes() {
            assert!((s.eval(&m.node(n)[..]).unwrap() - values[n]).abs() < 1e-14);
        }
        // linear functions are reproduced everywhere
        let lin: Vec<f64> = (0..m.num_nodes()).map(|n| { let x = m.node(n); 2.0 * x[0] - x[1] + 0.5 }).collect();
        let s = FemSolution { mesh: m, values: lin, bc: BoundaryKind::Dirichlet };
        let v = s.eval(&[0.41, 1.13]).unwrap();
        assert!((v - (0.82 - 1.13 + 0.5)).abs() < 1e-14);
        assert!(s.eval(&[1.5, 0.0]).is_none());
    }

    #[test]
    fn binary_roundtrip() {
        let m = Mesh::interval(0.0, 1.0, 7).unwrap();
        let s = FemSolution {
            values: (0..8).map(|i| i as f64 / 3.0).collect(),
            mesh: m,
            bc: BoundaryKind::Periodic,
        };
        assert_eq!(FemSolution::from_bytes(&s.to_bytes()).unwrap(), s);
        assert!(FemSolution::from_bytes(&s.to_bytes()[..20]).is_err());
    }
}
