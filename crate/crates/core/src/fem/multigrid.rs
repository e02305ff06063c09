//! Geometric multigrid V-cycle for Dirichlet problems on structured
//! triangulations, used as a CG preconditioner.
//!
//! Coarse operators are Galerkin products `P^T A P` with the nested P1
//! interpolation. Pre-smoothing is forward Gauss-Seidel and post-smoothing
//! is backward Gauss-Seidel, so the cycle is a symmetric operator.

use super::sparse::{CsrMatrix, DenseCholesky, Preconditioner};
use crate::error::Result;

struct Level {
    a: CsrMatrix,
    inv_diag: Vec<f64>,
    /// Interpolation from the next coarser level.
    p: Option<CsrMatrix>,
    r: Option<CsrMatrix>,
}

pub struct Multigrid {
    levels: Vec<Level>,
    coarse: DenseCholesky,
    sweeps: usize,
}

const MAX_COARSE: usize = 400;

/// Nested P1 interpolation from an `(nx/2, ny/2)` grid to an `(nx, ny)` grid,
/// interior nodes only.
fn prolongation(nx: usize, ny: usize) -> CsrMatrix {
    let (cx, cy) = (nx / 2, ny / 2);
    let fine = |i: usize, j: usize| (i - 1) + (j - 1) * (nx - 1);
    let coarse = |i: usize, j: usize| -> Option<usize> {
        (i >= 1 && i < cx && j >= 1 && j < cy).then(|| (i - 1) + (j - 1) * (cx - 1))
    };
    let mut t = Vec::new();
    for j in 1..ny {
        for i in 1..nx {
            let row = fine(i, j);
            let parents: Vec<(usize, usize)> = match (i % 2, j % 2) {
                (0, 0) => vec![(i / 2, j / 2)],
                (1, 0) => vec![((i - 1) / 2, j / 2), ((i + 1) / 2, j / 2)],
                (0, 1) => vec![(i / 2, (j - 1) / 2), (i / 2, (j + 1) / 2)],
                _ => vec![((i - 1) / 2, (j - 1) / 2), ((i + 1) / 2, (j + 1) / 2)],
            };
            let w = 1.0 / parents.len() as f64;
            for (ci, cj) in parents {
                if let Some(c) = coarse(ci, cj) {
                    t.push((row, c, w));
                }
            }
        }
    }
    CsrMatrix::from_triplets((nx - 1) * (ny - 1), (cx - 1) * (cy - 1), &t)
}

fn inv_diag(a: &CsrMatrix) -> Vec<f64> {
    a.diagonal().into_iter().map(|d| 1.0 / d).collect()
}

impl Multigrid {
    /// `a` is the interior-node operator of an `(nx, ny)`-cell grid, with
    /// unknown `(i, j)` at index `(i - 1) + (j - 1)(nx - 1)`.
    pub fn structured(a: CsrMatrix, nx: usize, ny: usize) -> Result<Self> {
        let mut levels = Vec::new();
        let (mut nx, mut ny) = (nx, ny);
        let mut a = a;
        while a.nrows > MAX_COARSE && nx % 2 == 0 && ny % 2 == 0 && nx >= 4 && ny >= 4 {
            let p = prolongation(nx, ny);
            let r = p.transpose();
            let ac = r.matmul(&a.matmul(&p));
            levels.push(Level {
                inv_diag: inv_diag(&a),
                a,
                p: Some(p),
                r: Some(r),
            });
            a = ac;
            nx /= 2;
            ny /= 2;
        }
        let coarse = DenseCholesky::factor(&a.to_dense())?;
        levels.push(Level {
            inv_diag: inv_diag(&a),
            a,
            p: None,
            r: None,
        });
        Ok(Multigrid {
            levels,
            coarse,
            sweeps: 2,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    fn gauss_seidel(level: &Level, b: &[f64], x: &mut [f64], forward: bool) {
        let a = &level.a;
        let n = a.nrows;
        let mut step = |i: usize| {
            let mut s = b[i];
            for k in a.indptr[i]..a.indptr[i + 1] {
                let j = a.indices[k] as usize;
                if j != i {
                    s -= a.data[k] * x[j];
                }
            }
            x[i] = s * level.inv_diag[i];
        };
        if forward {
            (0..n).for_each(&mut step);
        } else {
            (0..n).rev().for_each(&mut step);
        }
    }

    fn cycle(&self, l: usize, b: &[f64]) -> Vec<f64> {
        let level = &self.levels[l];
        let (Some(p), Some(r)) = (&level.p, &level.r) else {
            return self.coarse.solve(b);
        };
        let mut x = vec![0.0; b.len()];
        for _ in 0..self.sweeps {
            Self::gauss_seidel(level, b, &mut x, true);
        }
        let ax = level.a.matvec(&x);
        let res: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let xc = self.cycle(l + 1, &r.matvec(&res));
        for (x, c) in x.iter_mut().zip(p.matvec(&xc)) {
            *x += c;
        }
        for _ in 0..self.sweeps {
            Self::gauss_seidel(level, b, &mut x, false);
        }
        x
    }
}

impl Preconditioner for Multigrid {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(&self.cycle(0, r));
    }
}
