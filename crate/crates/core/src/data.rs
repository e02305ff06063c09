//! Training data: samples of multiscale solutions, noise, collocation points
//! and the dataset file format.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FemSolution;

pub const MAX_NOISE_LEVEL: f64 = 0.2;
const FORMAT_TAG: &str = "glimit-dataset v1";

/// Where a sample set came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub fem_run: String,
    pub eps: f64,
    pub h: f64,
}

/// Observations `u(x_i)` at points of the domain; points are stored as
/// pairs with the second coordinate zero in 1D.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub dim: usize,
    pub points: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    pub noise_level: f64,
    pub seed: u64,
    pub origin: SampleOrigin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollocationSet {
    pub dim: usize,
    pub points: Vec<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollocationMode {
    Grid,
    UniformRandom,
}

/// `n` interior points per axis `a + (b - a) k / (n + 1)`, `k = 1..=n`.
fn interior_axis(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    (1..=n).map(move |k| a + (b - a) * k as f64 / (n + 1) as f64)
}

/// Uniform interior grid with `n` points in total; in 2D `n` must be a
/// perfect square.
pub fn interior_grid(lower: &[f64], upper: &[f64], n: usize) -> Result<Vec<[f64; 2]>> {
    match lower.len() {
        1 => {
            if n == 0 {
                return Err(Error::Config("need at least one grid point".into()));
            }
            Ok(interior_axis(lower[0], upper[0], n).map(|x| [x, 0.0]).collect())
        }
        2 => {
            let m = (n as f64).sqrt().round() as usize;
            if m == 0 || m * m != n {
                return Err(Error::Config(format!("2D grid size {n} is not a perfect square")));
            }
            let ys: Vec<f64> = interior_axis(lower[1], upper[1], m).collect();
            Ok(ys
                .iter()
                .flat_map(|&y| interior_axis(lower[0], upper[0], m).map(move |x| [x, y]))
                .collect())
        }
        d => Err(Error::Config(format!("unsupported dimension {d}"))),
    }
}

/// Samples the P1 interpolant of `solution` on the uniform interior grid.
pub fn sample_equispaced(solution: &FemSolution, n: usize, origin: SampleOrigin) -> Result<SampleSet> {
    let mesh = &solution.mesh;
    let dim = mesh.dim();
    if dim == 1 && n < 2 {
        return Err(Error::Config("need at least 2 samples in 1D".into()));
    }
    let points = interior_grid(&mesh.lower, &mesh.upper, n)?;
    let per_axis = if dim == 1 { n } else { (n as f64).sqrt().round() as usize };
    if (0..dim).any(|k| per_axis > mesh.cells[k]) {
        log::warn!("{n} samples exceed the mesh resolution {:?}", mesh.cells);
    }
    let values = points
        .iter()
        .map(|p| solution.eval(&p[..dim]).expect("interior point"))
        .collect();
    Ok(SampleSet {
        dim,
        points,
        values,
        noise_level: 0.0,
        seed: 0,
        origin,
    })
}

/// Adds `level * s * xi_i`, with `xi_i` standard normal and `s` the RMS of
/// the clean values.
pub fn add_noise(set: &SampleSet, level: f64, seed: u64) -> Result<SampleSet> {
    if !(0.0..=MAX_NOISE_LEVEL).contains(&level) {
        return Err(Error::Config(format!(
            "noise level {level} outside [0, {MAX_NOISE_LEVEL}]"
        )));
    }
    if set.noise_level != 0.0 {
        return Err(Error::Usage("sample set already carries noise".into()));
    }
    let mut out = set.clone();
    out.seed = seed;
    if level == 0.0 {
        return Ok(out);
    }
    let n = set.values.len().max(1) as f64;
    let rms = (set.values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let sigma = level * rms;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.values {
        let xi: f64 = rng.sample(StandardNormal);
        *v += sigma * xi;
    }
    out.noise_level = level;
    Ok(out)
}

/// Residual points strictly inside the box.
pub fn make_collocation(
    lower: &[f64],
    upper: &[f64],
    n: usize,
    mode: CollocationMode,
    seed: u64,
) -> Result<CollocationSet> {
    if n == 0 {
        return Err(Error::Config("need at least one collocation point".into()));
    }
    let dim = lower.len();
    let points = match mode {
        CollocationMode::Grid => interior_grid(lower, upper, n)?,
        CollocationMode::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |k: usize| loop {
                let x = rng.random_range(lower[k]..upper[k]);
                if x > lower[k] {
                    break x;
                }
            };
            (0..n)
                .map(|_| {
                    let x = draw(0);
                    let y = if dim == 2 { draw(1) } else { 0.0 };
                    [x, y]
                })
                .collect()
        }
    };
    Ok(CollocationSet { dim, points })
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# {FORMAT_TAG}; eps={}; h={}; noise={}; seed={}; fem={}\n",
            self.origin.eps, self.origin.h, self.noise_level, self.seed, self.origin.fem_run
        );
        s.push_str(if self.dim == 1 { "x,u\n" } else { "x1,x2,u\n" });
        for (p, v) in self.points.iter().zip(&self.values) {
            if self.dim == 1 {
                let _ = writeln!(s, "{},{}", p[0], v);
            } else {
                let _ = writeln!(s, "{},{},{}", p[0], p[1], v);
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty file")?;
        let meta = header
            .strip_prefix("# ")
            .and_then(|h| h.strip_prefix(FORMAT_TAG))
            .ok_or("missing dataset header")?;
        let field = |key: &str| -> std::result::Result<&str, String> {
            meta.split(';')
                .filter_map(|kv| kv.trim().split_once('='))
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v)
                .ok_or(format!("header lacks {key}"))
        };
        let num = |key: &str| -> std::result::Result<f64, String> {
            field(key)?.parse().map_err(|e| format!("{key}: {e}"))
        };
        let origin = SampleOrigin {
            fem_run: field("fem").unwrap_or("").to_string(),
            eps: num("eps")?,
            h: num("h")?,
        };
        let noise_level = num("noise")?;
        let seed: u64 = field("seed")?.parse().map_err(|e| format!("seed: {e}"))?;
        let dim = match lines.next().ok_or("missing column header")? {
            "x,u" => 1,
            "x1,x2,u" => 2,
            other => return Err(format!("unknown columns {other:?}")),
        };
        let (mut points, mut values) = (Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("row {}: {e}", k + 1))?;
            if cols.len() != dim + 1 {
                return Err(format!("row {} has {} columns", k + 1, cols.len()));
            }
            points.push(if dim == 1 { [cols[0], 0.0] } else { [cols[0], cols[1]] });
            values.push(cols[dim]);
        }
        Ok(SampleSet {
            dim,
            points,
            values,
            noise_level,
            seed,
            origin,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|r| Error::format(path, r))
    }
}

/// JSON manifest tying a dataset to its FEM run and configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub dataset: String,
    pub benchmark: String,
    pub fem_run: String,
    pub config_hash: String,
    pub eps: f64,
    pub h: f64,
    pub noise: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub dim: usize,
}

impl DatasetManifest {
    pub fn new(set: &SampleSet, dataset: &str, benchmark: &str, config_hash: &str) -> Self {
        DatasetManifest {
            format: FORMAT_TAG.to_string(),
            dataset: dataset.to_string(),
            benchmark: benchmark.to_string(),
            fem_run: set.origin.fem_run.clone(),
            config_hash: config_hash.to_string(),
            eps: set.origin.eps,
            h: set.origin.h,
            noise: set.noise_level,
            seed: set.seed,
            n_samples: set.len(),
            dim: set.dim,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{BoundaryKind, Mesh};
    use proptest::prelude::*;

    fn origin() -> SampleOrigin {
        SampleOrigin {
            fem_run: "run-1".into(),
            eps: 0.125,
            h: 1.0 / 64.0,
        }
    }

    fn linear_1d() -> FemSolution {
        let mesh = Mesh::interval(0.0, 1.0, 8).unwrap();
        FemSolution {
            values: (0..9).map(|i| (i as f64 * 0.7).sin()).collect(),
            mesh,
            bc: BoundaryKind::Dirichlet,
        }
    }

    #[test]
    fn interior_points_1d() {
        let s = sample_equispaced(&linear_1d(), 3, origin()).unwrap();
        let xs: Vec<f64> = s.points.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.25, 0.5, 0.75]);
        // 0.25 and 0.5 and 0.75 are mesh nodes 2, 4, 6
        let sol = linear_1d();
        assert_eq!(s.values, vec![sol.values[2], sol.values[4], sol.values[6]]);
    }

    #[test]
    fn grid_2d() {
        let g = interior_grid(&[1.0, 1.0], &[2.0, 2.0], 1600).unwrap();
        assert_eq!(g.len(), 1600);
        assert!(g.iter().all(|p| p[0] > 1.0 && p[0] < 2.0 && p[1] > 1.0 && p[1] < 2.0));
        assert!((g[0][0] - (1.0 + 1.0 / 41.0)).abs() < 1e-15);
        assert!(interior_grid(&[1.0, 1.0], &[2.0, 2.0], 1601).is_err());
        let c = make_collocation(&[1.0, 1.0], &[2.0, 2.0], 1600, CollocationMode::Grid, 0).unwrap();
        assert_eq!(c.points, g);
        let c = make_collocation(&[0.0], &[1.0], 190, CollocationMode::Grid, 0).unwrap();
        assert_eq!(c.points.len(), 190);
    }

    #[test]
    fn random_collocation_is_interior_and_seeded() {
        let a = make_collocation(&[1.0, 1.0], &[2.0, 2.0], 500, CollocationMode::UniformRandom, 4).unwrap();
        let b = make_collocation(&[1.0, 1.0], &[2.0, 2.0], 500, CollocationMode::UniformRandom, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.points.iter().all(|p| p[0] > 1.0 && p[0] < 2.0 && p[1] > 1.0 && p[1] < 2.0));
    }

    #[test]
    fn noise_statistics() {
        let n = 100_000;
        let set = SampleSet {
            dim: 1,
            points: (0..n).map(|i| [i as f64 / n as f64, 0.0]).collect(),
            values: (0..n).map(|i| 1.0 + (i as f64 * 0.01).sin()).collect(),
            noise_level: 0.0,
            seed: 0,
            origin: origin(),
        };
        let rms = (set.values.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        let noisy = add_noise(&set, 0.05, 17).unwrap();
        let d: Vec<f64> = noisy.values.iter().zip(&set.values).map(|(a, b)| a - b).collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        assert!((sd - 0.05 * rms).abs() < 0.05 * 0.05 * rms);
        assert!(mean.abs() < 3.0 * 0.05 * rms / (n as f64).sqrt());
        assert_eq!(add_noise(&set, 0.05, 17).unwrap(), noisy);
        assert_eq!(add_noise(&set, 0.0, 17).unwrap().values, set.values);
        assert!(add_noise(&set, 0.3, 1).is_err());
        assert!(add_noise(&noisy, 0.01, 1).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let s = sample_equispaced(&linear_1d(), 5, origin()).unwrap();
        let m = DatasetManifest::new(&s, "data.csv", "locper1d", "abc");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(DatasetManifest::load(&p).unwrap(), m);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(SampleSet::from_csv("x,u\n1,2\n").is_err());
        let ok = sample_equispaced(&linear_1d(), 3, origin()).unwrap().to_csv();
        assert!(SampleSet::from_csv(&ok.replace("0.5,", "0.5;")).is_err());
    }

    proptest! {
        #[test]
        fn csv_roundtrip_is_bit_identical(
            pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -1e6f64..1e6), 1..40),
            two_d in any::<bool>(),
            eps in 1e-6f64..1.0,
            noise in 0.0f64..0.2,
            seed in any::<u64>(),
        ) {
            let dim = if two_d { 2 } else { 1 };
            let set = SampleSet {
                dim,
                points: pts.iter().map(|&(x, y, _)| [x, if two_d { y } else { 0.0 }]).collect(),
                values: pts.iter().map(|p| p.2).collect(),
                noise_level: noise,
                seed,
                origin: SampleOrigin { fem_run: "r".into(), eps, h: eps / 7.0 },
            };
            let back = SampleSet::from_csv(&set.to_csv()).unwrap();
            prop_assert_eq!(back.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            set.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, set);
        }
    }
}
