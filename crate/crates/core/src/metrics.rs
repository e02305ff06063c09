//! Relative `L2` errors on evaluation grids and the run error report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform tensor grid including the boundary, with trapezoid weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Intervals per axis.
    pub intervals: Vec<usize>,
}

impl EvalGrid {
    /// Grid with spacing closest to `h` on every axis.
    pub fn with_spacing(lower: &[f64], upper: &[f64], h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("grid spacing {h} must be positive")));
        }
        let intervals = lower
            .iter()
            .zip(upper)
            .map(|(a, b)| (((b - a) / h).round() as usize).max(1))
            .collect();
        Ok(EvalGrid {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            intervals,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.intervals[axis] as f64
    }

    fn axis(&self, k: usize) -> Vec<(f64, f64)> {
        let n = self.intervals[k];
        let h = self.spacing(k);
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 * h } else { h };
                (self.lower[k] + h * i as f64, w)
            })
            .collect()
    }

    /// Points (second coordinate zero in 1D) and trapezoid weights.
    pub fn points_and_weights(&self) -> (Vec<[f64; 2]>, Vec<f64>) {
        let ax = self.axis(0);
        if self.dim() == 1 {
            return ax.iter().map(|&(x, w)| ([x, 0.0], w)).unzip();
        }
        let ay = self.axis(1);
        ay.iter()
            .flat_map(|&(y, wy)| ax.iter().map(move |&(x, wx)| ([x, y], wx * wy)))
            .unzip()
    }

    pub fn len(&self) -> usize {
        self.intervals.iter().map(|n| n + 1).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `||est - reference|| / ||reference||` with weights `w`; each row holds the
/// field entries at one point and entries are aggregated in the Frobenius
/// sense.
pub fn relative_l2_values(est: &[Vec<f64>], reference: &[Vec<f64>], w: &[f64]) -> Result<f64> {
    if est.len() != reference.len() || est.len() != w.len() {
        return Err(Error::Usage("relative L2: length mismatch".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((e, r), w) in est.iter().zip(reference).zip(w) {
        if e.len() != r.len() {
            return Err(Error::Usage("relative L2: entry count mismatch".into()));
        }
        for (a, b) in e.iter().zip(r) {
            num += w * (a - b) * (a - b);
            den += w * b * b;
        }
    }
    if !(den > 0.0) {
        return Err(Error::Usage("relative L2: reference has zero norm".into()));
    }
    let v = (num / den).sqrt();
    if !v.is_finite() {
        return Err(Error::NonFinite {
            at: "relative L2 error".into(),
        });
    }
    Ok(v)
}

/// Relative `L2` error of two evaluable fields on `grid`.
pub fn relative_l2(
    est: &dyn Fn(&[f64]) -> Vec<f64>,
    reference: &dyn Fn(&[f64]) -> Vec<f64>,
    grid: &EvalGrid,
) -> Result<f64> {
    let (pts, w) = grid.points_and_weights();
    let d = grid.dim();
    let e: Vec<Vec<f64>> = pts.iter().map(|p| est(&p[..d])).collect();
    let r: Vec<Vec<f64>> = pts.iter().map(|p| reference(&p[..d])).collect();
    relative_l2_values(&e, &r, &w)
}

/// Errors of one training run with the provenance needed to interpret them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub benchmark: String,
    pub e_glimit: f64,
    pub e_solution: f64,
    pub glimit_grid: EvalGrid,
    pub solution_grid: EvalGrid,
    pub glimit_reference: String,
    pub solution_reference: String,
    pub eps: f64,
    pub noise: f64,
    pub n_data: usize,
    pub n_colloc: usize,
    pub seed: u64,
    pub config_hash: String,
    pub best_restart: usize,
    pub final_loss: f64,
}

impl ErrorReport {
    pub const CSV_HEADER: &'static str =
        "benchmark,eps,noise,n_data,n_colloc,seed,e_glimit,e_solution,glimit_h,solution_h,glimit_reference,config_hash";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.benchmark,
            self.eps,
            self.noise,
            self.n_data,
            self.n_colloc,
            self.seed,
            self.e_glimit,
            self.e_solution,
            self.glimit_grid.spacing(0),
            self.solution_grid.spacing(0),
            self.glimit_reference,
            self.config_hash
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, json: &Path, csv: &Path) -> Result<()> {
        std::fs::write(json, self.to_json()?).map_err(|e| Error::io(json, e))?;
        let text = format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row());
        std::fs::write(csv, text).map_err(|e| Error::io(csv, e))
    }

    pub fn load(json: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(json).map_err(|e| Error::io(json, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(json, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> EvalGrid {
        EvalGrid::with_spacing(&[0.0], &[1.0], 0.01).unwrap()
    }

    #[test]
    fn examples() {
        let g = unit();
        let f = |x: &[f64]| vec![1.0 + x[0] * x[0]];
        assert_eq!(relative_l2(&f, &f, &g).unwrap(), 0.0);
        let two = |x: &[f64]| vec![2.0 * (1.0 + x[0] * x[0])];
        assert!((relative_l2(&two, &f, &g).unwrap() - 1.0).abs() < 1e-15);
        let one = |_: &[f64]| vec![1.0];
        let off = |_: &[f64]| vec![1.1];
        assert!((relative_l2(&off, &one, &g).unwrap() - 0.1).abs() < 1e-14);
        let zero = |_: &[f64]| vec![0.0];
        assert!(relative_l2(&one, &zero, &g).is_err());
    }

    #[test]
    fn grid_weights_integrate_constants() {
        let g = EvalGrid::with_spacing(&[1.0, 1.0], &[2.0, 2.0], 1.0 / 128.0).unwrap();
        let (p, w) = g.points_and_weights();
        assert_eq!(p.len(), 129 * 129);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frobenius_aggregation() {
        let est = vec![vec![1.0, 2.0]];
        let r = vec![vec![1.0, 1.0]];
        let v = relative_l2_values(&est, &r, &[1.0]).unwrap();
        assert!((v - (1.0f64 / 2.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn refinement_is_stable_for_smooth_fields() {
        let f = |x: &[f64]| vec![(3.0 * x[0]).sin() + 2.0];
        let r = |x: &[f64]| vec![x[0].exp()];
        let a = relative_l2(&f, &r, &EvalGrid::with_spacing(&[0.0], &[1.0], 0.02).unwrap()).unwrap();
        let b = relative_l2(&f, &r, &EvalGrid::with_spacing(&[0.0], &[1.0], 0.01).unwrap()).unwrap();
        assert!((a - b).abs() < 0.01 * b);
    }

    #[test]
    fn report_roundtrip() {
        let rep = ErrorReport {
            benchmark: "locper1d".into(),
            e_glimit: 0.012345678901234567,
            e_solution: 1e-4,
            glimit_grid: unit(),
            solution_grid: unit(),
            glimit_reference: "analytic".into(),
            solution_reference: "fem".into(),
            eps: 1.0 / 128.0,
            noise: 0.0,
            n_data: 160,
            n_colloc: 190,
            seed: 1,
            config_hash: "abc".into(),
            best_restart: 2,
            final_loss: 3.5e-7,
        };
        let dir = tempfile::tempdir().unwrap();
        let (j, c) = (dir.path().join("r.json"), dir.path().join("r.csv"));
        rep.save(&j, &c).unwrap();
        assert_eq!(ErrorReport::load(&j).unwrap(), rep);
        let csv = std::fs::read_to_string(&c).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(
            csv.lines().nth(1).unwrap().split(',').count(),
            ErrorReport::CSV_HEADER.split(',').count()
        );
    }

    proptest! {
        #[test]
        fn scale_invariance(s in 1e-3f64..1e3, vals in prop::collection::vec((0.1f64..5.0, -5.0f64..5.0), 2..50)) {
            let w = vec![1.0; vals.len()];
            let est: Vec<Vec<f64>> = vals.iter().map(|v| vec![v.1]).collect();
            let r: Vec<Vec<f64>> = vals.iter().map(|v| vec![v.0]).collect();
            let es: Vec<Vec<f64>> = est.iter().map(|v| vec![s * v[0]]).collect();
            let rs: Vec<Vec<f64>> = r.iter().map(|v| vec![s * v[0]]).collect();
            let a = relative_l2_values(&est, &r, &w).unwrap();
            let b = relative_l2_values(&es, &rs, &w).unwrap();
            prop_assert!((a - b).abs() <= 1e-14 * a.max(1.0));
        }
    }
}
