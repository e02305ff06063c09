//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub history: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_trials: usize,
    pub grad_tol: f64,
    pub rel_decrease_tol: f64,
    pub curvature_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            history: 50,
            c1: 1e-4,
            c2: 0.9,
            max_trials: 50,
            grad_tol: 1e-8,
            rel_decrease_tol: 1e-12,
            curvature_tol: 1e-12,
        }
    }
}

/// Stored curvature pairs `(s, y)`; every pair has
/// `s^T y > curvature_tol * |s| |y| > 0`.
#[derive(Clone, Debug, Default)]
pub struct LbfgsState {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl LbfgsState {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Returns whether the pair was stored. The curvature test is scale
    /// free: `s^T y > curvature_tol * |s| |y|`.
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>, opts: &LbfgsOptions) -> bool {
        let sy = dot(&s, &y);
        let scale = (dot(&s, &s) * dot(&y, &y)).sqrt();
        if !(sy > opts.curvature_tol * scale) || sy == 0.0 {
            return false;
        }
        if self.pairs.len() == opts.history {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// Two-loop recursion: `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alpha = vec![0.0; self.pairs.len()];
        for (k, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &q);
            axpy(-alpha[k], y, &mut q);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for (k, (s, y, rho)) in self.pairs.iter().enumerate() {
            let beta = rho * dot(y, &q);
            axpy(alpha[k] - beta, s, &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbfgsStop {
    GradientTolerance,
    RelativeDecrease,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: LbfgsStop,
    /// Set when the line search failed and the best iterate was returned.
    pub warning: bool,
    /// Objective after every accepted step.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Probe {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dg: f64,
}

/// Minimizer of the cubic interpolating `(a, fa, da)` and `(b, fb, db)`,
/// safeguarded into the interior of the bracket.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mid = 0.5 * (lo + hi);
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

/// Strong-Wolfe line search along `p` from `x` (Nocedal and Wright,
/// Algorithms 3.5 and 3.6). Returns `None` after `max_trials` evaluations.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    fun: &mut F,
    x: &[f64],
    f0: f64,
    dg0: f64,
    p: &[f64],
    alpha0: f64,
    opts: &LbfgsOptions,
    evals: &mut usize,
) -> Result<Option<Probe>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut trials = 0;
    let mut eval = |alpha: f64, trials: &mut usize| -> Result<Probe> {
        *trials += 1;
        *evals += 1;
        let xt: Vec<f64> = x.iter().zip(p).map(|(x, p)| x + alpha * p).collect();
        let (f, g) = fun(&xt)?;
        let dg = dot(&g, p);
        Ok(Probe { alpha, f, g, dg })
    };
    let armijo = |pr: &Probe| pr.f.is_finite() && pr.f <= f0 + opts.c1 * pr.alpha * dg0;
    let curvature = |pr: &Probe| pr.dg.abs() <= -opts.c2 * dg0;

    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        dg: dg0,
    };
    let mut alpha = alpha0;
    let (mut lo, mut hi);
    loop {
        if trials >= opts.max_trials {
            return Ok(None);
        }
        let cur = eval(alpha, &mut trials)?;
        if !armijo(&cur) || (prev.alpha > 0.0 && cur.f >= prev.f) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Ok(Some(cur));
        }
        if cur.dg >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        alpha = 2.0 * cur.alpha;
        prev = cur;
    }
    // zoom: lo satisfies Armijo with the lowest value seen so far
    while trials < opts.max_trials {
        let t = if hi.f.is_finite() {
            cubic_min(lo.alpha, lo.f, lo.dg, hi.alpha, hi.f, hi.dg)
        } else {
            0.5 * (lo.alpha + hi.alpha)
        };
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1e-16) {
            break;
        }
        let cur = eval(t, &mut trials)?;
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Ok(Some(cur));
            }
            if cur.dg * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    Ok(None)
}

/// Minimizes `fun` from `x0` for at most `max_iters` iterations.
pub fn lbfgs_run<F>(x0: &[f64], fun: F, opts: &LbfgsOptions, max_iters: usize) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    lbfgs_run_with(x0, fun, opts, max_iters, |_, _| {})
}

/// As [`lbfgs_run`], calling `on_step(iteration, f)` after every accepted
/// step. The accepted point is always the most recent evaluation of `fun`.
pub fn lbfgs_run_with<F, S>(
    x0: &[f64],
    mut fun: F,
    opts: &LbfgsOptions,
    max_iters: usize,
    mut on_step: S,
) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    S: FnMut(usize, f64),
{
    let mut x = x0.to_vec();
    let (mut f, mut g) = fun(&x)?;
    let mut evaluations = 1;
    let mut state = LbfgsState::default();
    let mut trace = Vec::new();
    let mut stop = LbfgsStop::MaxIterations;
    let mut warning = false;
    let mut iterations = 0;
    let mut use_history = false;
    while iterations < max_iters {
        if inf_norm(&g) < opts.grad_tol {
            stop = LbfgsStop::GradientTolerance;
            break;
        }
        let mut steepest = !use_history || state.is_empty();
        let mut p = if steepest { g.iter().map(|v| -v).collect() } else { state.direction(&g) };
        let mut dg = dot(&p, &g);
        if !(dg < 0.0) {
            p = g.iter().map(|v| -v).collect();
            dg = -dot(&g, &g);
            state = LbfgsState::default();
            steepest = true;
        }
        let alpha0 = if steepest { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };
        let Some(probe) = line_search(&mut fun, &x, f, dg, &p, alpha0, opts, &mut evaluations)? else {
            if steepest {
                warning = true;
                stop = LbfgsStop::LineSearchFailure;
                log::warn!("L-BFGS line search failed after {} trials", opts.max_trials);
                break;
            }
            // retry once from steepest descent
            state = LbfgsState::default();
            use_history = false;
            continue;
        };
        iterations += 1;
        let s: Vec<f64> = p.iter().map(|v| probe.alpha * v).collect();
        let y: Vec<f64> = probe.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        axpy(1.0, &s, &mut x);
        let f_old = f;
        f = probe.f;
        g = probe.g;
        trace.push(f);
        on_step(iterations, f);
        // a rejected pair sends the next step down the steepest descent direction
        use_history = state.push(s, y, opts);
        if (f_old - f).abs() <= opts.rel_decrease_tol * f_old.abs().max(f.abs()).max(1.0) {
            stop = LbfgsStop::RelativeDecrease;
            break;
        }
    }
    Ok(LbfgsOutcome {
        x,
        f,
        iterations,
        evaluations,
        stop,
        warning,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let out = lbfgs_run(&[-1.2, 1.0], rosenbrock, &LbfgsOptions::default(), 200).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{:?}", out);
        assert!(out.iterations <= 200);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_terminates_quickly() {
        let n = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let h: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let fun = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let g: Vec<f64> = h.iter().map(|row| dot(row, x)).collect();
            Ok((0.5 * dot(x, &g), g))
        };
        let x0: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let opts = LbfgsOptions {
            grad_tol: 1e-11,
            rel_decrease_tol: 0.0,
            ..Default::default()
        };
        let out = lbfgs_run(&x0, fun, &opts, 50).unwrap();
        let (_, g) = fun(&out.x).unwrap();
        assert!(dot(&g, &g).sqrt() < 1e-10, "{:?} after {}: {}", out.stop, out.iterations, dot(&g, &g).sqrt());
    }

    #[test]
    fn optimal_start_does_not_move() {
        let out = lbfgs_run(&[1.0, 1.0], rosenbrock, &LbfgsOptions::default(), 100).unwrap();
        assert!(out.iterations <= 1);
        assert_eq!(out.x, vec![1.0, 1.0]);
    }

    #[test]
    fn rejects_non_positive_curvature_pairs() {
        let mut st = LbfgsState::default();
        let o = LbfgsOptions::default();
        assert!(!st.push(vec![1.0, 0.0], vec![-1.0, 0.0], &o));
        assert!(st.push(vec![1.0, 0.0], vec![1.0, 0.0], &o));
        assert_eq!(st.len(), 1);
    }
}
