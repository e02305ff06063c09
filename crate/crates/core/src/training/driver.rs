//! Restarted ADAM + L-BFGS training.

use std::cell::Cell;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lbfgs_run_with, AdamState, LbfgsOptions, LossState, Problem, TrainConfig};
use crate::error::{Error, Result};
use crate::network::PinnModel;

const SHUFFLE_STREAM: u64 = 0x5851_f42d_4c95_7f2d;

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub restart: usize,
    pub phase: String,
    pub epoch: usize,
    pub total: f64,
    pub l_r: f64,
    pub l_d: f64,
    pub lambda_d: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub l_r: f64,
    pub l_d: f64,
    pub lambda_d: f64,
    /// Reason the restart was abandoned, if it was.
    pub diverged: Option<String>,
    pub lbfgs_warning: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: PinnModel,
    pub best: usize,
    pub restarts: Vec<RestartSummary>,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn best_summary(&self) -> &RestartSummary {
        &self.restarts[self.best]
    }

    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "restart,phase,epoch,total,l_r,l_d,lambda_d,lr,wall_ms").map_err(io)?;
        for r in &self.log {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.restart, r.phase, r.epoch, r.total, r.l_r, r.l_d, r.lambda_d, r.lr, r.wall_ms
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

struct RestartResult {
    theta: Vec<f64>,
    summary: RestartSummary,
    log: Vec<LogRow>,
}

/// Learning-rate halving when the best epoch loss stalls.
struct Plateau {
    best: f64,
    since: usize,
    lr0: f64,
}

impl Plateau {
    fn update(&mut self, loss: f64, lr: &mut f64, cfg: &TrainConfig) {
        if loss < self.best * (1.0 - cfg.plateau_rel) {
            self.best = loss;
            self.since = 0;
            return;
        }
        self.best = self.best.min(loss);
        self.since += 1;
        if cfg.plateau_window > 0 && self.since >= cfg.plateau_window {
            *lr = (*lr * 0.5).max(self.lr0 * cfg.lr_floor_ratio);
            self.since = 0;
        }
    }
}

fn chunk(v: &[usize], s: usize, steps: usize) -> &[usize] {
    let n = v.len();
    &v[s * n / steps..(s + 1) * n / steps]
}

fn run_restart(problem: &Problem, cfg: &TrainConfig, restart: usize, seed: u64) -> Result<RestartResult> {
    let start = Instant::now();
    let ms = || start.elapsed().as_millis() as u64;
    let mut model = problem.model.clone();
    model.initialize(seed);
    let mut theta = model.theta;
    let mut state = LossState::new(cfg.initial_lambda_d, cfg.adaptive_rate, cfg.adaptive_period);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SHUFFLE_STREAM);
    let mut perm_d = problem.all_data();
    let mut perm_r = problem.all_colloc();
    let steps = perm_d.len().max(perm_r.len()).div_ceil(cfg.batch_size).max(1);
    let mut log = Vec::new();
    let mut epoch = 0;
    let mut lr = cfg.lr;
    let mut adam = AdamState::new(theta.len(), lr);
    let mut plateau = Plateau {
        best: f64::INFINITY,
        since: 0,
        lr0: cfg.lr,
    };
    let mut lbfgs_warning = false;

    for _ in 0..cfg.cycles {
        for _ in 0..cfg.epochs {
            perm_d.shuffle(&mut rng);
            perm_r.shuffle(&mut rng);
            let (mut sum_r, mut sum_d) = (0.0, 0.0);
            let mut last = None;
            for s in 0..steps {
                let parts = problem.loss(
                    &theta,
                    state.lambda_r,
                    state.lambda_d,
                    chunk(&perm_d, s, steps),
                    chunk(&perm_r, s, steps),
                )?;
                let grad = parts.total_gradient(state.lambda_r, state.lambda_d);
                adam.lr = lr;
                adam.step(&mut theta, &grad);
                sum_r += parts.l_r;
                sum_d += parts.l_d;
                last = Some(parts);
            }
            let (l_r, l_d) = (sum_r / steps as f64, sum_d / steps as f64);
            let total = state.lambda_r * l_r + state.lambda_d * l_d;
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    at: format!("epoch {epoch} loss"),
                });
            }
            log.push(LogRow {
                restart,
                phase: "adam".into(),
                epoch,
                total,
                l_r,
                l_d,
                lambda_d: state.lambda_d,
                lr,
                wall_ms: ms(),
            });
            plateau.update(total, &mut lr, cfg);
            epoch += 1;
            if cfg.adaptive && epoch % cfg.adaptive_period == 0 {
                if let Some(p) = &last {
                    state.update_adaptive_weights(epoch, &p.grad_r, &p.grad_d);
                }
            }
        }

        if cfg.lbfgs_iters > 0 {
            let lambda_d = state.lambda_d;
            let last_parts = Cell::new((f64::NAN, f64::NAN));
            let n = theta.len();
            let fun = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
                match problem.full_loss(x, lambda_d) {
                    Ok(p) => {
                        last_parts.set((p.l_r, p.l_d));
                        Ok((p.total, p.total_gradient(1.0, lambda_d)))
                    }
                    Err(Error::NonFinite { .. }) => Ok((f64::INFINITY, vec![0.0; n])),
                    Err(e) => Err(e),
                }
            };
            let base = epoch;
            let mut rows = Vec::new();
            let out = lbfgs_run_with(&theta, fun, &LbfgsOptions::default(), cfg.lbfgs_iters, |it, f| {
                let (l_r, l_d) = last_parts.get();
                rows.push(LogRow {
                    restart,
                    phase: "lbfgs".into(),
                    epoch: base + it - 1,
                    total: f,
                    l_r,
                    l_d,
                    lambda_d,
                    lr: 0.0,
                    wall_ms: ms(),
                });
            })?;
            if !out.f.is_finite() {
                return Err(Error::NonFinite {
                    at: "L-BFGS start".into(),
                });
            }
            epoch += out.iterations;
            log.extend(rows);
            lbfgs_warning |= out.warning;
            theta = out.x;
        }
    }

    let fin = problem.full_loss(&theta, state.lambda_d)?;
    Ok(RestartResult {
        theta,
        summary: RestartSummary {
            restart,
            seed,
            final_loss: fin.total,
            l_r: fin.l_r,
            l_d: fin.l_d,
            lambda_d: state.lambda_d,
            diverged: None,
            lbfgs_warning,
        },
        log,
    })
}

/// Trains one model per restart seed and keeps the one with the lowest
/// final full-batch loss.
pub fn train(problem: &Problem, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let job = |(r, &seed): (usize, &u64)| -> Result<RestartResult> {
        match run_restart(problem, cfg, r, seed) {
            Ok(res) => Ok(res),
            Err(Error::NonFinite { at }) => {
                log::warn!("restart {r} (seed {seed}) diverged: {at}");
                Ok(RestartResult {
                    theta: Vec::new(),
                    summary: RestartSummary {
                        restart: r,
                        seed,
                        final_loss: f64::INFINITY,
                        l_r: f64::NAN,
                        l_d: f64::NAN,
                        lambda_d: f64::NAN,
                        diverged: Some(at),
                        lbfgs_warning: false,
                    },
                    log: Vec::new(),
                })
            }
            Err(e) => Err(e),
        }
    };
    let results: Vec<RestartResult> = if cfg.threads <= 1 || seeds.len() == 1 {
        seeds.iter().enumerate().map(job).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Run(format!("thread pool: {e}")))?;
        pool.install(|| seeds.par_iter().enumerate().map(job).collect::<Result<_>>())?
    };
    let best = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.summary.diverged.is_none() && r.summary.final_loss.is_finite())
        .min_by(|a, b| a.1.summary.final_loss.total_cmp(&b.1.summary.final_loss))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Run("all restarts diverged".into()))?;
    let mut model = problem.model.clone();
    model.theta = results[best].theta.clone();
    let mut log = Vec::new();
    let mut restarts = Vec::new();
    for r in results {
        log.extend(r.log);
        restarts.push(r.summary);
    }
    Ok(TrainOutcome {
        model,
        best,
        restarts,
        log,
    })
}
