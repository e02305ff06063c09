//! Loss assembly, optimizers and the multi-restart training driver.

mod adam;
mod driver;
mod lbfgs;
mod loss;

use serde::{Deserialize, Serialize};

pub use adam::AdamState;
pub use driver::{train, LogRow, RestartSummary, TrainOutcome};
pub use lbfgs::{lbfgs_run, lbfgs_run_with, LbfgsOptions, LbfgsOutcome, LbfgsState, LbfgsStop};
pub use loss::{LossParts, Problem};

/// Loss weights. `lambda_r` stays 1; `lambda_d` follows the moving average
/// of the gradient-magnitude ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct LossState {
    pub lambda_r: f64,
    pub lambda_d: f64,
    pub rate: f64,
    pub period: usize,
    /// `(epoch, lambda_d)` after each update.
    pub history: Vec<(usize, f64)>,
}

impl LossState {
    pub fn new(lambda_d: f64, rate: f64, period: usize) -> Self {
        LossState {
            lambda_r: 1.0,
            lambda_d,
            rate,
            period,
            history: Vec::new(),
        }
    }

    /// `lambda_hat = max |grad_r| / mean |grad_d|`, then
    /// `lambda_d <- (1 - rate) lambda_d + rate lambda_hat`. A vanishing data
    /// gradient keeps `lambda_d`.
    pub fn update_adaptive_weights(&mut self, epoch: usize, grad_r: &[f64], grad_d: &[f64]) {
        let max_r = grad_r.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mean_d = grad_d.iter().map(|g| g.abs()).sum::<f64>() / grad_d.len().max(1) as f64;
        if mean_d == 0.0 || !mean_d.is_finite() || !max_r.is_finite() {
            return;
        }
        let hat = max_r / mean_d;
        self.lambda_d = (1.0 - self.rate) * self.lambda_d + self.rate * hat;
        self.history.push((epoch, self.lambda_d));
    }
}

/// Optimizer schedule and restart settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lbfgs_iters: usize,
    /// Number of ADAM + L-BFGS rounds.
    pub cycles: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Explicit initialization seed per restart; overrides `seed`.
    pub restart_seeds: Option<Vec<u64>>,
    pub adaptive: bool,
    pub adaptive_rate: f64,
    pub adaptive_period: usize,
    pub initial_lambda_d: f64,
    pub plateau_window: usize,
    pub plateau_rel: f64,
    pub lr_floor_ratio: f64,
    /// Worker threads for restarts; 1 runs everything on the calling thread.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10_000,
            lr: 1e-3,
            batch_size: 64,
            lbfgs_iters: 2_000,
            cycles: 1,
            restarts: 5,
            seed: 0,
            restart_seeds: None,
            adaptive: true,
            adaptive_rate: 0.1,
            adaptive_period: 10,
            initial_lambda_d: 1.0,
            plateau_window: 2_000,
            plateau_rel: 1e-3,
            lr_floor_ratio: 0.01,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(m.to_string()));
        if self.restarts == 0 && self.restart_seeds.as_ref().is_none_or(|s| s.is_empty()) {
            return bad("at least one restart is required");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.cycles == 0 {
            return bad("cycles must be at least 1");
        }
        if self.adaptive && (self.adaptive_period == 0 || !(0.0..=1.0).contains(&self.adaptive_rate)) {
            return bad("adaptive weights need a positive period and a rate in [0, 1]");
        }
        if !(self.initial_lambda_d > 0.0) {
            return bad("initial data weight must be positive");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        Ok(())
    }

    /// Initialization seed of every restart.
    pub fn seeds(&self) -> Vec<u64> {
        match &self.restart_seeds {
            Some(s) if !s.is_empty() => s.clone(),
            _ => (0..self.restarts as u64)
                .map(|r| self.seed.wrapping_add(r.wrapping_mul(0x0100_0000_01b3)))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_rule_examples() {
        let mut s = LossState::new(1.0, 0.1, 10);
        s.update_adaptive_weights(10, &[0.5, -0.5], &[0.5, -0.5]);
        assert!((s.lambda_d - 1.0).abs() < 1e-15);

        let mut s = LossState::new(1.0, 0.1, 10);
        s.update_adaptive_weights(10, &[1.0, -10.0, 3.0], &[0.1, -0.1, 0.1]);
        assert!((s.lambda_d - 10.9).abs() < 1e-12, "{}", s.lambda_d);

        let mut s = LossState::new(2.0, 0.1, 10);
        s.update_adaptive_weights(10, &[1.0], &[0.0]);
        assert_eq!(s.lambda_d, 2.0);
        assert!(s.history.is_empty());
    }

    #[test]
    fn restart_seeds() {
        let c = TrainConfig {
            restarts: 3,
            seed: 7,
            ..Default::default()
        };
        let s = c.seeds();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0], 7);
        assert_ne!(s[1], s[2]);
        let c = TrainConfig {
            restart_seeds: Some(vec![4, 4]),
            ..c
        };
        assert_eq!(c.seeds(), vec![4, 4]);
    }
}
