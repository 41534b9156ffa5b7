//! Per-update compute accounting with and without a replay buffer.
//!
//! All costs are in abstract units; `step_cost` is the cost `C` of one
//! trainer update and a rollout batch of the same size costs `C * mu`.

use thiserror::Error;

use crate::metrics::nearest_rank;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComputeError {
    #[error("invalid compute parameters: {0}")]
    InvalidParams(String),
    #[error("cannot estimate mu: {0} is zero")]
    ZeroCount(&'static str),
    #[error("no runs to aggregate")]
    NoRuns,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeParams {
    pub workers: u32,
    pub trainers: u32,
    pub mu: f64,
    pub step_cost: f64,
}

impl ComputeParams {
    pub fn new(workers: u32, trainers: u32, mu: f64) -> Result<Self, ComputeError> {
        let p = Self {
            workers,
            trainers,
            mu,
            step_cost: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_step_cost(mut self, step_cost: f64) -> Self {
        self.step_cost = step_cost;
        self
    }

    pub fn validate(&self) -> Result<(), ComputeError> {
        if self.trainers == 0 {
            return Err(ComputeError::InvalidParams(
                "trainer count must be at least 1".into(),
            ));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(ComputeError::InvalidParams(format!(
                "mu must be finite and non-negative, got {}",
                self.mu
            )));
        }
        if !(self.step_cost > 0.0 && self.step_cost.is_finite()) {
            return Err(ComputeError::InvalidParams(format!(
                "step cost must be positive, got {}",
                self.step_cost
            )));
        }
        Ok(())
    }

    pub fn worker_trainer_ratio(&self) -> f64 {
        f64::from(self.workers) / f64::from(self.trainers)
    }
}

pub fn cost_without_buffer(p: &ComputeParams) -> f64 {
    p.step_cost * (1.0 + p.mu)
}

pub fn cost_with_buffer(p: &ComputeParams) -> f64 {
    p.step_cost * (1.0 + p.worker_trainer_ratio())
}

/// `gamma = (1 + W/T) / (1 + mu)`.
pub fn compute_ratio(p: &ComputeParams) -> f64 {
    (1.0 + p.worker_trainer_ratio()) / (1.0 + p.mu)
}

/// Relative speed of a trainer step and a rollout batch from processed
/// counts: `(K_train / T) / (K_inf / W)`.
pub fn estimate_mu(
    k_training: u64,
    trainers: u32,
    k_inference: u64,
    workers: u32,
) -> Result<f64, ComputeError> {
    if k_inference == 0 {
        return Err(ComputeError::ZeroCount("inference count"));
    }
    if workers == 0 {
        return Err(ComputeError::ZeroCount("worker count"));
    }
    if trainers == 0 {
        return Err(ComputeError::ZeroCount("trainer count"));
    }
    if k_training == 0 {
        return Err(ComputeError::ZeroCount("training count"));
    }
    Ok((k_training as f64 / f64::from(trainers)) / (k_inference as f64 / f64::from(workers)))
}

/// Median and nearest-rank interquartile range of per-run estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuEstimate {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub runs: usize,
}

pub fn aggregate_mu(estimates: &[f64]) -> Result<MuEstimate, ComputeError> {
    if estimates.is_empty() {
        return Err(ComputeError::NoRuns);
    }
    let mut sorted = estimates.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(MuEstimate {
        median: nearest_rank(&sorted, 0.5),
        q25: nearest_rank(&sorted, 0.25),
        q75: nearest_rank(&sorted, 0.75),
        runs: sorted.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(w: u32, t: u32, mu: f64) -> ComputeParams {
        ComputeParams::new(w, t, mu).unwrap()
    }

    #[test]
    fn costs() {
        assert!((cost_without_buffer(&p(1, 1, 5.28)) - (1.0 + 5.28)).abs() < 1e-12);
        assert_eq!(cost_without_buffer(&p(1, 1, 0.0)), 1.0);
        assert_eq!(cost_without_buffer(&p(1, 1, 3.0).with_step_cost(2.0)), 8.0);
        assert_eq!(cost_with_buffer(&p(6, 2, 1.0)), 4.0);
        assert_eq!(cost_with_buffer(&p(0, 3, 1.0)), 1.0);
        assert!((cost_with_buffer(&p(5, 3, 1.0)) - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_values() {
        assert!((compute_ratio(&p(5, 3, 5.28)) - (8.0 / 3.0) / (1.0 + 5.28)).abs() < 1e-12);
        assert!((compute_ratio(&p(4, 4, 6.84)) - 0.26).abs() <= 0.005);
        assert!((compute_ratio(&p(6, 2, 3.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mu_estimates() {
        assert_eq!(estimate_mu(100, 2, 50, 5).unwrap(), 5.0);
        assert_eq!(estimate_mu(40, 3, 40, 3).unwrap(), 1.0);
        assert_eq!(
            estimate_mu(40, 3, 0, 3),
            Err(ComputeError::ZeroCount("inference count"))
        );
        assert_eq!(
            estimate_mu(40, 3, 4, 0),
            Err(ComputeError::ZeroCount("worker count"))
        );
    }

    #[test]
    fn aggregate() {
        let e = aggregate_mu(&[3.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!((e.median, e.q25, e.q75), (2.0, 1.0, 3.0));
        assert_eq!(aggregate_mu(&[]), Err(ComputeError::NoRuns));
    }

    proptest! {
        #[test]
        fn ratio_monotone(w in 0u32..20, t in 1u32..8, mu in 0.01f64..30.0) {
            let base = compute_ratio(&p(w, t, mu));
            prop_assert!(compute_ratio(&p(w + 1, t, mu)) > base);
            prop_assert!(compute_ratio(&p(w, t, mu * 1.1)) < base);
        }

        #[test]
        fn mu_scale_invariant(ktr in 1u64..1000, kinf in 1u64..1000, w in 1u32..10, t in 1u32..10, k in 1u64..50) {
            let a = estimate_mu(ktr, t, kinf, w).unwrap();
            let b = estimate_mu(ktr * k, t, kinf * k, w).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }

        #[test]
        fn equal_costs_at_balance(t in 1u32..8, k in 0u32..8) {
            let w = t * k;
            let q = p(w, t, f64::from(k));
            prop_assert_eq!(cost_with_buffer(&q), cost_without_buffer(&q));
        }
    }
}
