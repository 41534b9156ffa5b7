//! Convergence bound, design objectives and optimal buffer ratios for
//! buffered SGD.

mod optimize;
mod profile;
mod theory;

pub use optimize::{
    k_curve, objective_k, optimal_design_numeric, optimal_design_power_law,
    power_law_x_star_explicit, DesignMethod, DesignSolution, GRID_MAX, GRID_MIN, GRID_POINTS,
};
pub use profile::NoiseProfile;
pub use theory::{
    convergence_bound, eta_cap, eta_validity, objective_i, objective_j, optimal_eta,
    variance_param, y_from_x, EtaCondition, EtaValidity, OptimalEta,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("R = {r} does not divide N = {n}")]
    NotDivisible { n: u64, r: u64 },
    #[error("step size violates {0}")]
    InvalidEta(EtaCondition),
    #[error("invalid parameter {name}: {message}")]
    InvalidParam { name: &'static str, message: String },
    #[error("power-law exponent {0} must lie in (0, 1/2)")]
    AlphaOutOfRange(f64),
    #[error("objective is not finite anywhere on the search grid")]
    NonFinite,
}

/// Problem constants and the buffer design `(N, R, B, eta, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignParams {
    pub mu: f64,
    pub rho: f64,
    pub kappa: f64,
    pub smoothness: f64,
    pub f0: f64,
    pub profile: NoiseProfile,
    pub n: u64,
    pub r: u64,
    pub b: u64,
    pub eta: f64,
    pub steps: u64,
}

impl DesignParams {
    pub fn validate(&self) -> Result<(), DesignError> {
        let bad = |name, message: String| Err(DesignError::InvalidParam { name, message });
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad("mu", format!("must be positive, got {}", self.mu));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad("rho", format!("must lie in [0, 1], got {}", self.rho));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad("kappa", format!("must be non-negative, got {}", self.kappa));
        }
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return bad("L", format!("must be positive, got {}", self.smoothness));
        }
        if !(self.f0 >= 0.0 && self.f0.is_finite()) {
            return bad("F0", format!("must be non-negative, got {}", self.f0));
        }
        if self.n == 0 || self.r == 0 || self.b == 0 {
            return bad("N/R/B", "must be positive".into());
        }
        if self.r > self.n {
            return bad("R", format!("{} exceeds N = {}", self.r, self.n));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("must be positive, got {}", self.eta));
        }
        if self.steps == 0 {
            return bad("T", "must be positive".into());
        }
        if let Err(message) = self.profile.validate() {
            return bad("profile", message);
        }
        Ok(())
    }

    /// Staleness horizon `N / R`, when integral.
    pub fn horizon(&self) -> Result<u64, DesignError> {
        if self.r == 0 || !self.n.is_multiple_of(self.r) {
            return Err(DesignError::NotDivisible {
                n: self.n,
                r: self.r,
            });
        }
        Ok(self.n / self.r)
    }
}
