use std::fmt;

use super::{DesignError, DesignParams, NoiseProfile};

/// `V = sigma_bar^2(N/R) * (1/B + 1/N + rho/R)`, exact average.
pub fn variance_param(d: &DesignParams) -> Result<f64, DesignError> {
    let h = d.horizon()?;
    let (n, r, b) = (d.n as f64, d.r as f64, d.b as f64);
    Ok(d.profile.sigma_bar_sq(h) * (1.0 / b + 1.0 / n + d.rho / r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaCondition {
    /// `L * eta < 1/2`
    Smoothness,
    /// `eta <= R / (2 sqrt(2) kappa N)`
    StaleBias,
}

impl fmt::Display for EtaCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EtaCondition::Smoothness => write!(f, "L*eta < 1/2"),
            EtaCondition::StaleBias => write!(f, "eta <= R/(2*sqrt(2)*kappa*N)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtaValidity {
    Valid,
    Violated(EtaCondition),
}

pub fn eta_validity(d: &DesignParams) -> EtaValidity {
    if d.smoothness * d.eta >= 0.5 {
        return EtaValidity::Violated(EtaCondition::Smoothness);
    }
    if d.kappa > 0.0 {
        let cap = d.r as f64 / (2.0 * 2f64.sqrt() * d.kappa * d.n as f64);
        if d.eta > cap {
            return EtaValidity::Violated(EtaCondition::StaleBias);
        }
    }
    EtaValidity::Valid
}

/// Supremum of admissible step sizes. The smoothness bound is strict, so
/// callers should stay below it.
pub fn eta_cap(d: &DesignParams) -> f64 {
    let smooth = 1.0 / (2.0 * d.smoothness);
    if d.kappa > 0.0 {
        smooth.min(d.r as f64 / (2.0 * 2f64.sqrt() * d.kappa * d.n as f64))
    } else {
        smooth
    }
}

/// `12 F0 / (eta T) + 8 eta (4 N^2 kappa^2 eta / R^2 + L) V`.
pub fn convergence_bound(d: &DesignParams) -> Result<f64, DesignError> {
    if let EtaValidity::Violated(c) = eta_validity(d) {
        return Err(DesignError::InvalidEta(c));
    }
    let v = variance_param(d)?;
    let (n, r) = (d.n as f64, d.r as f64);
    let drift = 4.0 * n * n * d.kappa * d.kappa * d.eta / (r * r);
    Ok(12.0 * d.f0 / (d.eta * d.steps as f64) + 8.0 * d.eta * (drift + d.smoothness) * v)
}

/// `J(x, y) = sigma_bar^2(x) (1 + y/mu) (1/y + 1/x + rho)`.
pub fn objective_j(x: f64, y: f64, profile: &NoiseProfile, mu: f64, rho: f64) -> f64 {
    profile.sigma_bar_sq_continuous(x) * (1.0 + y / mu) * (1.0 / y + 1.0 / x + rho)
}

/// `J` minimized over `y`: `sigma_bar^2(x) (1/sqrt(mu) + sqrt(rho + 1/x))^2`.
pub fn objective_i(x: f64, profile: &NoiseProfile, mu: f64, rho: f64) -> f64 {
    let s = 1.0 / mu.sqrt() + (rho + 1.0 / x).sqrt();
    profile.sigma_bar_sq_continuous(x) * s * s
}

/// Replay ratio minimizing `J` at staleness horizon `x`.
pub fn y_from_x(x: f64, mu: f64, rho: f64) -> f64 {
    (mu / (rho + 1.0 / x)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalEta {
    pub eta: f64,
    /// `a / eta + b * eta` at the returned step size.
    pub value: f64,
    /// Set when the noise term vanishes and the validity cap was returned.
    pub unbounded: bool,
}

/// Minimizes `a/eta + b*eta` with `a = 12 F0 (B + mu R) / C` and
/// `b = 8 L sigma_bar^2(N/R) (1/B + 1/N + rho/R)` for a compute budget `C`.
pub fn optimal_eta(d: &DesignParams, budget: f64) -> Result<OptimalEta, DesignError> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(DesignError::InvalidParam {
            name: "C",
            message: format!("budget must be positive, got {budget}"),
        });
    }
    let (b_sz, r) = (d.b as f64, d.r as f64);
    let a = 12.0 * d.f0 * (b_sz + d.mu * r) / budget;
    let b = 8.0 * d.smoothness * variance_param(d)?;
    if b <= 0.0 {
        log::warn!("noise term vanishes; returning the step-size validity cap");
        let eta = eta_cap(d);
        return Ok(OptimalEta {
            eta,
            value: a / eta,
            unbounded: true,
        });
    }
    let eta = (a / b).sqrt();
    Ok(OptimalEta {
        eta,
        value: a / eta + b * eta,
        unbounded: false,
    })
}
