use super::theory::{objective_i, y_from_x};
use super::{DesignError, NoiseProfile};

pub const GRID_MIN: f64 = 1e-3;
pub const GRID_MAX: f64 = 1e6;
pub const GRID_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignMethod {
    ClosedForm,
    GridRefine,
}

/// Optimal staleness horizon `x* = N/R` and replay ratio `y* = B/R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSolution {
    pub x_star: f64,
    pub y_star: f64,
    pub objective_value: f64,
    pub method: DesignMethod,
    /// The minimizer sits on the edge of the search interval.
    pub boundary: bool,
}

/// Minimizes `I(x)` by a log-spaced grid scan over `[GRID_MIN, GRID_MAX]`
/// followed by golden-section refinement in `log x`.
pub fn optimal_design_numeric(
    profile: &NoiseProfile,
    mu: f64,
    rho: f64,
) -> Result<DesignSolution, DesignError> {
    check_mu_rho(mu, rho)?;
    let f = |log_x: f64| objective_i(log_x.exp(), profile, mu, rho);
    let (lo, hi) = (GRID_MIN.ln(), GRID_MAX.ln());
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;

    let mut best: Option<(usize, f64)> = None;
    for i in 0..GRID_POINTS {
        let v = f(lo + step * i as f64);
        // strict improvement keeps the leftmost of tied minima
        if v.is_finite() && best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    let (i, _) = best.ok_or(DesignError::NonFinite)?;
    let boundary = i == 0 || i == GRID_POINTS - 1;
    let log_x = if boundary {
        lo + step * i as f64
    } else {
        golden_section(&f, lo + step * (i - 1) as f64, lo + step * (i + 1) as f64)
    };
    let x = log_x.exp();
    Ok(DesignSolution {
        x_star: x,
        y_star: y_from_x(x, mu, rho),
        objective_value: objective_i(x, profile, mu, rho),
        method: DesignMethod::GridRefine,
        boundary,
    })
}

fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

fn check_mu_rho(mu: f64, rho: f64) -> Result<(), DesignError> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(DesignError::InvalidParam {
            name: "mu",
            message: format!("must be positive, got {mu}"),
        });
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(DesignError::InvalidParam {
            name: "rho",
            message: format!("must lie in [0, 1], got {rho}"),
        });
    }
    Ok(())
}

/// Closed-form optimum for `sigma(s) = (s / tau)^alpha`.
///
/// `x*` is evaluated in a rationalized form that has no removable
/// singularity at `rho = 0` or `rho = 1/mu`; `y*` likewise.
pub fn optimal_design_power_law(
    alpha: f64,
    mu: f64,
    rho: f64,
) -> Result<DesignSolution, DesignError> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(DesignError::AlphaOutOfRange(alpha));
    }
    check_mu_rho(mu, rho)?;
    let c = 1.0 - 2.0 * alpha;
    let root = (alpha * alpha / (mu * mu) + rho * c / mu).sqrt();
    let x = c * c / (2.0 * alpha * (root + alpha / mu + rho * c));
    let y = if rho == 0.0 {
        mu * c / (2.0 * alpha)
    } else {
        // (-alpha + sqrt(alpha^2 + mu rho c)) / rho, rationalized
        mu * c / (alpha + (alpha * alpha + mu * rho * c).sqrt())
    };
    let profile = NoiseProfile::PowerLaw { alpha, tau: 1.0 };
    Ok(DesignSolution {
        x_star: x,
        y_star: y,
        objective_value: objective_i(x, &profile, mu, rho),
        method: DesignMethod::ClosedForm,
        boundary: false,
    })
}

/// The unrationalized quadratic-root expression for `x*`, with the two
/// degenerate cases solved separately.
pub fn power_law_x_star_explicit(alpha: f64, mu: f64, rho: f64) -> Result<f64, DesignError> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(DesignError::AlphaOutOfRange(alpha));
    }
    check_mu_rho(mu, rho)?;
    let c = 1.0 - 2.0 * alpha;
    if rho == 0.0 {
        let y = mu * c / (2.0 * alpha);
        return Ok(y * y / mu);
    }
    let lead = 2.0 * alpha * rho * (1.0 / mu - rho);
    if lead.abs() < 1e-14 {
        // leading coefficient vanishes: 2 (alpha/mu + rho c) x = c^2 / (2 alpha)
        return Ok(c * c / (4.0 * alpha * (alpha / mu + rho * c)));
    }
    Ok((-(alpha / mu + rho * c) + (alpha * alpha / (mu * mu) + rho * c / mu).sqrt()) / lead)
}

/// `K(x) = x^alpha (1/sqrt(mu) + sqrt(rho + 1/x))`.
pub fn objective_k(x: f64, alpha: f64, mu: f64, rho: f64) -> f64 {
    x.powf(alpha) * (1.0 / mu.sqrt() + (rho + 1.0 / x).sqrt())
}

/// Samples of `K` at `points` log-spaced horizons in `[x_min, x_max]`.
pub fn k_curve(
    alpha: f64,
    mu: f64,
    rho: f64,
    x_min: f64,
    x_max: f64,
    points: usize,
) -> Vec<(f64, f64)> {
    let (lo, hi) = (x_min.ln(), x_max.ln());
    (0..points)
        .map(|i| {
            let t = if points > 1 {
                i as f64 / (points - 1) as f64
            } else {
                0.0
            };
            let x = (lo + t * (hi - lo)).exp();
            (x, objective_k(x, alpha, mu, rho))
        })
        .collect()
}
